"""End-to-end solver path: board case -> boundary mesh -> inductances ->
port Z-parameters -> decap-loaded IC impedance."""

from __future__ import annotations

import numpy as np

from .bem import unit_inductance_matrix
from .boardgen import BoardCase, EncodedSample, encode_board
from .circuit import (
    DecapModel,
    FrequencyGrid,
    ImpedanceCurve,
    ZMatrixSet,
    assemble_and_solve,
    attach_decaps,
    build_via_layout,
    decap_model,
)
from .geometry import discretize_boundary

DEFAULT_BOUNDARY_TARGET_MM = 5.0

# Instrumentation: number of full port Z-parameter solves performed.
Z_SOLVE_CALLS = 0


def models_for(indices) -> list[DecapModel | None]:
    """Catalog models for an assignment vector (0 = open port)."""
    return [decap_model(i) if i > 0 else None for i in indices]


def solve_board_ports(case: BoardCase, grid: FrequencyGrid | None = None,
                      target_len_mm: float = DEFAULT_BOUNDARY_TARGET_MM) -> ZMatrixSet:
    """One full BEM + nodal Z-parameter solve with every port present.

    This is the expensive step; decap scenarios reuse its output through
    `attach_decaps` without re-solving.
    """
    global Z_SOLVE_CALLS
    Z_SOLVE_CALLS += 1
    grid = grid or FrequencyGrid.default()
    mesh = discretize_boundary(case.contour, target_len_mm)
    layout, _ = build_via_layout(case.contour, case.ports)
    lam = unit_inductance_matrix(mesh, layout)
    return assemble_and_solve(case.contour, case.stackup, case.ports, lam, grid)


def solve_board_case(case: BoardCase, grid: FrequencyGrid | None = None) -> ImpedanceCurve:
    """IC impedance curve of a board case with its decap assignment attached."""
    zset = solve_board_ports(case, grid)
    return attach_decaps(zset, models_for(case.decap_indices))


def labeled_sample(case: BoardCase, zset: ZMatrixSet) -> EncodedSample:
    """Encoded sample with the dB label computed from a prior port solve."""
    curve = attach_decaps(zset, models_for(case.decap_indices))
    sample = encode_board(case)
    sample.label = np.asarray(curve.db, dtype=np.float32)
    return sample
