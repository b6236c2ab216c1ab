"""Random board case sampling and the DNN input encodings.

A board case bundles outline, mask, stackup, the 19 candidate decap
ports plus IC port, and the per-scenario decap assignment (catalog
numbers 1-10, 0 = port left open).  The encodings follow the fixed
scheme: a 3x16x16 placement array (board/IC map, top decap map, bottom
decap map) and a 1x17 stackup vector (9 layer codes then 8 gap
thicknesses in mm, zero padded).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .circuit import GROUND, POWER, Stackup, build_via_layout
from .errors import CapacityError, DegenerateGeometryError, PdnForgeError
from .geometry import (
    BOTTOM,
    GRID_SIZE,
    TOP,
    BoardMask,
    ClosedContour,
    PortSet,
    generate_random_contour,
    place_ports,
    rasterize_contour,
)

N_CANDIDATE_PORTS = 19
MAX_LAYERS = 9
STACKUP_VEC_LEN = MAX_LAYERS + (MAX_LAYERS - 1)  # 17
LAYER_CODE = {GROUND: 1, POWER: 2}

_MIN_GAP_MM = 0.1
_CASE_RETRIES = 50


@dataclass(frozen=True)
class BoardCase:
    """One fully specified physical board plus a decap assignment."""

    contour: ClosedContour
    mask: BoardMask
    stackup: Stackup
    ports: PortSet
    decap_indices: tuple[int, ...]  # catalog numbers, 0 = open port
    seed_info: str = ""

    def __post_init__(self):
        idx = tuple(int(v) for v in self.decap_indices)
        object.__setattr__(self, "decap_indices", idx)
        if len(idx) != self.ports.n_decaps:
            raise ValueError("one decap index per decap port required")
        if any(not 0 <= v <= 10 for v in idx):
            raise ValueError("decap indices must be in 0..10")


@dataclass
class EncodedSample:
    """DNN inputs (and label once the board has been solved)."""

    placement: np.ndarray           # (3, 16, 16) uint8
    stackup_vec: np.ndarray         # (17,) float64
    label: np.ndarray | None = None  # (132,) float32 dB values


def sample_stackup(rng: np.random.Generator) -> Stackup:
    """Random stackup: 4-9 layers, 1-10 mm total, interior power plane.

    Gap fractions are a symmetric Dirichlet(1) draw rescaled to the total
    thickness; draws violating the 0.1 mm minimum gap are rejected, and
    after 1000 rejections a new total thickness is drawn.
    """
    n_layers = int(rng.integers(4, MAX_LAYERS + 1))
    n_gaps = n_layers - 1
    while True:
        total = float(rng.uniform(1.0, 10.0))
        for _ in range(1000):
            gaps = rng.dirichlet(np.ones(n_gaps)) * total
            if gaps.min() >= _MIN_GAP_MM:
                power = int(rng.integers(1, n_layers - 1))
                nets = tuple(
                    POWER if i == power else GROUND for i in range(n_layers)
                )
                return Stackup(layer_nets=nets, gaps_mm=tuple(gaps)).validate()


def encode_board(case: BoardCase) -> EncodedSample:
    """Deterministic placement + stackup encoding of a board case (no label)."""
    placement = np.zeros((3, GRID_SIZE, GRID_SIZE), dtype=np.uint8)
    placement[0] = case.mask.cells
    r, c = case.ports.ic_cell
    placement[0, r, c] = 2
    for (row, col, side), number in zip(case.ports.decap_ports, case.decap_indices):
        channel = 1 if side == TOP else 2
        placement[channel, row, col] = number

    vec = np.zeros(STACKUP_VEC_LEN, dtype=np.float64)
    for i, net in enumerate(case.stackup.layer_nets):
        vec[i] = LAYER_CODE[net]
    for i, gap in enumerate(case.stackup.gaps_mm):
        vec[MAX_LAYERS + i] = gap
    return EncodedSample(placement=placement, stackup_vec=vec)


def sample_board_shell(rng: np.random.Generator) -> tuple[ClosedContour, BoardMask, Stackup, PortSet]:
    """Board geometry with the full set of 19 candidate decap ports.

    Resamples internally (bounded) when the drawn geometry cannot host the
    ports or places a via too close to the outline for the field solver.
    """
    last_err: PdnForgeError | None = None
    for _ in range(_CASE_RETRIES):
        try:
            contour = generate_random_contour(rng)
            mask = rasterize_contour(contour)
            stackup = sample_stackup(rng)
            ports = place_ports(rng, mask, N_CANDIDATE_PORTS)
            build_via_layout(contour, ports)  # clearance validation only
            return contour, mask, stackup, ports
        except (DegenerateGeometryError, CapacityError) as err:
            last_err = err
    raise DegenerateGeometryError(
        f"no usable board after {_CASE_RETRIES} attempts: {last_err}"
    )


def sample_decap_assignment(rng: np.random.Generator, n_ports: int,
                            scenario_decaps: int) -> tuple[int, ...]:
    """Populate `scenario_decaps` of `n_ports` ports with catalog numbers 1-10."""
    if not 0 <= scenario_decaps <= n_ports:
        raise ValueError(f"scenario_decaps {scenario_decaps} outside 0..{n_ports}")
    indices = np.zeros(n_ports, dtype=int)
    chosen = rng.choice(n_ports, size=scenario_decaps, replace=False)
    indices[chosen] = rng.integers(1, 11, size=scenario_decaps)
    return tuple(int(v) for v in indices)


def sample_board_case(rng: np.random.Generator, scenario_decaps: int,
                      seed_info: str = "") -> BoardCase:
    """Full random board case with `scenario_decaps` populated ports."""
    if not 0 <= scenario_decaps <= N_CANDIDATE_PORTS:
        raise ValueError(
            f"scenario_decaps must be in 0..{N_CANDIDATE_PORTS}, got {scenario_decaps}"
        )
    contour, mask, stackup, ports = sample_board_shell(rng)
    indices = sample_decap_assignment(rng, ports.n_decaps, scenario_decaps)
    return BoardCase(contour=contour, mask=mask, stackup=stackup, ports=ports,
                     decap_indices=indices, seed_info=seed_info)


# ---------------------------------------------------------------------------
# Board file (debug text) round-trip for the CLI
# ---------------------------------------------------------------------------

def case_to_json(case: BoardCase) -> str:
    doc = {
        "seed_info": case.seed_info,
        "contour_mm": case.contour.vertices.tolist(),
        "mask": case.mask.cells.tolist(),
        "layer_nets": list(case.stackup.layer_nets),
        "gaps_mm": list(case.stackup.gaps_mm),
        "ic_cell": list(case.ports.ic_cell),
        "decap_ports": [[r, c, side] for r, c, side in case.ports.decap_ports],
        "decap_indices": list(case.decap_indices),
    }
    return json.dumps(doc, indent=2)


def case_from_json(text: str) -> BoardCase:
    doc = json.loads(text)
    return BoardCase(
        contour=ClosedContour(np.asarray(doc["contour_mm"], dtype=float)),
        mask=BoardMask(np.asarray(doc["mask"], dtype=np.uint8)),
        stackup=Stackup(layer_nets=tuple(doc["layer_nets"]),
                        gaps_mm=tuple(doc["gaps_mm"])),
        ports=PortSet(ic_cell=tuple(doc["ic_cell"]),
                      decap_ports=[(r, c, s) for r, c, s in doc["decap_ports"]]),
        decap_indices=tuple(doc["decap_indices"]),
        seed_info=doc.get("seed_info", ""),
    )
