"""Touchstone v1 Z-parameter export and plot-ready CSV curves.

The writer emits real/imaginary pairs in Hz with the option line
``# Hz Z RI R 50``.  Each matrix row starts on a new line with at most
four complex pairs per line; a comment records the port count so the
reader can recover the matrix shape.
"""

from __future__ import annotations

import numpy as np

from .circuit import FrequencyGrid, ImpedanceCurve, ZMatrixSet
from .errors import RecordFormatError

_NUM = "{: .12e}"

OPTION_LINE = "# Hz Z RI R 50"


def format_touchstone(freqs_hz: np.ndarray, z: np.ndarray) -> str:
    """Render (F, P, P) complex Z data as Touchstone v1 text."""
    z = np.asarray(z)
    n_ports = z.shape[1]
    lines = [f"! {n_ports}-port Z-parameter data, {len(freqs_hz)} points", OPTION_LINE]
    for f, zf in zip(freqs_hz, z):
        prefix = _NUM.format(f)
        for row in zf:
            pairs = [(_NUM.format(v.real), _NUM.format(v.imag)) for v in row]
            for start in range(0, len(pairs), 4):
                chunk = pairs[start:start + 4]
                body = " ".join(f"{re} {im}" for re, im in chunk)
                lines.append(f"{prefix} {body}" if prefix else f"  {body}")
                prefix = ""
    return "\n".join(lines) + "\n"


def write_touchstone(path, zset: ZMatrixSet) -> None:
    with open(path, "w") as fh:
        fh.write(format_touchstone(zset.grid.points, zset.z))


def read_touchstone(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a file produced by `write_touchstone` back into (freqs, z)."""
    n_ports = None
    numbers: list[float] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("!"):
                parts = line[1:].split()
                if len(parts) >= 1 and parts[0].endswith("-port"):
                    n_ports = int(parts[0].split("-")[0])
                continue
            if line.startswith("#"):
                tokens = line[1:].upper().split()
                if tokens[:3] != ["HZ", "Z", "RI"]:
                    raise RecordFormatError(f"unsupported option line {line!r}")
                continue
            numbers.extend(float(tok) for tok in line.split())
    if n_ports is None:
        raise RecordFormatError("port count comment missing")
    per_block = 1 + 2 * n_ports * n_ports
    if len(numbers) % per_block:
        raise RecordFormatError("touchstone data length does not match port count")
    data = np.asarray(numbers).reshape(-1, per_block)
    freqs = data[:, 0]
    ri = data[:, 1:].reshape(-1, n_ports, n_ports, 2)
    return freqs, ri[..., 0] + 1j * ri[..., 1]


def write_curve_csv(path, curve: ImpedanceCurve) -> None:
    """CSV with header freq_hz,re_z,im_z,db at full double precision."""
    if curve.z is None:
        raise ValueError("curve has no complex data; use write_db_csv")
    with open(path, "w") as fh:
        fh.write("freq_hz,re_z,im_z,db\n")
        for f, z, db in zip(curve.grid.points, curve.z, curve.db):
            fh.write(f"{f:.17g},{z.real:.17g},{z.imag:.17g},{db:.17g}\n")


def read_curve_csv(path) -> ImpedanceCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = FrequencyGrid(data[:, 0])
    z = data[:, 1] + 1j * data[:, 2]
    return ImpedanceCurve(grid=grid, z=z, db=data[:, 3])


def write_db_csv(path, grid: FrequencyGrid, db: np.ndarray) -> None:
    """Two-column CSV for magnitude-only (predicted) curves."""
    with open(path, "w") as fh:
        fh.write("freq_hz,db\n")
        for f, v in zip(grid.points, db):
            fh.write(f"{f:.17g},{v:.17g}\n")
