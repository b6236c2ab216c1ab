"""Random board outlines, 16x16 rasterization, boundary meshing, port placement.

Coordinates are millimeters in the board plane with the origin at the
lower-left corner of the bounding square; row r of the cell grid spans
y in [r*pitch, (r+1)*pitch], column c spans x likewise.  Boundary meshes
are expressed in meters because they feed the field solver directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon

from .errors import CapacityError, DegenerateGeometryError

GRID_SIZE = 16
BOARD_SIZE_MM = 200.0
CELL_PITCH_MM = BOARD_SIZE_MM / GRID_SIZE  # 12.5 mm
VIA_SEPARATION_MM = 2.0  # power-to-ground spacing of every port pair
SPLINE_SAMPLES_PER_SPAN = 32
MIN_AREA_FRACTION = 0.01

TOP = "top"
BOTTOM = "bottom"


@dataclass(frozen=True)
class ClosedContour:
    """Simple polygon outline of a board, vertices in mm, implicitly closed."""

    vertices: np.ndarray  # (N, 2) float

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise DegenerateGeometryError(
                f"contour needs >= 3 (x, y) vertices, got shape {v.shape}"
            )
        if np.any(np.all(np.isclose(v, np.roll(v, -1, axis=0), atol=1e-12), axis=1)):
            raise DegenerateGeometryError("contour has coincident consecutive vertices")

    @property
    def area_mm2(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))

    @property
    def perimeter_mm(self) -> float:
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def is_simple(self) -> bool:
        return Polygon(self.vertices).is_valid

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Even-odd containment test; points grazing an edge count as inside."""
        return _points_in_polygon(np.asarray(points, dtype=float), self.vertices)


@dataclass(frozen=True)
class BoardMask:
    """16x16 occupancy grid; cells[r, c] == 1 marks board material."""

    cells: np.ndarray  # (16, 16) uint8
    cell_pitch: float = CELL_PITCH_MM

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=np.uint8)
        object.__setattr__(self, "cells", c)
        if c.shape != (GRID_SIZE, GRID_SIZE):
            raise DegenerateGeometryError(f"mask must be {GRID_SIZE}x{GRID_SIZE}")
        if not c.any():
            raise DegenerateGeometryError("mask has no occupied cells")

    def cell_center_mm(self, row: int, col: int) -> np.ndarray:
        return np.array(
            [(col + 0.5) * self.cell_pitch, (row + 0.5) * self.cell_pitch]
        )

    def occupied_cells(self) -> list[tuple[int, int]]:
        """Row-major list of (row, col) for every 1-cell."""
        rows, cols = np.nonzero(self.cells)
        return list(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class BoundaryMesh:
    """Closed chain of straight boundary segments, all geometry in meters."""

    starts: np.ndarray   # (S, 2)
    ends: np.ndarray     # (S, 2)
    midpoints: np.ndarray
    normals: np.ndarray  # outward unit normals
    lengths: np.ndarray  # (S,)

    @property
    def n_segments(self) -> int:
        return len(self.lengths)

    @property
    def perimeter(self) -> float:
        return float(self.lengths.sum())


@dataclass(frozen=True)
class PortSet:
    """IC cell plus decap port cells with their mounting side."""

    ic_cell: tuple[int, int]
    decap_ports: list[tuple[int, int, str]] = field(default_factory=list)

    def __post_init__(self):
        seen = {(self.ic_cell, TOP)}
        for row, col, side in self.decap_ports:
            key = ((row, col), side)
            if side not in (TOP, BOTTOM):
                raise ValueError(f"bad side {side!r}")
            if key in seen:
                raise CapacityError(f"duplicate port slot {key}")
            seen.add(key)

    @property
    def n_decaps(self) -> int:
        return len(self.decap_ports)

    def port_cells(self) -> list[tuple[int, int]]:
        """IC cell first, then decap cells in placement order."""
        return [self.ic_cell] + [(r, c) for r, c, _ in self.decap_ports]


def via_pair_mm(cell: tuple[int, int], pitch: float = CELL_PITCH_MM) -> tuple[np.ndarray, np.ndarray]:
    """(power, ground) via positions for a port cell.

    The pair is centered in the cell and oriented along +x: power via at
    center - (1, 0) mm, ground via at center + (1, 0) mm.
    """
    row, col = cell
    center = np.array([(col + 0.5) * pitch, (row + 0.5) * pitch])
    half = np.array([VIA_SEPARATION_MM / 2.0, 0.0])
    return center - half, center + half


def _points_in_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Vectorized even-odd rule; points on an edge are classified inside."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x1, y1 = verts[:, 0][None, :], verts[:, 1][None, :]
    x2 = np.roll(verts[:, 0], -1)[None, :]
    y2 = np.roll(verts[:, 1], -1)[None, :]

    # Edge-grazing check: point within tolerance of any segment.
    ex, ey = x2 - x1, y2 - y1
    seg_len2 = ex * ex + ey * ey
    t = np.clip(((px - x1) * ex + (py - y1) * ey) / np.where(seg_len2 > 0, seg_len2, 1.0), 0.0, 1.0)
    dx = px - (x1 + t * ex)
    dy = py - (y1 + t * ey)
    on_edge = ((dx * dx + dy * dy) < 1e-18).any(axis=1)

    crosses = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x1 + (py - y1) * ex / np.where(ey != 0, ey, 1.0)
    hits = crosses & (px < x_at)
    inside = (hits.sum(axis=1) % 2).astype(bool)
    return inside | on_edge


def _catmull_rom_closed(points: np.ndarray, samples_per_span: int) -> np.ndarray:
    """Periodic Catmull-Rom spline through `points`, sampled as a polygon."""
    n = len(points)
    p0 = np.roll(points, 1, axis=0)
    p1 = points
    p2 = np.roll(points, -1, axis=0)
    p3 = np.roll(points, -2, axis=0)
    t = (np.arange(samples_per_span) / samples_per_span)[None, :, None]
    a = 2.0 * p1[:, None, :]
    b = (p2 - p0)[:, None, :]
    c = (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3)[:, None, :]
    d = (-p0 + 3.0 * p1 - 3.0 * p2 + p3)[:, None, :]
    pts = 0.5 * (a + b * t + c * t**2 + d * t**3)
    return pts.reshape(n * samples_per_span, 2)


def generate_random_contour(
    rng: np.random.Generator,
    n_points: int = 8,
    bounds: float = BOARD_SIZE_MM,
) -> ClosedContour:
    """Random smooth closed outline inside a `bounds` x `bounds` square (mm).

    `n_points` anchor points are drawn uniformly, sorted by polar angle
    about their centroid, and joined by a periodic Catmull-Rom spline
    sampled at 32 points per span.  Deterministic for a given generator
    state.  Degenerate draws (self-intersecting or area below 1% of the
    square) are resampled up to 100 times.
    """
    if n_points < 3:
        raise ValueError(f"n_points must be >= 3, got {n_points}")
    for _ in range(100):
        anchors = rng.uniform(0.0, bounds, size=(n_points, 2))
        centroid = anchors.mean(axis=0)
        order = np.argsort(np.arctan2(anchors[:, 1] - centroid[1], anchors[:, 0] - centroid[0]))
        anchors = anchors[order]
        verts = _catmull_rom_closed(anchors, SPLINE_SAMPLES_PER_SPAN)
        verts = np.clip(verts, 0.0, bounds)  # spline overshoot is rare and small
        keep = ~np.all(np.isclose(verts, np.roll(verts, 1, axis=0), atol=1e-9), axis=1)
        verts = verts[keep]
        if len(verts) < 3:
            continue
        try:
            contour = ClosedContour(verts)
        except DegenerateGeometryError:
            continue
        if contour.area_mm2 < MIN_AREA_FRACTION * bounds * bounds:
            continue
        if not contour.is_simple():
            continue
        return contour
    raise DegenerateGeometryError(
        f"no valid contour after 100 attempts (n_points={n_points}, bounds={bounds})"
    )


def contour_occupancy(contour: ClosedContour) -> np.ndarray:
    """Raw 16x16 {0,1} grid: 1 where the cell center falls inside the contour."""
    idx = np.arange(GRID_SIZE) + 0.5
    cx, cy = np.meshgrid(idx * CELL_PITCH_MM, idx * CELL_PITCH_MM, indexing="xy")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    # row index follows y, column index follows x
    inside = contour.contains_points(centers).reshape(GRID_SIZE, GRID_SIZE)
    return inside.astype(np.uint8)


def rasterize_contour(contour: ClosedContour) -> BoardMask:
    """Rasterize to the 16x16 grid, keeping the largest 4-connected component."""
    occ = contour_occupancy(contour)
    if not occ.any():
        raise DegenerateGeometryError("no cell center lies inside the contour")
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, count = ndimage.label(occ, structure=structure)
    if count > 1:
        sizes = ndimage.sum_labels(occ, labels, index=np.arange(1, count + 1))
        occ = (labels == (1 + int(np.argmax(sizes)))).astype(np.uint8)
    return BoardMask(occ)


def discretize_boundary(contour: ClosedContour, target_len: float) -> BoundaryMesh:
    """Split every polygon edge into ceil(len/target_len) equal segments.

    `target_len` is in mm; the returned mesh is in meters with outward
    unit normals.  Segment lengths never exceed the target but edges
    shorter than it are kept whole.
    """
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    verts = contour.vertices
    # force counter-clockwise orientation so (dy, -dx) points outward
    x, y = verts[:, 0], verts[:, 1]
    signed_area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if signed_area < 0:
        verts = verts[::-1]

    starts, ends = [], []
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        edge_len = float(np.hypot(*(b - a)))
        pieces = max(1, int(np.ceil(edge_len / target_len)))
        t = np.linspace(0.0, 1.0, pieces + 1)[:, None]
        pts = a[None, :] * (1 - t) + b[None, :] * t
        starts.append(pts[:-1])
        ends.append(pts[1:])
    starts = np.vstack(starts) * 1e-3
    ends = np.vstack(ends) * 1e-3

    mids = 0.5 * (starts + ends)
    d = ends - starts
    lengths = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    return BoundaryMesh(starts=starts, ends=ends, midpoints=mids, normals=normals, lengths=lengths)


def place_ports(rng: np.random.Generator, mask: BoardMask, n_decaps: int) -> PortSet:
    """Place the IC on a random top-side cell and `n_decaps` decap ports.

    Each decap occupies a distinct unoccupied (cell, side) slot drawn
    uniformly; the IC's own top slot is excluded.  Raises CapacityError
    when the mask cannot host n_decaps + 1 slots.
    """
    if not 0 <= n_decaps <= 19:
        raise ValueError(f"n_decaps must be in [0, 19], got {n_decaps}")
    cells = mask.occupied_cells()
    if 2 * len(cells) < n_decaps + 1:
        raise CapacityError(
            f"{len(cells)} cells provide {2 * len(cells)} slots, "
            f"need {n_decaps + 1}"
        )
    ic_cell = cells[int(rng.integers(len(cells)))]
    slots = [(r, c, side) for (r, c) in cells for side in (TOP, BOTTOM)]
    slots.remove((ic_cell[0], ic_cell[1], TOP))
    chosen = []
    for _ in range(n_decaps):
        k = int(rng.integers(len(slots)))
        chosen.append(slots.pop(k))
    return PortSet(ic_cell=ic_cell, decap_ports=chosen)
