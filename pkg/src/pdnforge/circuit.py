"""Multi-layer equivalent circuit and nodal Z-parameter solve.

Every via is through-hole.  Per cavity (adjacent layer pair) each via
barrel is a branch between its nodes on the two layers, all branches of
one cavity coupled by the per-unit-thickness inductance matrix scaled by
the gap, and the parallel-plate capacitance ties the two plane nodes.
Via nodes merge into the layer's plane node wherever the via net matches
the layer net.  Ports look from a power-via node to the surface plane
node; the top plane is the voltage reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bem import DEFAULT_VIA_RADIUS_M, UnitInductanceMatrix, ViaLayout
from .errors import ContractError, NumericalFailureError
from .geometry import BOTTOM, TOP, ClosedContour, PortSet, via_pair_mm

EPS0 = 8.854e-12  # F/m
EPS_R = 4.4
GROUND = "ground"
POWER = "power"

N_FREQ_POINTS = 132
FREQ_MIN_HZ = 1.0e4
FREQ_MAX_HZ = 2.0e7

# Minimum via-to-boundary clearance accepted by the field solver.
VIA_EDGE_CLEARANCE_MM = 2.0


@dataclass(frozen=True)
class Stackup:
    """Ordered metal layers (top to bottom) and dielectric gaps between them."""

    layer_nets: tuple[str, ...]
    gaps_mm: tuple[float, ...]
    eps_r: float = EPS_R

    def __post_init__(self):
        object.__setattr__(self, "layer_nets", tuple(self.layer_nets))
        object.__setattr__(self, "gaps_mm", tuple(float(g) for g in self.gaps_mm))
        if len(self.gaps_mm) != len(self.layer_nets) - 1:
            raise ValueError("need exactly one gap per adjacent layer pair")
        if any(n not in (GROUND, POWER) for n in self.layer_nets):
            raise ValueError("layer nets must be 'ground' or 'power'")

    @property
    def n_layers(self) -> int:
        return len(self.layer_nets)

    @property
    def total_thickness_mm(self) -> float:
        return float(sum(self.gaps_mm))

    def validate(self) -> "Stackup":
        """Full sampling-contract checks (4-9 layers, interior power plane,
        0.1 mm minimum gap, 1-10 mm total)."""
        if not 4 <= self.n_layers <= 9:
            raise ValueError(f"layer count {self.n_layers} outside 4..9")
        power_idx = [i for i, n in enumerate(self.layer_nets) if n == POWER]
        if len(power_idx) != 1:
            raise ValueError("exactly one power layer required")
        if power_idx[0] in (0, self.n_layers - 1):
            raise ValueError("power layer cannot be first or last")
        if any(g < 0.1 - 1e-12 for g in self.gaps_mm):
            raise ValueError("gap below the 0.1 mm minimum")
        if not 1.0 - 1e-9 <= self.total_thickness_mm <= 10.0 + 1e-9:
            raise ValueError("total thickness outside 1..10 mm")
        return self


@dataclass(frozen=True)
class DecapModel:
    """Series-RLC decoupling capacitor model."""

    capacitance: float  # F
    esl: float          # H
    esr: float          # ohm

    def __post_init__(self):
        if min(self.capacitance, self.esl, self.esr) <= 0:
            raise ValueError("capacitance, ESL and ESR must all be positive")

    @property
    def resonance_hz(self) -> float:
        return 1.0 / (2.0 * np.pi * np.sqrt(self.esl * self.capacitance))


# Catalog of the ten decap types, indexed 1..10: (C uF, ESL nH, ESR mOhm).
_CATALOG_ROWS = (
    (0.1, 0.19, 34.7),
    (0.47, 0.18, 18.3),
    (1.0, 0.22, 15.2),
    (2.2, 0.20, 7.2),
    (4.7, 0.28, 7.1),
    (10.0, 0.26, 5.2),
    (22.0, 0.27, 4.0),
    (47.0, 0.15, 2.9),
    (220.0, 0.41, 1.9),
    (330.0, 0.46, 1.2),
)
DECAP_CATALOG = tuple(
    DecapModel(capacitance=c * 1e-6, esl=l * 1e-9, esr=r * 1e-3)
    for c, l, r in _CATALOG_ROWS
)


def decap_model(number: int) -> DecapModel:
    """Catalog entry by its 1-based decap number."""
    if not 1 <= number <= len(DECAP_CATALOG):
        raise ValueError(f"decap number {number} outside 1..{len(DECAP_CATALOG)}")
    return DECAP_CATALOG[number - 1]


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray  # Hz, ascending

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", p)
        if p.ndim != 1 or len(p) < 1 or np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise ValueError("frequencies must be positive and strictly ascending")

    @classmethod
    def default(cls) -> "FrequencyGrid":
        """The canonical 132-point log grid, 10 kHz to 20 MHz inclusive."""
        return cls(np.geomspace(FREQ_MIN_HZ, FREQ_MAX_HZ, N_FREQ_POINTS))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ZMatrixSet:
    """Symmetric P x P impedance matrices per frequency; IC port first."""

    grid: FrequencyGrid
    z: np.ndarray  # (F, P, P) complex
    max_asymmetry: float = 0.0  # worst relative asymmetry before symmetrization

    @property
    def n_ports(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class ImpedanceCurve:
    grid: FrequencyGrid
    z: np.ndarray | None  # complex ohms; None for model-predicted curves
    db: np.ndarray        # 20*log10(|z| / 1 ohm)


def curve_from_z(grid: FrequencyGrid, z: np.ndarray) -> ImpedanceCurve:
    mag = np.abs(z)
    if np.any(mag <= 0) or not np.all(np.isfinite(mag)):
        raise NumericalFailureError("impedance magnitude is zero or non-finite")
    return ImpedanceCurve(grid=grid, z=z, db=20.0 * np.log10(mag))


def decap_impedance(model: DecapModel, f) -> np.ndarray:
    """Series-RLC impedance esr + j(2 pi f esl - 1/(2 pi f C))."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    w = 2.0 * np.pi * f
    return model.esr + 1j * (w * model.esl - 1.0 / (w * model.capacitance))


def cavity_capacitance(board_area: float, gap: float) -> float:
    """Parallel-plate capacitance eps0 * eps_r * area / gap (SI units)."""
    if board_area < 1e-8:
        raise ValueError(f"board area {board_area} m^2 below the 1e-8 guard")
    if gap <= 0:
        raise ValueError("gap must be positive")
    return EPS0 * EPS_R * board_area / gap


# ---------------------------------------------------------------------------
# Port wiring: cells -> via indices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortWiring:
    """Via bookkeeping for a port set.

    Ports at the same cell (top + bottom) share the cell's through-hole
    via pair.  Vias are ordered pairwise per unique cell: even indices are
    power vias, odd are ground vias; the IC ground via (index 1) is the
    global reference.
    """

    cells: list[tuple[int, int]]             # unique port cells, IC cell first
    port_power_via: list[int]                # per port (IC first)
    port_ground_via: list[int]
    port_sides: list[str] = field(default_factory=list)  # per port


def port_via_wiring(ports: PortSet) -> PortWiring:
    cells: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    sides = [TOP] + [s for _, _, s in ports.decap_ports]
    power, ground = [], []
    for cell in ports.port_cells():
        if cell not in index:
            index[cell] = len(cells)
            cells.append(cell)
        k = index[cell]
        power.append(2 * k)
        ground.append(2 * k + 1)
    return PortWiring(cells=cells, port_power_via=power, port_ground_via=ground,
                      port_sides=sides)


def build_via_layout(contour: ClosedContour, ports: PortSet,
                     via_radius_m: float = DEFAULT_VIA_RADIUS_M) -> tuple[ViaLayout, PortWiring]:
    """Via layout (meters) for a port set, validated against the outline.

    Raises DegenerateGeometryError if any via leaves the outline or sits
    closer than the solver clearance to the board edge.
    """
    from .errors import DegenerateGeometryError

    wiring = port_via_wiring(ports)
    pos_mm = []
    for cell in wiring.cells:
        p, g = via_pair_mm(cell)
        pos_mm.extend([p, g])
    pos_mm = np.asarray(pos_mm)

    clearance = VIA_EDGE_CLEARANCE_MM
    verts = contour.vertices
    a = verts
    b = np.roll(verts, -1, axis=0)
    e = b - a
    ee = (e * e).sum(axis=1)
    for p in pos_mm:
        t = np.clip(((p - a) * e).sum(axis=1) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
        dmin = np.sqrt(((p - (a + t[:, None] * e)) ** 2).sum(axis=1).min())
        if dmin < clearance:
            raise DegenerateGeometryError(
                f"via at {p} mm is {dmin:.3f} mm from the outline "
                f"(need >= {clearance} mm)"
            )
    if not contour.contains_points(pos_mm).all():
        raise DegenerateGeometryError("via outside the board outline")

    layout = ViaLayout(
        positions=pos_mm * 1e-3,
        radii=np.full(len(pos_mm), via_radius_m),
        reference_index=1,  # IC ground via
    )
    return layout, wiring


# ---------------------------------------------------------------------------
# Nodal assembly
# ---------------------------------------------------------------------------

class _NodalSystem:
    """Frequency-independent assembly of the multi-layer network.

    Y(w) = A_ind / (j w) + j w * C_stamp over the non-grounded nodes, plus
    the port injection pattern.
    """

    def __init__(self, area_m2: float, stackup: Stackup, wiring: PortWiring,
                 lam: UnitInductanceMatrix):
        n_vias = lam.layout.n_vias
        if n_vias != 2 * len(wiring.cells):
            raise ContractError(
                f"inductance matrix covers {n_vias} vias, ports imply "
                f"{2 * len(wiring.cells)}"
            )
        nets = [POWER if v % 2 == 0 else GROUND for v in range(n_vias)]
        layers = stackup.layer_nets
        n_layers = len(layers)

        node_of = {}
        for l in range(n_layers):
            node_of[("plane", l)] = l
        next_id = n_layers
        for v in range(n_vias):
            for l in range(n_layers):
                if nets[v] == layers[l]:
                    node_of[(v, l)] = node_of[("plane", l)]
                else:
                    node_of[(v, l)] = next_id
                    next_id += 1
        self.n_nodes = next_id
        self.node_of = node_of

        gamma = np.linalg.inv(lam.full)
        A = np.zeros((self.n_nodes, self.n_nodes))
        C = np.zeros((self.n_nodes, self.n_nodes))
        for k, gap_mm in enumerate(stackup.gaps_mm):
            t = gap_mm * 1e-3
            P = np.zeros((n_vias, self.n_nodes))
            for v in range(n_vias):
                P[v, node_of[(v, k)]] += 1.0
                P[v, node_of[(v, k + 1)]] -= 1.0
            A += P.T @ (gamma / t) @ P
            ck = cavity_capacitance(area_m2, t)
            i, j = node_of[("plane", k)], node_of[("plane", k + 1)]
            C[i, i] += ck
            C[j, j] += ck
            C[i, j] -= ck
            C[j, i] -= ck

        # ports: (+ node, - node); top plane node is the ground reference
        self.ports = []
        for p, side in enumerate(wiring.port_sides):
            surf = 0 if side == TOP else n_layers - 1
            plus = node_of[(wiring.port_power_via[p], surf)]
            minus = node_of[("plane", surf)]
            self.ports.append((plus, minus))

        self.ground = node_of[("plane", 0)]
        self.keep = np.array([n for n in range(self.n_nodes) if n != self.ground])
        self.A = A[np.ix_(self.keep, self.keep)]
        self.C = C[np.ix_(self.keep, self.keep)]
        self.remap = {old: new for new, old in enumerate(self.keep)}

        self.J = np.zeros((len(self.keep), len(self.ports)))
        for p, (plus, minus) in enumerate(self.ports):
            if plus != self.ground:
                self.J[self.remap[plus], p] += 1.0
            if minus != self.ground:
                self.J[self.remap[minus], p] -= 1.0

    def solve(self, f_hz: float) -> np.ndarray:
        w = 2.0 * np.pi * f_hz
        Y = self.A / (1j * w) + 1j * w * self.C
        try:
            V = np.linalg.solve(Y, self.J)
        except np.linalg.LinAlgError:
            raise NumericalFailureError(
                "singular nodal matrix",
                condition=float(np.linalg.cond(Y)),
                frequency_hz=f_hz,
            ) from None
        P = len(self.ports)
        Z = np.zeros((P, P), dtype=complex)
        for p, (plus, minus) in enumerate(self.ports):
            vp = V[self.remap[plus]] if plus != self.ground else 0.0
            vm = V[self.remap[minus]] if minus != self.ground else 0.0
            Z[p, :] = vp - vm
        return Z


def assemble_and_solve(contour: ClosedContour, stackup: Stackup, ports: PortSet,
                       lam: UnitInductanceMatrix, grid: FrequencyGrid) -> ZMatrixSet:
    """Port Z-parameters of the multi-layer board over the frequency grid.

    The IC port comes first, decap ports follow in placement order.  The
    result is symmetrized; the worst pre-symmetrization asymmetry is kept
    as a diagnostic.
    """
    wiring = port_via_wiring(ports)
    area_m2 = contour.area_mm2 * 1e-6
    sys = _NodalSystem(area_m2, stackup, wiring, lam)

    F = len(grid)
    P = len(sys.ports)
    z = np.empty((F, P, P), dtype=complex)
    asym = 0.0
    for i, f in enumerate(grid.points):
        zi = sys.solve(float(f))
        scale = np.abs(zi).max()
        if scale > 0:
            asym = max(asym, float(np.abs(zi - zi.T).max() / scale))
        z[i] = 0.5 * (zi + zi.T)
    return ZMatrixSet(grid=grid, z=z, max_asymmetry=asym)


def attach_decaps(zset: ZMatrixSet, assignment: list[DecapModel | None]) -> ImpedanceCurve:
    """IC-port impedance after terminating decap ports with series-RLC models.

    `assignment` has one entry per decap port; None leaves the port open
    (it is simply dropped).  Populated ports are folded in by the Schur
    complement of the Z matrix per frequency.
    """
    n_decap = zset.n_ports - 1
    if len(assignment) != n_decap:
        raise ContractError(
            f"assignment covers {len(assignment)} ports, board has {n_decap}"
        )
    z = zset.z
    populated = [i for i, m in enumerate(assignment) if m is not None]
    if not populated:
        return curve_from_z(zset.grid, z[:, 0, 0].copy())

    cols = np.array([1 + i for i in populated])
    f = zset.grid.points
    zdec = np.stack([decap_impedance(assignment[i], f) for i in populated], axis=1)
    z_pp = z[:, 0, 0]
    z_pd = z[:, 0:1, cols]
    z_dp = z[:, cols, 0:1]
    z_dd = z[:, cols[:, None], cols[None, :]]
    D = len(populated)
    block = z_dd + zdec[:, :, None] * np.eye(D)[None, :, :]
    try:
        x = np.linalg.solve(block, z_dp)
    except np.linalg.LinAlgError:
        for i in range(len(f)):
            try:
                np.linalg.solve(block[i], z_dp[i])
            except np.linalg.LinAlgError:
                raise NumericalFailureError(
                    "singular decap reduction block",
                    frequency_hz=float(f[i]),
                ) from None
        raise
    z_ic = z_pp - (z_pd @ x)[:, 0, 0]
    return curve_from_z(zset.grid, z_ic)
