"""Quasi-static via inductance extraction on an arbitrary plane shape.

The plane pair is modeled as a 2D magnetostatic problem: a unit vertical
current at a via acts as a log-line source, the open board edge is a
magnetic wall (zero normal derivative), and the return current is spread
uniformly over the plane area, which is what the displacement current
does below the first cavity resonance.  Only the boundary is discretized:
a piecewise-constant source layer on the edge segments corrects the shape
difference from the uniform-return free-field term.

All lengths here are meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateGeometryError, NumericalFailureError
from .geometry import BoundaryMesh, _points_in_polygon

MU0 = 4.0e-7 * np.pi  # H/m
DEFAULT_VIA_RADIUS_M = 0.25e-3

# 4-point Gauss-Legendre rule on [-1, 1], used for the collocation integrals
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)

_COND_LIMIT = 1e13


@dataclass(frozen=True)
class ViaLayout:
    """Vertical via positions (m) on the plane, with one gauge reference via."""

    positions: np.ndarray  # (N, 2)
    radii: np.ndarray      # (N,)
    reference_index: int

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        rad = np.atleast_1d(np.asarray(self.radii, dtype=float))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radii", rad)
        n = len(pos)
        if rad.shape != (n,):
            raise ValueError("radii must match positions")
        if np.any(rad <= 0):
            raise ValueError("via radii must be positive")
        if not 0 <= self.reference_index < n:
            raise ValueError("reference_index out of range")
        if n > 1:
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
            rsum = rad[:, None] + rad[None, :]
            np.fill_diagonal(d, np.inf)
            if np.any(d <= rsum):
                raise DegenerateGeometryError("vias overlap or coincide")

    @property
    def n_vias(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class UnitInductanceMatrix:
    """Per-unit-thickness inductances (H/m) for one plane shape.

    `loop` holds the (N-1)x(N-1) loop inductances of (via i, reference via)
    loops; `full` holds the NxN via inductance matrix in the uniform-return
    (mean-zero) gauge that the multi-layer circuit stamps directly.
    `loop_vias` maps loop row -> via index.
    """

    loop: np.ndarray
    full: np.ndarray
    loop_vias: np.ndarray
    layout: ViaLayout


def _segment_frames(mesh: BoundaryMesh):
    d = mesh.ends - mesh.starts
    tangents = d / mesh.lengths[:, None]
    return tangents


def _segment_log_potential(points: np.ndarray, mesh: BoundaryMesh) -> np.ndarray:
    """S[p, j] = integral over segment j of -ln|x_p - r'| ds' (closed form).

    Valid for points anywhere, including on a segment (integrable
    singularity); the segment-midpoint self value reduces to
    L*(1 - ln(L/2)).
    """
    points = np.atleast_2d(points)
    tangents = _segment_frames(mesh)
    rel = points[:, None, :] - mesh.starts[None, :, :]           # (P, S, 2)
    u = np.einsum("psk,sk->ps", rel, tangents)                    # along-segment
    dperp = np.einsum("psk,sk->ps", rel, mesh.normals)            # signed normal

    def F(w):
        r2 = w * w + dperp * dperp
        with np.errstate(divide="ignore", invalid="ignore"):
            term = 0.5 * w * np.log(r2)
            ang = dperp * np.arctan2(w * dperp, dperp * dperp)
        term = np.where(r2 > 0, term, 0.0)
        ang = np.where(np.abs(dperp) > 0, ang, 0.0)
        return term - w + ang

    return -(F(mesh.lengths[None, :] - u) - F(-u))


def _normal_kernel_matrix(mesh: BoundaryMesh) -> np.ndarray:
    """Collocation matrix K[m, j]: interior-limit normal derivative at
    midpoint m of the unit-density layer on segment j.

    Off-diagonal entries use 4-point Gauss quadrature; the self entry is
    the analytic jump of the straight segment, +pi.
    """
    tangents = _segment_frames(mesh)
    # Gauss nodes along each segment: (S, 4, 2)
    t01 = 0.5 * (_GAUSS_X + 1.0)
    nodes = mesh.starts[:, None, :] + t01[None, :, None] * (mesh.ends - mesh.starts)[:, None, :]
    w = 0.5 * _GAUSS_W * mesh.lengths[:, None]                    # (S, 4)

    diff = mesh.midpoints[:, None, None, :] - nodes[None, :, :, :]  # (M, S, 4, 2)
    r2 = np.einsum("msqk,msqk->msq", diff, diff)
    kern = -np.einsum("msqk,mk->msq", diff, mesh.normals) / r2
    K = np.einsum("msq,sq->ms", kern, w)
    np.fill_diagonal(K, np.pi)
    return K


def _polygon_area_and_quarter_moment(verts: np.ndarray) -> tuple[float, float]:
    """Area and integral of |r|^2/4 over the polygon (CCW vertices)."""
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(cross.sum())
    ix = float(np.sum((x * x + x * xn + xn * xn) * cross)) / 12.0
    iy = float(np.sum((y * y + y * yn + yn * yn) * cross)) / 12.0
    return area, 0.25 * (ix + iy)


class BoundaryOperator:
    """Factorized Neumann collocation system for one boundary mesh.

    The square system is bordered with a uniform slack column (absorbing
    the discrete compatibility defect) and the gauge row
    sum(sigma_j * len_j) = -1.
    """

    def __init__(self, mesh: BoundaryMesh):
        self.mesh = mesh
        verts = mesh.starts
        area, quarter_moment = _polygon_area_and_quarter_moment(verts)
        if area <= 0:
            raise DegenerateGeometryError("boundary mesh is not CCW or has no area")
        self.area = area
        self.quarter_moment = quarter_moment

        self.K = _normal_kernel_matrix(mesh)
        self._S_mid = _segment_log_potential(mesh.midpoints, mesh)

        n = mesh.n_segments
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = self.K
        A[:n, n] = 1.0
        A[n, :n] = mesh.lengths
        anorm = np.linalg.norm(A, 1)
        self._lu = linalg.lu_factor(A)
        rcond, _ = linalg.lapack.dgecon(self._lu[0], anorm)
        self.condition = float(1.0 / rcond) if rcond > 0 else np.inf
        if not np.isfinite(self.condition) or self.condition > _COND_LIMIT:
            raise NumericalFailureError(
                "singular boundary collocation matrix", condition=self.condition
            )

        # Uniform-return incident field at the collocation midpoints:
        # grad(phi_ret)(x) . n_m = (1/A) sum_j (n_m . n_j) S_j(x)
        nn = mesh.normals @ mesh.normals.T
        self._ret_grad_mid = (nn * self._S_mid).sum(axis=1) / self.area

    # -- potentials -------------------------------------------------------

    def return_potential(self, points: np.ndarray) -> np.ndarray:
        """Potential of the uniform area return at interior points."""
        points = np.atleast_2d(points)
        S = _segment_log_potential(points, self.mesh)
        d = np.einsum("psk,sk->ps",
                      points[:, None, :] - self.mesh.starts[None, :, :],
                      self.mesh.normals)
        return ((d * S).sum(axis=1) - self.area) / (2.0 * self.area)

    def _return_potential_midpoints(self) -> np.ndarray:
        d = np.einsum("psk,sk->ps",
                      self.mesh.midpoints[:, None, :] - self.mesh.starts[None, :, :],
                      self.mesh.normals)
        return ((d * self._S_mid).sum(axis=1) - self.area) / (2.0 * self.area)

    # -- solves -----------------------------------------------------------

    def incident_normal_field(self, sources: np.ndarray) -> np.ndarray:
        """n . grad of (log source + uniform return) at midpoints, (Q, M)."""
        sources = np.atleast_2d(sources)
        diff = self.mesh.midpoints[None, :, :] - sources[:, None, :]
        r2 = np.einsum("qmk,qmk->qm", diff, diff)
        src = -np.einsum("qmk,mk->qm", diff, self.mesh.normals) / r2
        return src + self._ret_grad_mid[None, :]

    def solve(self, sources: np.ndarray) -> np.ndarray:
        """Boundary densities for unit sources at interior points, (Q, S)."""
        sources = np.atleast_2d(sources)
        inside = _points_in_polygon(sources, self.mesh.starts)
        if not inside.all():
            raise DegenerateGeometryError("source point lies outside the boundary")
        b = self.incident_normal_field(sources)
        rhs = np.empty((self.mesh.n_segments + 1, len(sources)))
        rhs[:-1, :] = -b.T
        rhs[-1, :] = -1.0
        sol = linalg.lu_solve(self._lu, rhs)
        return sol[:-1, :].T

    def boundary_residual(self, sources: np.ndarray, sigmas: np.ndarray,
                          points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """Interior-limit normal derivative of the total potential at
        arbitrary boundary points (for off-collocation residual checks).

        `points` must lie on mesh segments; `normals` are the outward
        normals there.  Exact segment formulas are used, including the
        on-segment jump.
        """
        sources = np.atleast_2d(sources)
        points = np.atleast_2d(points)
        tangents = _segment_frames(self.mesh)
        rel = points[:, None, :] - self.mesh.starts[None, :, :]
        u = np.einsum("psk,sk->ps", rel, tangents)
        dperp = np.einsum("psk,sk->ps", rel, self.mesh.normals)
        w1, w2 = -u, self.mesh.lengths[None, :] - u

        # d/dn_x of the segment layer potential, exact:
        #   0.5*ln(r2^2/r1^2)*(n_x . t_j) - (atan(w2/d) - atan(w1/d))*(n_x . n_j)
        # The interior side has d < 0, where the atan difference tends to
        # -pi as d -> 0- within the segment span, reproducing the jump.
        ndotn = normals @ self.mesh.normals.T
        ndott = normals @ tangents.T
        r22 = w2 * w2 + dperp * dperp
        r12 = w1 * w1 + dperp * dperp
        tol = 1e-12 * self.mesh.lengths[None, :]
        on_line = np.abs(dperp) < tol
        within = (u > 0) & (u < self.mesh.lengths[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ang = np.arctan(w2 / dperp) - np.arctan(w1 / dperp)
            lg = 0.5 * np.log(r22 / r12)
        ang = np.where(on_line & within, -np.pi, np.where(on_line, 0.0, ang))
        Kpts = lg * ndott - ang * ndotn
        layer = np.einsum("ps,qs->qp", Kpts, sigmas)

        diff = points[None, :, :] - sources[:, None, :]
        r2 = np.einsum("qpk,qpk->qp", diff, diff)
        src = -np.einsum("qpk,pk->qp", diff, normals) / r2

        S = _segment_log_potential(points, self.mesh)
        nn = normals @ self.mesh.normals.T
        ret = (nn * S).sum(axis=1) / self.area
        return src + ret[None, :] + layer


def solve_boundary(mesh: BoundaryMesh, source) -> np.ndarray:
    """Boundary source densities for a unit via current at `source` (m).

    The densities satisfy the magnetic-wall condition at the segment
    midpoints together with the gauge constraint
    sum(sigma_j * len_j) = -1.
    """
    op = BoundaryOperator(mesh)
    return op.solve(np.asarray(source, dtype=float))[0]


def potential_matrix(op: BoundaryOperator, layout: ViaLayout) -> np.ndarray:
    """g[i, j]: gauge-fixed potential at via j due to a unit source at via i.

    The self term is evaluated at the via radius.  Constants are per-source
    (gauge) and cancel in loop combinations.
    """
    pos = layout.positions
    sig = op.solve(pos)                               # (N, S)
    S_via = _segment_log_potential(pos, op.mesh)      # (N, S)
    ret_via = op.return_potential(pos)                # (N,)

    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    np.fill_diagonal(d, 1.0)
    src = -np.log(d)
    np.fill_diagonal(src, -np.log(layout.radii))

    layer = sig @ S_via.T                              # [i, j] = sum_k sig_ik S_k(p_j)
    return src + ret_via[None, :] + layer


def _mean_zero_shift(op: BoundaryOperator, layout: ViaLayout, sig: np.ndarray) -> np.ndarray:
    """Area average of each source potential, from the divergence identity
    with v = |r|^2/4:  int(phi) = oint(phi * r.n/2) - 2*pi*v(p) + (2*pi/A)*int(v)."""
    mesh = op.mesh
    pos = layout.positions
    phi_mid = (
        -np.log(np.linalg.norm(mesh.midpoints[None, :, :] - pos[:, None, :], axis=2))
        + op._return_potential_midpoints()[None, :]
        + sig @ op._S_mid.T
    )
    w = 0.5 * np.einsum("mk,mk->m", mesh.midpoints, mesh.normals) * mesh.lengths
    v_p = 0.25 * np.einsum("nk,nk->n", pos, pos)
    total = phi_mid @ w - 2.0 * np.pi * v_p + (2.0 * np.pi / op.area) * op.quarter_moment
    return total / op.area


def unit_inductance_matrix(mesh: BoundaryMesh, layout: ViaLayout) -> UnitInductanceMatrix:
    """Per-unit-thickness inductance matrices for a via layout on the plane.

    Loop entries follow
      lambda_ik = (mu0/2pi) * [g(i,k) - g(i,ref) - g(ref,k) + g(ref,ref)],
    symmetrized.  The full matrix applies the mean-zero (uniform-return)
    gauge so it can be stamped per cavity in the multi-layer circuit.
    """
    op = BoundaryOperator(mesh)
    inside = _points_in_polygon(layout.positions, mesh.starts)
    if not inside.all():
        raise DegenerateGeometryError("via outside the board outline")

    sig = op.solve(layout.positions)
    g = potential_matrix(op, layout)

    ref = layout.reference_index
    keep = np.array([i for i in range(layout.n_vias) if i != ref], dtype=int)
    scale = MU0 / (2.0 * np.pi)
    loop = scale * (
        g[np.ix_(keep, keep)]
        - g[keep, ref][:, None]
        - g[ref, keep][None, :]
        + g[ref, ref]
    )
    loop = 0.5 * (loop + loop.T)

    shift = _mean_zero_shift(op, layout, sig)
    full = scale * (g - shift[:, None])
    full = 0.5 * (full + full.T)

    for name, mat in (("loop", loop), ("full", full)):
        if mat.size:
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise NumericalFailureError(
                    f"{name} inductance matrix is not positive definite",
                    condition=float(np.linalg.cond(mat)),
                ) from None

    return UnitInductanceMatrix(loop=loop, full=full, loop_vias=keep, layout=layout)
