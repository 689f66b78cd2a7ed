"""Newton and frozen-Jacobian boundary-value solvers driving a glued
profile to a discrete Einstein metric, plus spectral probes of the
assembled linearization.

Unknowns are the multiplicative perturbations delta log f_i at every node,
which keeps the profile positive unconditionally.  Boundary closure: the
theta fiber is pinned to zero at the cap (its node-0 unknown is excluded),
the remaining components carry one-sided even-parity rows f_i'(0) = 0, and
the outer boundary is Dirichlet (eliminated, not penalized).  The scalar
constraint (E2) is not imposed; on smooth capped solutions of the evolution
rows it propagates automatically and is monitored as drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import _stencils
from .geometry import DiagonalMetricProfile, RadialGrid
from .gluing import WeightFunction, double_star_norm, weighted_norms
from .operators import InvariantTensor, einstein_residual

__all__ = [
    "SolverConfig",
    "NewtonReport",
    "BandedLinearization",
    "assemble_linearization",
    "newton_solve",
    "verify_einstein",
    "kernel_spectrum",
    "rayleigh_quotient",
    "trivial_direction",
]

_PARITY_W = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


@dataclass
class SolverConfig:
    """Newton driver settings.

    The reachable residual floor is set by roundoff in the second
    differences, about 100 eps / spacing^2 (1e-9 at 2048 nodes); tolerances
    below it make the iteration stall, which is detected and reported.
    """

    max_iterations: int = 12
    residual_tolerance: float = 1e-8
    damping: float = 1.0
    mode: str = "newton"
    step_clip: float = 1.0

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.mode not in ("newton", "frozen_jacobian"):
            raise ValueError("mode must be 'newton' or 'frozen_jacobian'")


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_history: list
    star_history: list
    double_star_history: list
    e2_drift: float
    cone_angle_ratio: float
    convergence_orders: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""

    def order_estimate(self):
        return max(self.convergence_orders) if self.convergence_orders else float("nan")


class BandedLinearization:
    """Banded Newton matrix of the discrete system in the log-profile unknowns.

    Rows/columns are node-major over the free unknowns: all components at
    node 0 except the pinned theta fiber, then nodes 1..N-2 (the Dirichlet
    node N-1 is eliminated).  Row slots: parity rows for the node-0
    unknowns, then the evolution rows (E1 normalized) node by node.
    """

    def __init__(self, profile: DiagonalMetricProfile, s_zone=None):
        if not profile.has_cap:
            raise ValueError("the solver expects a capped profile")
        self.profile = profile
        n, N = profile.n, profile.s.size
        self.n, self.N = n, N
        k = n - 1
        self.sys = _stencils.DiagonalSystem(n, profile.s, profile.f,
                                            partials=True, s_zone=s_zone)
        # unknown indexing
        idx = -np.ones((k, N), dtype=int)
        pos = 0
        for node in range(N - 1):
            for comp in range(k):
                if node == 0 and comp == 0:
                    continue
                idx[comp, node] = pos
                pos += 1
        self.index = idx
        self.size = pos
        self._assemble()

    def _assemble(self):
        n, N, k = self.n, self.N, self.n - 1
        f = self.profile.f
        delta = self.profile.spacing
        rows, cols, vals = self.sys.jacobian_triples(
            lambda comp, node: int(self.index[comp, node]))
        # evolution row (k_node, i) sits at the unknown slot of (i, k_node)
        node = rows // k + 1
        comp = rows % k
        row_slot = self.index[comp, node]
        keep = row_slot >= 0
        rows_b = row_slot[keep]
        cols_b = cols[keep]
        vals_b = vals[keep]
        # parity rows f_i'(0) = 0 for i >= 1 occupy the node-0 slots
        prows, pcols, pvals = [], [], []
        for comp in range(1, k):
            slot = self.index[comp, 0]
            for m in range(5):
                u = self.index[comp, m]
                if u < 0:
                    continue
                prows.append(slot)
                pcols.append(u)
                pvals.append(_PARITY_W[m] / delta * f[comp, m])
        rows_all = np.concatenate([rows_b, np.array(prows, dtype=int)])
        cols_all = np.concatenate([cols_b, np.array(pcols, dtype=int)])
        vals_all = np.concatenate([vals_b, np.array(pvals)])
        off = rows_all - cols_all
        self.l = int(max(0, off.max()))
        self.u = int(max(0, -off.min()))
        ab = np.zeros((self.l + self.u + 1, self.size))
        np.add.at(ab, (self.u + off, cols_all), vals_all)
        self.ab = ab
        self._triples = (rows_all, cols_all, vals_all)

    def residual_vector(self):
        """Stacked residual in row order: parity rows, then E1 rows."""
        n, N, k = self.n, self.N, self.n - 1
        f = self.profile.f
        delta = self.profile.spacing
        e1n, _ = self.sys.residual()
        out = np.zeros(self.size)
        for comp in range(1, k):
            out[self.index[comp, 0]] = float(_PARITY_W @ f[comp, :5]) / delta
        for node in range(1, N - 1):
            for comp in range(k):
                out[self.index[comp, node]] = e1n[comp, node - 1]
        return out

    def solve(self, rhs):
        return solve_banded((self.l, self.u), self.ab, rhs)

    def solve_transpose(self, rhs):
        ab_t = np.zeros((self.l + self.u + 1, self.size))
        r, c, v = self._triples
        np.add.at(ab_t, (self.l + (c - r), r), v)
        return solve_banded((self.u, self.l), ab_t, rhs)

    def matvec(self, x):
        r, c, v = self._triples
        out = np.zeros(self.size)
        np.add.at(out, r, v * x[c])
        return out

    def sigma_min(self, iterations=400, tol=1e-12, row_scale=None,
                  col_scale=None, seed=7):
        """Smallest singular value of B = D_row A D_col^{-1} by power
        iteration on (B^T B)^{-1}, with a deterministic seeded start."""
        rs = np.ones(self.size) if row_scale is None else np.asarray(row_scale)
        cs = np.ones(self.size) if col_scale is None else np.asarray(col_scale)

        def apply_binv(v):        # B^{-1} v = D_c A^{-1} D_r^{-1} v
            return cs * self.solve(v / rs)

        def apply_binv_t(v):      # B^{-T} v = D_r^{-1} A^{-T} D_c v
            return self.solve_transpose(cs * v) / rs

        rng = np.random.Generator(np.random.Philox(seed))
        x = rng.standard_normal(self.size)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(iterations):
            y = apply_binv(apply_binv_t(x))
            lam_new = float(np.linalg.norm(y))
            x = y / lam_new
            if abs(lam_new - lam) <= tol * lam_new:
                lam = lam_new
                break
            lam = lam_new
        return 1.0 / np.sqrt(lam)


def assemble_linearization(profile: DiagonalMetricProfile, s_zone=None):
    """Banded linearization of the discrete system at the profile."""
    return BandedLinearization(profile, s_zone=s_zone)


def trivial_direction(profile: DiagonalMetricProfile, u_diag, lin=None):
    """Unknown-vector of a cutoff trace-free trivial variation.

    delta(f_i^2) = rho(s) r^2 u_ii  =>  delta log f_i = rho r^2 u_ii / (2 f_i^2).
    """
    from .gluing import rho_cutoff
    lin = BandedLinearization(profile) if lin is None else lin
    u_diag = np.asarray(u_diag, dtype=float)
    if abs(u_diag.sum()) > 1e-12:
        raise ValueError("trivial direction must be trace free")
    s_b = profile.s[-1] if profile.cap_radius is None else float(
        np.interp(profile.cap_radius, profile.r, profile.s))
    rho = rho_cutoff(profile.s, s_b)
    r2 = profile.r**2
    vec = np.zeros(lin.size)
    for comp in range(profile.n - 1):
        dw = rho * r2 * u_diag[comp] / (2.0 * profile.f[comp] ** 2 + 1e-300)
        for node in range(profile.s.size - 1):
            slot = lin.index[comp, node]
            if slot >= 0:
                vec[slot] = dw[node]
    return vec


def _cone_angle_ratio(profile):
    delta = profile.spacing
    slope = float(_PARITY_W @ profile.f[0, :5]) / delta
    return slope * profile.theta_period / (2.0 * np.pi)


def newton_solve(g0: DiagonalMetricProfile, cfg: SolverConfig | None = None,
                 weight_fn: WeightFunction | None = None):
    """Drive the glued profile to a discrete Einstein profile.

    Newton mode refactors the linearization every step; frozen_jacobian mode
    keeps the factorization of the initial profile, realizing the fixed
    point iteration h -> h - L^{-1} Phi(g + h).  Returns (profile, report).
    """
    cfg = SolverConfig() if cfg is None else cfg
    profile = g0.copy()
    if g0.r is not None:
        profile.r = g0.r.copy()
    profile.cap_radius = g0.cap_radius
    if weight_fn is None and g0.cap_radius is not None:
        weight_fn = WeightFunction(g0.n, g0.cap_radius)
    frozen = None
    history, stars, dstars = [], [], []
    grow = 0
    diverged = False
    message = ""
    for it in range(cfg.max_iterations + 1):
        lin = assemble_linearization(profile)
        if cfg.mode == "frozen_jacobian":
            if frozen is None:
                frozen = lin
            solver = frozen
        else:
            solver = lin
        res = lin.residual_vector()
        e1n, _ = lin.sys.residual()
        rnorm = float(np.abs(e1n).max())
        history.append(rnorm)
        if weight_fn is not None and g0.r is not None:
            stars.append(_perturbation_star(g0, profile, weight_fn))
            dstars.append(_perturbation_double_star(g0, profile, weight_fn))
        if rnorm < cfg.residual_tolerance:
            break
        if len(history) >= 2 and history[-1] > history[-2]:
            grow += 1
            if grow >= 3:
                diverged = True
                message = "residual grew on three consecutive iterations"
                break
        else:
            grow = 0
        if len(history) >= 2 and rnorm < 1e-6 and rnorm > 0.7 * history[-2]:
            message = "residual stalled at the roundoff floor"
            break
        if it == cfg.max_iterations:
            message = "maximum iterations reached"
            break
        step = solver.solve(-res)
        step = np.clip(step, -cfg.step_clip, cfg.step_clip) * cfg.damping
        for comp in range(profile.n - 1):
            for node in range(profile.s.size - 1):
                slot = lin.index[comp, node]
                if slot >= 0:
                    profile.f[comp, node] *= np.exp(step[slot])
        profile.f[0, 0] = 0.0
    res_final = einstein_residual(profile)
    orders = _fit_orders(history)
    report = NewtonReport(
        converged=history[-1] < cfg.residual_tolerance and not diverged,
        iterations=len(history) - 1,
        residual_history=history,
        star_history=stars,
        double_star_history=dstars,
        e2_drift=res_final.max_e2_relative(),
        cone_angle_ratio=_cone_angle_ratio(profile),
        convergence_orders=orders,
        diverged=diverged,
        message=message,
    )
    return profile, report


def _fit_orders(history, floor=1e-12):
    h = [x for x in history if x > floor]
    orders = []
    for i in range(len(h) - 2):
        if h[i + 1] < h[i] and h[i + 2] < h[i + 1]:
            orders.append(float(np.log(h[i + 2] / h[i + 1])
                                / np.log(h[i + 1] / h[i])))
    return orders


def _perturbation_tensor(g0, profile):
    """Accumulated perturbation as an invariant tensor (torus block only)."""
    grid = RadialGrid("r", g0.r, g0.n, exterior=True)
    k = g0.n - 1
    hij = np.zeros((g0.r.size, k, k))
    dfsq = profile.f**2 - g0.f**2
    hij[:, np.arange(k), np.arange(k)] = dfsq.T
    return InvariantTensor(grid, None, None, hij)


def _perturbation_star(g0, profile, wf):
    h = _perturbation_tensor(g0, profile)
    _, star, _ = weighted_norms(h, wf, order=0)
    return star


def _perturbation_double_star(g0, profile, wf):
    h = _perturbation_tensor(g0, profile)
    return double_star_norm(h, wf, order=0).double_star


def verify_einstein(profile, tol=1e-6):
    """Report-only certification of a profile against the reduced system."""
    res = einstein_residual(profile)
    report = {
        "max_e1_normalized": res.max_e1(),
        "max_e2": res.max_e2(),
        "max_e2_relative": res.max_e2_relative(),
        "tolerance": tol,
        "passes": res.max_e1() < tol and res.max_e2_relative() < tol,
    }
    if isinstance(profile, DiagonalMetricProfile) and profile.n == 3:
        sys = _stencils.DiagonalSystem(profile.n, profile.s, profile.f)
        k12 = -sys.comps[0].q
        k13 = -sys.comps[1].q
        k23 = -sys.comps[0].d * sys.comps[1].d
        dev = max(np.abs(k12 + 1).max(), np.abs(k13 + 1).max(),
                  np.abs(k23 + 1).max())
        report["max_curvature_deviation"] = float(dev)
    if res.r is not None:
        worst = np.argmax(np.abs(res.e1).max(axis=0) if res.e1.ndim == 2
                          else np.abs(res.e1).reshape(res.e1.shape[0], -1).max(axis=1))
        report["residual_argmax_r"] = float(res.r[worst])
    return report


def kernel_spectrum(profile, count=1, weight_fn: WeightFunction | None = None,
                    conjugate=False, seed=7):
    """Smallest singular values of the assembled linearization.

    With conjugate=True the operator is D A D^{-1} with D the diagonal of
    inverse weights 1/W at each unknown's node (the discrete shadow of
    measuring both sides in the weighted norm).  Deterministic start vector.
    """
    lin = assemble_linearization(profile)
    rs = cs = None
    if conjugate:
        if weight_fn is None:
            raise ValueError("conjugation needs a weight function")
        w = _unknown_weights(lin, profile, weight_fn)
        rs = 1.0 / w
        cs = 1.0 / w
    if count == 1:
        return np.array([lin.sigma_min(row_scale=rs, col_scale=cs, seed=seed)])

    ones = np.ones(lin.size)
    rsv = ones if rs is None else rs
    csv = ones if cs is None else cs

    def apply_binv(V):
        return np.column_stack([csv * lin.solve(V[:, i] / rsv)
                                for i in range(V.shape[1])])

    def apply_binv_t(V):
        return np.column_stack([lin.solve_transpose(csv * V[:, i]) / rsv
                                for i in range(V.shape[1])])

    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.standard_normal((lin.size, count))
    X, _ = np.linalg.qr(X)
    for _ in range(200):
        X = apply_binv(apply_binv_t(X))
        X, _ = np.linalg.qr(X)
    Y = apply_binv_t(X)
    lam = np.linalg.eigvalsh(Y.T @ Y)       # largest eigenvalues of (B B^T)^(-1)
    sig = np.sort(1.0 / np.sqrt(lam))
    return sig[:count]


def _unknown_weights(lin, profile, weight_fn):
    from .gluing import weight as _w
    w = np.ones(lin.size)
    for comp in range(profile.n - 1):
        for node in range(profile.s.size - 1):
            slot = lin.index[comp, node]
            if slot >= 0:
                w[slot] = _w(weight_fn, profile.r[node])
    return w


def rayleigh_quotient(profile, direction, weight_fn=None, lin=None):
    """||A h|| / ||h|| for one direction, optionally in the weighted scale."""
    lin = assemble_linearization(profile) if lin is None else lin
    y = lin.matvec(direction)
    if weight_fn is not None:
        w = _unknown_weights(lin, profile, weight_fn)
        return float(np.linalg.norm(y / w) / np.linalg.norm(direction / w))
    return float(np.linalg.norm(y) / np.linalg.norm(direction))
