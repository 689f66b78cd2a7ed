"""Glued almost-Einstein profile on the model filled end, the decay weight,
the weighted sup norms with their trivial-variation-corrected variant, and
the residual decay sweep.

The glued metric is the cap metric deep inside, the model cusp metric
r^{-2} dr^2 + r^2 (dtheta^2 + dx^2) beyond the boundary torus at r = R, and
the componentwise convex interpolation chi g_cap + (1-chi) g_cusp on the
collar of unit arclength before the boundary.  Both pieces are Einstein, so
the residual is supported in the collar and decays like R^{-n+1} as the
filling torus grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (ArclengthMap, DiagonalMetricProfile,
                       TrivialVariation, _check_dimension, _v_from_offset,
                       r_plus, radius_for_meridian, theta_period, v_profile)
from .operators import InvariantTensor

__all__ = [
    "CutoffSpec",
    "cutoff",
    "GluedEnd",
    "glue",
    "WeightFunction",
    "weight",
    "rho_cutoff",
    "unit_frame_components",
    "NormReport",
    "weighted_norms",
    "double_star_decompose",
    "double_star_norm",
    "residual_decay_sweep",
]


# -- smooth cutoff -------------------------------------------------------------

def _psi(t):
    out = np.zeros_like(t)
    m = t > 0
    out[m] = np.exp(-1.0 / t[m])
    return out


def _psi_p(t):
    out = np.zeros_like(t)
    m = t > 0
    out[m] = np.exp(-1.0 / t[m]) / t[m] ** 2
    return out


def _psi_pp(t):
    out = np.zeros_like(t)
    m = t > 0
    out[m] = np.exp(-1.0 / t[m]) * (1.0 / t[m] ** 4 - 2.0 / t[m] ** 3)
    return out


def _bump01(t):
    """B(t) = psi(t) / (psi(t) + psi(1-t)) and two derivatives; B(<=0)=0, B(>=1)=1."""
    t = np.asarray(t, dtype=float)
    u, v = _psi(t), _psi(1.0 - t)
    up, vp = _psi_p(t), -_psi_p(1.0 - t)
    upp, vpp = _psi_pp(t), _psi_pp(1.0 - t)
    s = u + v
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(s > 0, u / np.where(s > 0, s, 1.0), 0.0)
        b1 = np.where(s > 0, (up * v - u * vp) / s**2, 0.0)
        b2 = np.where(s > 0,
                      (upp * v - u * vpp) / s**2
                      - 2.0 * (up * v - u * vp) * (up + vp) / s**3,
                      0.0)
    b = np.where(t >= 1.0, 1.0, np.where(t <= 0.0, 0.0, b))
    b1 = np.where((t >= 1.0) | (t <= 0.0), 0.0, b1)
    b2 = np.where((t >= 1.0) | (t <= 0.0), 0.0, b2)
    return b, b1, b2


@dataclass
class CutoffSpec:
    """Smooth transition equal to 1 below center-width and 0 above center."""

    center: float
    width: float = 1.0
    order: int = 2

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("cutoff width must be positive")

    def derivative_bounds(self, samples=20001):
        """Sup of |chi^(k)| for k = 0..order, measured on a dense grid."""
        r = np.linspace(self.center - self.width, self.center, samples)
        vals = cutoff(self, r)
        bounds = [float(np.abs(v).max()) for v in vals[:3]]
        if self.order > 2:
            v = vals[2]
            h = r[1] - r[0]
            for _ in range(3, self.order + 1):
                v = np.gradient(v, h)
                bounds.append(float(np.abs(v).max()))
        return bounds[: self.order + 1]


def cutoff(spec: CutoffSpec, r):
    """(chi, chi', chi'', ...) at r; chi = 1 for r <= center-width, 0 for r >= center."""
    r = np.asarray(r, dtype=float)
    t = (spec.center - r) / spec.width
    b, b1, b2 = _bump01(t)
    chi = b
    chi1 = -b1 / spec.width
    chi2 = b2 / spec.width**2
    out = [chi, chi1, chi2]
    return tuple(out[: max(spec.order, 2) + 1])


# -- the glued end -------------------------------------------------------------

class GluedEnd:
    """Closed-form glued metric with exact radial derivatives.

    The interpolation collar is the unit-arclength tubular neighborhood of
    the boundary torus measured in the cap metric: the cutoff argument is
    s_cap(R) - s_cap(r), so chi = 1 for s_cap(r) <= s_cap(R) - width and 0
    at the boundary.  An r-width collar would shrink to arclength ~ 1/R and
    its cutoff derivatives would eat the R^(-n+1) decay of the mismatch.

    Provides the profile functions f_i(r), their first and second arclength
    derivatives, and the pointwise normalized residual, all analytically;
    the sampled DiagonalMetricProfile comes from to_profile().
    """

    def __init__(self, n, ell, r_out_factor=4.0, collar_width=1.0):
        self.n = _check_dimension(n)
        self.ell = float(ell)
        self.rp = r_plus(n)
        self.beta = theta_period(n)
        self.R = radius_for_meridian(n, ell)
        self.collar_width = float(collar_width)
        if r_out_factor <= 1.0:
            raise ValueError("outer factor must exceed 1")
        self.r_out = r_out_factor * self.R
        self.cap_map = ArclengthMap(n, self.r_out * 1.01)
        self.s_R = float(self.cap_map.s_of_r(self.R))
        if self.s_R <= collar_width + 0.05:
            raise ValueError(
                f"meridian too short: the boundary torus sits at arclength "
                f"{self.s_R:.3f} < collar width {collar_width:g} from the core")
        self.amap = ArclengthMap(n, self.r_out, grr=self._grr_for_map)

    # metric data ---------------------------------------------------------

    def collar_r_range(self):
        lo = float(self.cap_map.r_of_s(np.array([self.s_R - self.collar_width]))[0])
        return lo, self.R

    def chi(self, r):
        """Cutoff and two r-derivatives; argument is cap arclength to the
        boundary, so dt/dr = -1/sqrt(V)."""
        r = np.asarray(r, dtype=float)
        t = (self.s_R - self.cap_map.s_of_r(np.minimum(r, self.r_out * 1.005))
             ) / self.collar_width
        b, b1, b2 = _bump01(t)
        v, vp, _ = v_profile(self.n, r)
        sv = np.sqrt(np.maximum(v, 1e-300))
        with np.errstate(invalid="ignore", over="ignore"):
            dt = -1.0 / (sv * self.collar_width)
            chi1 = np.where(b1 != 0.0, b1 * dt, 0.0)
            chi2 = np.where((b1 != 0.0) | (b2 != 0.0),
                            b2 * dt * dt
                            + b1 * vp / (2.0 * sv**3) / self.collar_width,
                            0.0)
        return b, chi1, chi2

    def _grr_for_map(self, r, v):
        chi = self.chi(r)[0]
        return chi / v + (1.0 - chi) / r**2

    def _pieces(self, r):
        r = np.asarray(r, dtype=float)
        v, vp, vpp = v_profile(self.n, r)
        chi, chi1, chi2 = self.chi(r)
        return r, v, vp, vpp, chi, chi1, chi2

    def grr(self, r):
        r, v, vp, _, chi, chi1, _ = self._pieces(r)
        return chi / v + (1.0 - chi) / r**2

    def theta_fiber_sq(self, r):
        """f_2^2 = chi V + (1-chi) r^2 and two r-derivatives."""
        r, v, vp, vpp, chi, chi1, chi2 = self._pieces(r)
        w = chi * v + (1.0 - chi) * r**2
        w1 = chi1 * (v - r**2) + chi * vp + (1.0 - chi) * 2.0 * r
        w2 = (chi2 * (v - r**2) + 2.0 * chi1 * (vp - 2.0 * r)
              + chi * vpp + (1.0 - chi) * 2.0)
        return w, w1, w2

    def ratios(self, r):
        """d_i = f_i'/f_i and q_i = f_i''/f_i (arclength derivatives) at r."""
        r, v, vp, vpp, chi, chi1, chi2 = self._pieces(r)
        a = chi / v + (1.0 - chi) / r**2
        a1 = chi1 * (1.0 / v - 1.0 / r**2) - chi * vp / v**2 - (1.0 - chi) * 2.0 / r**3
        w, w1, w2 = self.theta_fiber_sq(r)
        # f = sqrt(w), d/ds = a^(-1/2) d/dr:
        #   d = f'(s)/f = (w1/2w) / sqrt(a)
        #   q = f''(s)/f = [ f''(r)/f - (f'(r)/f) a'/(2a) ] / a
        # with f''(r)/f = w2/(2w) - (w1/(2w))^2.
        L1 = w1 / (2.0 * w)
        d2 = L1 / np.sqrt(a)
        q2 = (w2 / (2.0 * w) - L1**2 - L1 * a1 / (2.0 * a)) / a
        # torus components f = r: f'(r) = 1, f''(r) = 0
        dj = 1.0 / (r * np.sqrt(a))
        qj = (-a1 / (2.0 * a)) / (a * r)
        return d2, q2, dj, qj

    def normalized_residual(self, r):
        """(E1/sqrt det M components (theta, torus), E2) pointwise, closed form."""
        n = self.n
        d2, q2, dj, qj = self.ratios(r)
        S = d2 + (n - 2) * dj
        e1_theta = 2.0 * (q2 + d2 * (S - d2) - (n - 1))
        e1_torus = 2.0 * (qj + dj * (S - dj) - (n - 1))
        ss = d2**2 + (n - 2) * dj**2
        e2 = 2.0 * (S**2 - ss) - 2.0 * (n - 1) * (n - 2)
        return e1_theta, e1_torus, e2

    def to_profile(self, nodes):
        """Sample on a uniform arclength grid over [r_+, r_out]."""
        if nodes < 66:
            raise ValueError("need at least 64 interior nodes")
        s = np.linspace(0.0, self.amap.s_max, nodes)
        x = self.amap.offset_of_s(s)
        x[0] = 0.0
        r = self.rp * (1.0 + x)
        v = _v_from_offset(self.n, x, self.rp)
        chi = self.chi(r)[0]
        f = np.empty((self.n - 1, nodes))
        f[0] = np.sqrt(chi * v + (1.0 - chi) * r**2)
        f[0, 0] = 0.0
        f[1:] = r
        return DiagonalMetricProfile(self.n, s, f, self.beta, r=r,
                                     cap_radius=self.R)


def glue(n, ell, r_out_factor=4.0, nodes=2048):
    """Glued almost-Einstein profile for a meridian of length ell.

    Returns the sampled profile; the analytic GluedEnd is available as
    profile attribute ``source``.
    """
    end = GluedEnd(n, ell, r_out_factor)
    profile = end.to_profile(nodes)
    profile.source = end
    return profile


# -- weight and norms -----------------------------------------------------------

@dataclass
class WeightFunction:
    """Decay weight W = (r/R_k)^e + r^(-e) on the filled end, 1 outside."""

    n: int
    R_k: float
    exponent: float = 0.1

    def __post_init__(self):
        self.n = _check_dimension(self.n)
        if self.R_k <= r_plus(self.n):
            raise ValueError("R_k must exceed r_plus")

    @property
    def center_radius(self):
        return float(np.sqrt(self.R_k))

    def minimum(self):
        return 2.0 * self.R_k ** (-self.exponent / 2.0)


def weight(wf: WeightFunction, r):
    """W(r); the formula applies on the end r <= R_k, outside W = 1."""
    r = np.asarray(r, dtype=float)
    e = wf.exponent
    val = np.where(r <= wf.R_k, (r / wf.R_k) ** e + r ** (-e), 1.0)
    return float(val) if val.ndim == 0 else val


def rho_cutoff(s, s_boundary):
    """Trivial-variation carrier: 1 on the middle of the end, 0 within unit
    arclength of the boundary torus and within distance 1 of the core
    (rising over s in [1, 2], falling over the last unit before s_boundary)."""
    s = np.asarray(s, dtype=float)
    rise = _bump01(s - 1.0)[0]
    fall = _bump01(s_boundary - s)[0]
    out = rise * fall
    return np.where(s > s_boundary, 0.0, out)


@dataclass
class NormReport:
    """Evaluated norms of an invariant tensor on the filled end.

    double_star is the two-candidate infimum min(star, constructive) and
    never exceeds star; double_star_constructive is the value of the
    center-point decomposition h = hbar + rho u itself, the quantity whose
    gap against star (ratio W(c_k)) motivates the corrected norm.
    """

    sup: float
    star: float
    double_star: float
    double_star_constructive: float
    u: np.ndarray | None = None
    c_k_index: int | None = None


def unit_frame_components(h: InvariantTensor, background="cusp"):
    """Components of h in the orthonormal frame of the background end.

    background "cusp": |r^2 h11|, |h1i|, |r^-2 hij|; "bh": frame weights
    from (V, r^2).  Returns an (N, n, n) symmetric matrix field.
    """
    r = h.grid.nodes
    n = h.grid.n
    N = r.size
    if background == "cusp":
        a_r = 1.0 / r**2
        diag = np.tile(r**2, (n - 1, 1))
    elif background == "bh":
        v = v_profile(n, r)[0]
        a_r = 1.0 / v
        diag = np.vstack([v, np.tile(r**2, (n - 2, 1))])
    else:
        raise ValueError("background must be 'cusp' or 'bh'")
    out = np.zeros((N, n, n))
    out[:, 0, 0] = h.h11 / a_r
    sq = np.sqrt(diag)
    for i in range(n - 1):
        out[:, 0, i + 1] = out[:, i + 1, 0] = h.h1i[i] / (np.sqrt(a_r) * sq[i])
    out[:, 1:, 1:] = h.hij / (sq.T[:, :, None] * sq.T[:, None, :])
    return out


def _local_norms(frame, s, order, window=0.5):
    """Discrete local norm: max of |h| and s-derivatives up to order over a
    window of arclength width `window` around each node."""
    N = frame.shape[0]
    mags = [np.linalg.norm(frame.reshape(N, -1), axis=1)]
    if order >= 1:
        d1 = np.gradient(frame, s, axis=0)
        mags.append(np.linalg.norm(d1.reshape(N, -1), axis=1))
    if order >= 2:
        d2 = np.gradient(np.gradient(frame, s, axis=0), s, axis=0)
        mags.append(np.linalg.norm(d2.reshape(N, -1), axis=1))
    if order > 2:
        raise ValueError("discrete derivatives available up to order 2")
    point = np.max(np.vstack(mags), axis=0)
    half = window / 2.0
    out = np.empty(N)
    j_lo = np.searchsorted(s, s - half, side="left")
    j_hi = np.searchsorted(s, s + half, side="right")
    for k in range(N):
        out[k] = point[j_lo[k]:j_hi[k]].max()
    return out


def _tensor_s_grid(h: InvariantTensor, background):
    r = h.grid.nodes
    if h.grid.coordinate == "s":
        return h.grid.nodes
    if background == "cusp":
        return np.log(r)
    amap = ArclengthMap(h.grid.n, float(r[-1]) * 1.001)
    return amap.s_of_r(r)


def weighted_norms(h, wf: WeightFunction, order=2,
                   background="cusp", window=0.5):
    """Sup and weighted-sup (star) norms of an invariant tensor.

    The local Hoelder seminorm is replaced by the max of the unit-frame
    magnitude and its discrete s-derivatives up to `order` over a window of
    fixed arclength width.  Accepts an InvariantTensor or an
    EinsteinResidual (whose normalized components are already frame-sized).
    """
    from .operators import EinsteinResidual
    if isinstance(h, EinsteinResidual):
        if h.r is None:
            raise ValueError("residual carries no radial samples to weight")
        k = h.n - 1
        N = h.s.size
        frame = np.zeros((N, k, k))
        if h.e1.ndim == 2:
            frame[:, np.arange(k), np.arange(k)] = h.e1.T
        else:
            frame = h.e1.copy()
        tr_slot = np.abs(h.e2_relative())
        local = np.maximum(np.linalg.norm(frame.reshape(N, -1), axis=1), tr_slot)
        if order > 0:
            d1 = np.gradient(frame, h.s, axis=0)
            local = np.maximum(local, np.linalg.norm(d1.reshape(N, -1), axis=1))
        w = weight(wf, h.r)
        return float(local.max()), float((local / w).max()), local
    frame = unit_frame_components(h, background)
    s = _tensor_s_grid(h, background)
    if np.diff(s).max() > window:
        raise ValueError("grid too coarse for the seminorm window")
    local = _local_norms(frame, s, order, window)
    w = weight(wf, h.grid.nodes)
    sup = float(local.max())
    star = float((local / w).max())
    return sup, star, local


def double_star_decompose(h: InvariantTensor, wf: WeightFunction,
                          background="cusp"):
    """Center-point decomposition h = hbar + rho u.

    u is the orthogonal projection of the unit-frame torus block at the
    center node (nearest r = sqrt(R_k)) onto the trace-free deformations;
    the residue (h - u)(c_k) is orthogonal to that subspace.  rho vanishes
    near the boundary torus and the core.
    """
    frame = unit_frame_components(h, background)
    r = h.grid.nodes
    ck = int(np.argmin(np.abs(r - wf.center_radius)))
    k = h.grid.n - 1
    block = frame[ck, 1:, 1:]
    u = block - np.trace(block) / k * np.eye(k)
    s = _tensor_s_grid(h, background)
    s_boundary = float(np.interp(min(wf.R_k, r[-1]), r, s))
    rho = rho_cutoff(s - s[0], s_boundary - s[0])
    hbar = InvariantTensor(
        h.grid, h.h11.copy(), h.h1i.copy(),
        h.hij - _frame_to_coords(u, h.grid, background, rho))
    return hbar, TrivialVariation(u), ck, rho


def _frame_to_coords(u, grid, background, rho):
    r = grid.nodes
    n = grid.n
    if background == "cusp":
        diag = np.tile(r**2, (n - 1, 1))
    else:
        v = v_profile(n, r)[0]
        diag = np.vstack([v, np.tile(r**2, (n - 2, 1))])
    sq = np.sqrt(diag)
    scale = sq.T[:, :, None] * sq.T[:, None, :]
    return rho[:, None, None] * u[None, :, :] * scale


def double_star_norm(h: InvariantTensor, wf: WeightFunction, order=2,
                     background="cusp", window=0.5):
    """NormReport with sup, star, and the corrected double-star norms.

    The constructive value is ||hbar||_star + |u| for the center-point
    decomposition; the reported double_star is min(star, constructive),
    the two-candidate infimum, so double_star <= star holds exactly.
    """
    sup, star, _ = weighted_norms(h, wf, order, background, window)
    hbar, u, ck, _ = double_star_decompose(h, wf, background)
    _, star_bar, _ = weighted_norms(hbar, wf, order, background, window)
    constructive = star_bar + u.size
    return NormReport(sup=sup, star=star,
                      double_star=min(star, constructive),
                      double_star_constructive=constructive,
                      u=u.u, c_k_index=ck)


# -- decay sweep -----------------------------------------------------------------

def residual_decay_sweep(n, ells=None, radii=None, r_out_factor=4.0,
                         samples=4000):
    """Star-weighted glued residual against the cap radius, with slope fit.

    The residual is evaluated in closed form (no grid truncation), weighted
    by 1/W, and the sup taken over a dense radial sample of the end.
    Returns a dict with per-R values and the log-log slope, which tracks
    R^(-n+1).
    """
    n = _check_dimension(n)
    if radii is None:
        if ells is None:
            raise ValueError("pass meridian lengths or cap radii")
        ells = np.asarray(ells, dtype=float)
    else:
        radii = np.asarray(radii, dtype=float)
        beta = theta_period(n)
        ells = beta * np.sqrt(v_profile(n, radii)[0])
    if ells.size < 3:
        raise ValueError("need at least 3 sweep points")
    out_R, out_res = [], []
    for ell in ells:
        end = GluedEnd(n, float(ell), r_out_factor)
        wf = WeightFunction(n, end.R)
        r = np.linspace(end.rp * 1.01, end.r_out, samples)
        e1t, e1x, e2 = end.normalized_residual(r)
        local = np.maximum(np.abs(e1t), np.abs(e1x))
        local = np.maximum(local, np.abs(e2) / (2.0 * (n - 1) * max(n - 2, 1)))
        weighted = local / weight(wf, r)
        out_R.append(end.R)
        out_res.append(float(weighted.max()))
    logR = np.log(out_R)
    logres = np.log(out_res)
    slope = float(np.polyfit(logR, logres, 1)[0])
    return {"R": np.array(out_R), "ell": np.asarray(ells, dtype=float),
            "residual": np.array(out_res), "slope": slope}
