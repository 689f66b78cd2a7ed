"""Model metrics of the filled end: the black-hole cap, the hyperbolic cusp,
their warped-product profiles, curvatures, arclength coordinates, and the
cap-sizing formulas tying the meridian length to the cap radius.

All metrics here are torus invariant and diagonal,

    g = ds^2 + f_2(s)^2 dtheta^2 + f_3(s)^2 dx_3^2 + ... + f_n(s)^2 dx_n^2,

with s the arclength from the core.  The black-hole cap has
f_2 = sqrt(V(r)), f_i = r with V(r) = r^2 - 2 r^(3-n); the cusp model has
f_i = r (all i) with r = e^s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

__all__ = [
    "r_plus",
    "theta_period",
    "v_profile",
    "sectional_curvatures",
    "coordinate_curvature_oracle",
    "unit_ball_volume",
    "cusp_volume_ratio",
    "torus_diameter_bound",
    "radius_for_meridian",
    "metric_gap",
    "arclength_map",
    "ArclengthMap",
    "BlackHoleProfile",
    "RadialGrid",
    "DiagonalMetricProfile",
    "BlockMetricProfile",
    "FlatTorusData",
    "TrivialVariation",
    "black_hole_profile",
    "cusp_profile",
    "apply_trivial_variation",
    "boundary_torus_data",
]


def _check_dimension(n):
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {n!r}")
    return int(n)


def r_plus(n):
    """Inner radius of the cap: the positive root of V, r_+^(n-1) = 2."""
    n = _check_dimension(n)
    return 2.0 ** (1.0 / (n - 1))


def theta_period(n):
    """Period of the meridian angle closing the cap smoothly, 4 pi / ((n-1) r_+)."""
    n = _check_dimension(n)
    return 4.0 * np.pi / ((n - 1) * r_plus(n))


def v_profile(n, r):
    """V, V', V'' at radius r, with V(r) = r^2 - 2 r^(3-n).

    Accepts scalars or arrays; raises for any r <= 0.
    """
    n = _check_dimension(n)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("v_profile requires r > 0")
    v = r**2 - 2.0 * r ** (3 - n)
    vp = 2.0 * r + 2.0 * (n - 3) * r ** (2 - n)
    vpp = 2.0 - 2.0 * (n - 3) * (n - 2) * r ** (1 - n)
    if v.ndim == 0:
        return float(v), float(vp), float(vpp)
    return v, vp, vpp


def _v_from_offset(n, x, rp):
    """V at r = r_+ (1 + x), cancellation-free near the root.

    Uses V = r^(3-n) * (r^(n-1) - 2) with r^(n-1) - 2 = 2 expm1((n-1) log1p(x)),
    which keeps full relative precision for x down to 0.
    """
    x = np.asarray(x, dtype=float)
    r = rp * (1.0 + x)
    return r ** (3 - n) * 2.0 * np.expm1((n - 1) * np.log1p(x))


def sectional_curvatures(n, r):
    """Sectional curvatures (K12, K1i, Kij) of the cap metric at radius r.

    K12 is the (r, theta) plane, K1i = K2i the planes containing one torus
    direction, Kij the purely toroidal planes.  The Kij slot needs two
    distinct directions i, j >= 3 and is only geometrically meaningful for
    n >= 5; the closed form is returned for every n >= 3.  For n = 3 all
    existing planes have curvature -1 (the metric is hyperbolic).
    """
    n = _check_dimension(n)
    r = np.asarray(r, dtype=float)
    rp = r_plus(n)
    if np.any(r < rp * (1.0 - 1e-12)):
        raise ValueError("sectional_curvatures requires r >= r_plus")
    w = r ** (1 - n)
    k12 = -1.0 + (n - 3) * (n - 2) * w
    k1i = -1.0 - (n - 3) * w
    kij = -1.0 + 2.0 * w
    if r.ndim == 0:
        return float(k12), float(k1i), float(kij)
    return k12, k1i, kij


def coordinate_curvature_oracle(metric_diag, n, r0, step=1e-4,
                                richardson=False):
    """Sectional curvatures of a diagonal metric by finite differences.

    ``metric_diag(r)`` returns the n diagonal metric components
    (a_1, ..., a_n) as functions of the single coordinate x_1 = r.
    Christoffel symbols and the curvature tensor are assembled from
    second-order central differences; nothing is shared with the closed
    forms above.  With richardson=True one extrapolation step (half step
    size) removes the leading truncation term, which is needed near the cap
    in high dimension where the bare second-order constant is large.
    Returns the full antisymmetric-pair matrix K[i, j].
    """
    if richardson:
        coarse = coordinate_curvature_oracle(metric_diag, n, r0, step)
        fine = coordinate_curvature_oracle(metric_diag, n, r0, step / 2.0)
        return (4.0 * fine - coarse) / 3.0

    def gammas(r):
        a = np.asarray(metric_diag(r), dtype=float)
        ap = (np.asarray(metric_diag(r + step), dtype=float)
              - np.asarray(metric_diag(r - step), dtype=float)) / (2.0 * step)
        g = np.zeros((n, n, n))
        g[0, 0, 0] = ap[0] / (2.0 * a[0])
        for j in range(1, n):
            g[0, j, j] = -ap[j] / (2.0 * a[0])
            g[j, 0, j] = g[j, j, 0] = ap[j] / (2.0 * a[j])
        return g

    a0 = np.asarray(metric_diag(r0), dtype=float)
    g0 = gammas(r0)
    dg = (gammas(r0 + step) - gammas(r0 - step)) / (2.0 * step)

    K = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            # R^i_{jij} = d_i G^i_{jj} - d_j G^i_{ij} + G^i_{il} G^l_{jj} - G^i_{jl} G^l_{ij}
            r_up = 0.0
            if i == 0:
                r_up += dg[i, j, j]
            if j == 0:
                r_up -= dg[i, i, j]
            for l in range(n):
                r_up += g0[i, i, l] * g0[l, j, j] - g0[i, j, l] * g0[l, i, j]
            K[i, j] = a0[i] * r_up / (a0[i] * a0[j])
    return K


def unit_ball_volume(k):
    """Volume of the unit ball in R^k via omega_k = omega_{k-2} * 2 pi / k."""
    if k < 0:
        raise ValueError("dimension must be >= 0")
    omega = [1.0, 2.0]
    for m in range(2, k + 1):
        omega.append(omega[m - 2] * 2.0 * np.pi / m)
    return omega[k]


def cusp_volume_ratio(n):
    """Ratio vol(cusp) / vol(boundary torus) for the warped cusp metric."""
    n = _check_dimension(n)
    return 1.0 / (n - 1)


def torus_diameter_bound(n, volume, inj):
    """Diameter bound for a flat (n-1)-torus with given volume and injectivity radius."""
    n = _check_dimension(n)
    if volume <= 0 or inj <= 0:
        raise ValueError("volume and injectivity radius must be positive")
    omega = unit_ball_volume(n - 1)
    return 2.0 * (volume / (omega * inj ** (n - 1)) + 1.0) * inj


def radius_for_meridian(n, ell):
    """Cap radius R solving V(R) = (ell / beta)^2 for a meridian of length ell."""
    n = _check_dimension(n)
    if ell <= 0:
        raise ValueError("meridian length must be positive")
    rp = r_plus(n)
    beta = theta_period(n)
    target = (ell / beta) ** 2
    hi = rp + max(2.0, ell / beta + 2.0)

    def gap(r):
        return _v_from_offset(n, (r - rp) / rp, rp) - target

    return brentq(gap, rp, hi, xtol=1e-15, rtol=8.881784197001252e-16)


def metric_gap(n, r):
    """Deviation of the cap metric from the model cusp metric at radius r.

    Returns the two nonzero components in the unit frame of the cusp metric,
    (2 r^(-n+1) r^2/V, -2 r^(-n+1)), and their root-sum-square.
    """
    n = _check_dimension(n)
    r = np.asarray(r, dtype=float)
    rp = r_plus(n)
    if np.any(r <= rp + 1.0):
        raise ValueError("metric_gap requires r > r_plus + 1")
    v = r**2 - 2.0 * r ** (3 - n)
    c_rr = 2.0 * r ** (1 - n) * (r**2 / v)
    c_tt = -2.0 * r ** (1 - n)
    norm = np.hypot(c_rr, c_tt)
    if r.ndim == 0:
        return float(c_rr), float(c_tt), float(norm)
    return c_rr, c_tt, norm


# -- grids and profiles -------------------------------------------------------

@dataclass
class RadialGrid:
    """Sample points in the radial coordinate, either r or arclength s."""

    coordinate: str
    nodes: np.ndarray
    n: int
    exterior: bool = False   # when True, r-grids must not dip below r_plus

    def __post_init__(self):
        self.n = _check_dimension(self.n)
        if self.coordinate not in ("r", "s"):
            raise ValueError("coordinate must be 'r' or 's'")
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.size < 3:
            raise ValueError("need at least 3 nodes")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if self.coordinate == "r" and self.exterior:
            if self.nodes[0] < r_plus(self.n) * (1.0 - 1e-12):
                raise ValueError("exterior r-grid must start at or above r_plus")

    @property
    def spacing(self):
        return float(self.nodes[1] - self.nodes[0])

    def is_uniform(self, rtol=1e-8):
        d = np.diff(self.nodes)
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]))


@dataclass
class DiagonalMetricProfile:
    """Torus-invariant diagonal metric ds^2 + sum_i f_i(s)^2 dx_i^2.

    f has shape (n-1, N); f[0] is the theta-fiber radius and may vanish at
    the first node only (closed cap).  r holds the model radial coordinate
    of each node when one is meaningful.
    """

    n: int
    s: np.ndarray
    f: np.ndarray
    theta_period: float
    r: np.ndarray | None = None
    cap_radius: float | None = None

    def __post_init__(self):
        self.n = _check_dimension(self.n)
        self.s = np.asarray(self.s, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (self.n - 1, self.s.size):
            raise ValueError("f must have shape (n-1, len(s))")
        interior = self.f[:, 1:] if self.has_cap else self.f
        if np.any(interior <= 0.0):
            raise ValueError("profile functions must be positive away from the cap")

    @property
    def has_cap(self):
        return bool(self.s[0] == 0.0 and self.f[0, 0] == 0.0)

    @property
    def grid(self):
        return RadialGrid("s", self.s, self.n)

    @property
    def spacing(self):
        return float(self.s[1] - self.s[0])

    def torus_block(self):
        """M(s) = diag(f_2^2, ..., f_n^2) as an (N, n-1, n-1) array."""
        N = self.s.size
        M = np.zeros((N, self.n - 1, self.n - 1))
        idx = np.arange(self.n - 1)
        M[:, idx, idx] = (self.f**2).T
        return M

    def copy(self):
        return DiagonalMetricProfile(
            self.n, self.s.copy(), self.f.copy(), self.theta_period,
            None if self.r is None else self.r.copy(), self.cap_radius)


@dataclass
class BlockMetricProfile:
    """Torus-invariant metric ds^2 + M(s) with a full symmetric torus block."""

    n: int
    s: np.ndarray
    M: np.ndarray
    theta_period: float
    r: np.ndarray | None = None

    def __post_init__(self):
        self.n = _check_dimension(self.n)
        self.s = np.asarray(self.s, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        if self.M.shape != (self.s.size, self.n - 1, self.n - 1):
            raise ValueError("M must have shape (len(s), n-1, n-1)")
        if np.any(np.abs(self.M - np.swapaxes(self.M, 1, 2)) > 1e-12):
            raise ValueError("torus block must be symmetric")


@dataclass
class FlatTorusData:
    """Lattice basis of the boundary (n-1)-torus and its meridian length."""

    basis: np.ndarray
    meridian_length: float

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        k = self.basis.shape[0]
        if self.basis.shape != (k, k) or abs(np.linalg.det(self.basis)) < 1e-14:
            raise ValueError("lattice basis must be square and nonsingular")
        if self.meridian_length <= 0:
            raise ValueError("meridian length must be positive")


@dataclass
class TrivialVariation:
    """Symmetric matrix u acting on the torus block as g -> g + r^2 u_ij dx_i dx_j.

    The deformation preserves the Einstein condition exactly iff tr u = 0.
    """

    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        k = self.u.shape[0]
        if self.u.shape != (k, k) or np.any(np.abs(self.u - self.u.T) > 1e-12):
            raise ValueError("u must be a symmetric square matrix")

    @property
    def trace(self):
        return float(np.trace(self.u))

    @property
    def is_einstein(self):
        return abs(self.trace) < 1e-12

    @property
    def size(self):
        return float(np.linalg.norm(self.u))

    def is_diagonal(self, tol=0.0):
        off = self.u - np.diag(np.diag(self.u))
        return bool(np.all(np.abs(off) <= tol))


@dataclass
class BlackHoleProfile:
    """Scalar data of the cap metric in dimension n."""

    n: int
    r_plus: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        self.n = _check_dimension(self.n)
        self.r_plus = r_plus(self.n)
        self.beta = theta_period(self.n)

    def v(self, r):
        return v_profile(self.n, r)


# -- arclength machinery -------------------------------------------------------

class ArclengthMap:
    """Arclength s(r) = int_{r_+}^{r} sqrt(g_rr) and its inverse.

    The integral is taken in the smoothing variable sigma = sqrt(2 (r - r_+)),
    where the integrand sigma * sqrt(g_rr) is analytic through the cap, and
    tabulated densely; both directions are cubic-spline interpolants of the
    table, accurate to ~1e-12 relative.  g_rr defaults to 1/V (the cap
    metric); glued metrics pass their own radial coefficient.
    """

    def __init__(self, n, r_max, grr=None, dsigma=2e-5):
        self.n = _check_dimension(n)
        self.rp = r_plus(self.n)
        if r_max <= self.rp:
            raise ValueError("r_max must exceed r_plus")
        self.r_max = float(r_max)
        sigma_max = np.sqrt(2.0 * (self.r_max - self.rp)) * 1.005
        m = int(np.clip(np.ceil(sigma_max / dsigma), 50_001, 1_500_001))
        sig = np.linspace(0.0, sigma_max, m)
        x = sig**2 / (2.0 * self.rp)
        v = _v_from_offset(self.n, x, self.rp)
        phi = np.empty_like(sig)
        phi[0] = np.sqrt(2.0 / ((self.n - 1) * self.rp))
        if grr is None:
            phi[1:] = sig[1:] / np.sqrt(v[1:])
        else:
            r = self.rp * (1.0 + x)
            g = np.asarray(grr(r[1:], v[1:]), dtype=float)
            phi[1:] = sig[1:] * np.sqrt(g)
        s = cumulative_simpson(phi, x=sig, initial=0.0)
        self._s_of_sigma = CubicSpline(sig, s)
        self._sigma_of_s = CubicSpline(s, sig)
        self.s_max = float(self._s_of_sigma(np.sqrt(2.0 * (self.r_max - self.rp))))

    def sigma_of_r(self, r):
        return np.sqrt(2.0 * (np.asarray(r, dtype=float) - self.rp))

    def s_of_r(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.rp - 1e-12) or np.any(r > self.r_max * 1.005):
            raise ValueError("r outside the tabulated range")
        return self._s_of_sigma(self.sigma_of_r(np.maximum(r, self.rp)))

    def sigma_of_s(self, s):
        s = np.asarray(s, dtype=float)
        sig = self._sigma_of_s(s)
        return np.maximum(sig, 0.0)

    def r_of_s(self, s):
        sig = self.sigma_of_s(s)
        return self.rp + 0.5 * sig**2

    def offset_of_s(self, s):
        """(r - r_+)/r_+ at arclength s, at full relative precision."""
        sig = self.sigma_of_s(s)
        return sig**2 / (2.0 * self.rp)


def arclength_map(profile: BlackHoleProfile, grid: RadialGrid):
    """s(r) samples on an exterior r-grid plus the inverse interpolant.

    Near r_+ the quadrature runs in the substitution r = r_+ + sigma^2/2,
    removing the inverse-square-root endpoint singularity.
    """
    if grid.coordinate != "r":
        raise ValueError("arclength_map expects an r-grid")
    if grid.nodes[0] < profile.r_plus * (1.0 - 1e-12):
        raise ValueError("grid must start at or above r_plus")
    amap = ArclengthMap(profile.n, float(grid.nodes[-1]))
    s = amap.s_of_r(grid.nodes)
    if np.any(np.diff(s) <= 0):
        raise RuntimeError("arclength quadrature produced a non-monotone map")
    return s, amap


def black_hole_profile(n, r_max, nodes):
    """Cap metric sampled on a uniform arclength grid over r in [r_plus, r_max]."""
    n = _check_dimension(n)
    if nodes < 8:
        raise ValueError("need at least 8 nodes")
    amap = ArclengthMap(n, r_max)
    s = np.linspace(0.0, amap.s_max, nodes)
    x = amap.offset_of_s(s)
    x[0] = 0.0
    r = amap.rp * (1.0 + x)
    f = np.empty((n - 1, nodes))
    f[0] = np.sqrt(_v_from_offset(n, x, amap.rp))
    f[0, 0] = 0.0
    f[1:] = r
    return DiagonalMetricProfile(n, s, f, theta_period(n), r=r)


def cusp_profile(n, s_lo, s_hi, nodes, rate=1.0):
    """Model cusp end f_i = exp(rate * s) on a uniform arclength grid.

    rate = 1 is the hyperbolic cusp metric; other rates give deliberately
    non-Einstein profiles for residual tests.
    """
    n = _check_dimension(n)
    s = np.linspace(float(s_lo), float(s_hi), nodes)
    f = np.tile(np.exp(rate * s), (n - 1, 1))
    return DiagonalMetricProfile(n, s, f, theta_period(n), r=np.exp(s))


def apply_trivial_variation(profile: DiagonalMetricProfile, u: TrivialVariation):
    """Add r^2 u_ij dx_i dx_j to the torus block of a diagonal profile.

    Diagonal u keeps the profile diagonal; otherwise a BlockMetricProfile
    is returned.  Raises if the deformed block fails to stay positive
    definite (in particular if I + u is not positive definite).
    """
    if profile.r is None:
        raise ValueError("profile must carry r-samples to apply a trivial variation")
    k = profile.n - 1
    if u.u.shape != (k, k):
        raise ValueError(f"u must be {k}x{k} for an n={profile.n} profile")
    if np.any(np.linalg.eigvalsh(np.eye(k) + u.u) <= 0):
        raise ValueError("I + u must be positive definite")
    r2 = profile.r**2
    if u.is_diagonal():
        f2 = profile.f**2 + np.diag(u.u)[:, None] * r2[None, :]
        if np.any(f2[:, 1:] <= 0) or (not profile.has_cap and np.any(f2 <= 0)):
            raise ValueError("deformed torus block is not positive definite")
        f = np.sqrt(np.maximum(f2, 0.0))
        if profile.has_cap:
            f[0, 0] = 0.0
        return DiagonalMetricProfile(profile.n, profile.s.copy(), f,
                                     profile.theta_period, r=profile.r.copy(),
                                     cap_radius=profile.cap_radius)
    M = profile.torus_block() + r2[:, None, None] * u.u[None, :, :]
    start = 1 if profile.has_cap else 0
    if np.any(np.linalg.eigvalsh(M[start:]) <= 0):
        raise ValueError("deformed torus block is not positive definite")
    return BlockMetricProfile(profile.n, profile.s.copy(), M,
                              profile.theta_period, r=profile.r.copy())


def boundary_torus_data(n, ell):
    """Flat torus of the cap boundary: rectangular lattice with the meridian
    of length ell as its first basis vector.

    The meridian is the theta-circle at r = R, of length beta * sqrt(V(R)) = ell.
    """
    n = _check_dimension(n)
    R = radius_for_meridian(n, ell)
    basis = np.eye(n - 1)
    basis[0, 0] = ell
    basis[1:, 1:] *= R
    return FlatTorusData(basis, ell), R
