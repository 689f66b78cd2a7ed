"""Finite-difference machinery for the cohomogeneity-one Einstein system.

The residual of the diagonal system is assembled from per-component
derivative ratios d_i = f_i'/f_i and q_i = f_i''/f_i:

    E1_ii / (2 sqrt(det M)) = q_i + d_i (S - d_i) - (n-1),   S = sum_j d_j,
    E2 = 4 e_2({d_i}) - 2 (n-1)(n-2),

which is the expanded form of (sqrt(det M) M' M^{-1})' - 2(n-1) sqrt(det M)
for M = diag(f_i^2); the algebraic cancellation of (f_2'/f_2)^2 keeps every
discretized quantity finite through the cap where f_2 vanishes.

Two stencil families are used:

* "matched" 3-point stencils: standard central differences corrected by the
  locally estimated curvature ratio z = (h_+ + h_- - 2 h_0)/h_0, making them
  exact on exponentials exp(a s) and trigonometric profiles.  The cusp
  profile f = e^s therefore has residual at roundoff level, and the
  truncation constants on near-Einstein ends are small.
* a fourth-order 5-point window on s < S_ZONE for capped profiles, applied
  to the even-parity variables (g = f_2/s for the collapsing fiber, f_j
  directly for the rest) with ghost values reflected across s = 0.  The
  plain 3-point constants near the cap grow like the square of the core
  curvature and would dominate the global error; inside the window the
  truncation is pushed to fourth order so the global error is governed by
  the smooth far field and stays second order under refinement.

Every ratio comes with exact partial derivatives with respect to the
profile samples, so the Newton linearization is the exact derivative of the
reported residual.
"""

from __future__ import annotations

import numpy as np

S_ZONE = 2.0
_Z_CLAMP = 4.0

_W1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_W2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_G0_COEF = np.array([1.5, -0.6, 0.1])   # g(0) from g(1..3), even extension, O(d^6)


def _c1(z):
    return 1.0 + z / 6.0 + z * z / 120.0 + z**3 / 5040.0


def _c1p(z):
    return 1.0 / 6.0 + z / 60.0 + z * z / 1680.0


def _c2(z):
    return 1.0 + z / 12.0 + z * z / 360.0 + z**3 / 20160.0


def _c2p(z):
    return 1.0 / 12.0 + z / 180.0 + z * z / 6720.0


def matched_ratios(h, delta, partials=False):
    """d = h'/h and q = h''/h at interior nodes by curvature-matched stencils.

    Returns (d, q) and, when requested, the partial derivatives with respect
    to (h[k-1], h[k], h[k+1]) as arrays of shape (3, N-2).
    """
    a = h[2:]
    b = h[:-2]
    c = h[1:-1]
    z_raw = (a + b - 2.0 * c) / c
    z = np.clip(z_raw, -_Z_CLAMP, _Z_CLAMP)
    live = (z_raw > -_Z_CLAMP) & (z_raw < _Z_CLAMP)
    c1, c2 = _c1(z), _c2(z)
    q = z_raw / (delta * delta * c2)
    d = (a - b) / (2.0 * delta * c * c1)
    if not partials:
        return d, q
    c1r = _c1p(z) / c1
    c2r = _c2p(z) / c2
    dz_a = np.where(live, 1.0 / c, 0.0)
    dz_c = np.where(live, -(z_raw + 2.0) / c, 0.0)
    inv = 1.0 / (delta * delta * c2)
    # q = z_raw / (d^2 c2(z)); z enters both numerator and the correction
    dq_a = inv * (1.0 / c) - q * c2r * dz_a
    dq_c = inv * (-(z_raw + 2.0) / c) - q * c2r * dz_c
    dd_a = 1.0 / (2.0 * delta * c * c1) - d * c1r * dz_a
    dd_b = -1.0 / (2.0 * delta * c * c1) - d * c1r * dz_a
    dd_c = -d / c - d * c1r * dz_c
    pd = np.stack([dd_b, dd_c, dd_a])
    pq = np.stack([dq_a, dq_c, dq_a])   # symmetric in a <-> b
    return d, q, pd, pq


def _fold(idx):
    return abs(idx)


def zone_rows(h, delta, kmax):
    """Fourth-order d, q at nodes 1..kmax with even-parity ghosts across 0.

    Returns (d, q, rows) where rows[k-1] = (cols, dd, dq) lists the partial
    derivatives with respect to h[col].
    """
    d = np.empty(kmax)
    q = np.empty(kmax)
    rows = []
    for k in range(1, kmax + 1):
        cols = {}
        for m, (w1, w2) in enumerate(zip(_W1, _W2)):
            j = _fold(k + m - 2)
            prev = cols.get(j, (0.0, 0.0))
            cols[j] = (prev[0] + w1, prev[1] + w2)
        h0 = h[k]
        p = sum(w[0] * h[j] for j, w in cols.items())
        r = sum(w[1] * h[j] for j, w in cols.items())
        dk = p / (delta * h0)
        qk = r / (delta * delta * h0)
        d[k - 1] = dk
        q[k - 1] = qk
        cidx = np.fromiter(cols.keys(), dtype=int)
        dd = np.array([w[0] for w in cols.values()]) / (delta * h0)
        dq = np.array([w[1] for w in cols.values()]) / (delta * delta * h0)
        sel = cidx == k
        dd[sel] -= dk / h0
        dq[sel] -= qk / h0
        rows.append((cidx, dd, dq))
    return d, q, rows


class ComponentStencil:
    """Derivative ratios of one profile component with exact partials.

    parts[k-1] is a triple (cols, dd, dq): the derivative of d[k-1] resp.
    q[k-1] with respect to the underlying sample array at the listed columns.
    """

    def __init__(self, d, q, parts):
        self.d = d
        self.q = q
        self.parts = parts


def plain_component(h, delta, kz=0, partials=False):
    """Stencils for a smooth positive component (f_j, or g off the cap)."""
    nint = h.size - 2
    if partials:
        d, q, pd, pq = matched_ratios(h, delta, partials=True)
    else:
        d, q = matched_ratios(h, delta)
    if kz > 0:
        d4, q4, rows4 = zone_rows(h, delta, kz)
        d = d.copy(); q = q.copy()
        d[:kz] = d4
        q[:kz] = q4
    if not partials:
        return ComponentStencil(d, q, None)
    parts = []
    for k in range(1, nint + 1):
        i = k - 1
        if kz > 0 and k <= kz:
            parts.append(rows4[i])
        else:
            cols = np.array([k - 1, k, k + 1])
            parts.append((cols, pd[:, i].copy(), pq[:, i].copy()))
    return ComponentStencil(d, q, parts)


def capped_theta_component(f2, s, delta, kz, partials=False):
    """Stencils for the collapsing fiber via the even variable g = f_2/s.

    d = 1/s + (Dg)/g and q = 2 (Dg)/(s g) + (D2g)/g; partials are chained
    back to the f_2 samples (g[0] is the O(d^6) even extrapolation from
    g[1..3], so nodes 1..3 pick up its sensitivity).
    """
    N = f2.size
    g = np.empty(N)
    g[1:] = f2[1:] / s[1:]
    g[0] = _G0_COEF @ g[1:4]
    base = plain_component(g, delta, kz=kz, partials=partials)
    sm = s[1:-1]
    d = 1.0 / sm + base.d
    q = 2.0 * base.d / sm + base.q
    if not partials:
        return ComponentStencil(d, q, None)
    parts = []
    for k in range(1, N - 1):
        cols_g, ddg, dqg = base.parts[k - 1]
        # q = 2 d_g / s + q_g  => dq = (2/s) ddg + dqg ; d = 1/s + d_g
        dq_g = 2.0 * ddg / s[k] + dqg
        acc = {}
        for cg, vd, vq in zip(cols_g, ddg, dq_g):
            if cg == 0:
                for m in range(3):
                    node = m + 1
                    w = _G0_COEF[m] / s[node]
                    e = acc.setdefault(node, [0.0, 0.0])
                    e[0] += vd * w
                    e[1] += vq * w
            else:
                w = 1.0 / s[cg]
                e = acc.setdefault(int(cg), [0.0, 0.0])
                e[0] += vd * w
                e[1] += vq * w
        cols = np.fromiter(acc.keys(), dtype=int)
        vals = np.array(list(acc.values()))
        parts.append((cols, vals[:, 0], vals[:, 1]))
    return ComponentStencil(d, q, parts)


class DiagonalSystem:
    """Residual of the diagonal Einstein system and its exact linearization."""

    def __init__(self, n, s, f, partials=False, s_zone=None):
        self.n = n
        self.s = s
        self.f = f
        self.delta = float(s[1] - s[0])
        N = s.size
        capped = bool(s[0] == 0.0 and f[0, 0] == 0.0)
        self.capped = capped
        zone = S_ZONE if s_zone is None else s_zone
        if capped:
            kz = int(np.searchsorted(s, zone))
            self.kz = int(np.clip(kz, 3, N - 3))
        else:
            self.kz = 0
        comps = []
        for i in range(n - 1):
            if capped and i == 0:
                comps.append(capped_theta_component(f[0], s, self.delta, self.kz,
                                                    partials=partials))
            else:
                comps.append(plain_component(f[i], self.delta, kz=self.kz,
                                             partials=partials))
        self.comps = comps
        self.d = np.vstack([c.d for c in comps])
        self.q = np.vstack([c.q for c in comps])
        self.S = self.d.sum(axis=0)

    def residual(self):
        """(E1/sqrt(det M) rows, E2) at the interior nodes."""
        n = self.n
        e1n = 2.0 * (self.q + self.d * (self.S - self.d) - (n - 1))
        s2 = (self.d * self.d).sum(axis=0)
        e2 = 2.0 * (self.S * self.S - s2) - 2.0 * (n - 1) * (n - 2)
        return e1n, e2

    def sqrt_det(self):
        return np.prod(self.f[:, 1:-1], axis=0)

    def apply_linearization(self, delta_w):
        """Directional derivative of (E1n, E2) for delta log f_i = delta_w[i].

        delta_w has shape (n-1, N); the derivative is exact for the discrete
        scheme (same partials as the Newton matrix).
        """
        n = self.n
        nint = self.s.size - 2
        dd = np.zeros((n - 1, nint))
        dq = np.zeros((n - 1, nint))
        for i, comp in enumerate(self.comps):
            dfi = delta_w[i] * self.f[i]
            for k in range(1, nint + 1):
                cols, pd, pq = comp.parts[k - 1]
                dd[i, k - 1] = float(pd @ dfi[cols])
                dq[i, k - 1] = float(pq @ dfi[cols])
        dS = dd.sum(axis=0)
        de1 = 2.0 * (dq + dd * (self.S - 2.0 * self.d) + self.d * dS)
        de2 = 4.0 * ((self.S - self.d) * dd).sum(axis=0)
        return de1, de2

    def jacobian_triples(self, column_of):
        """COO triples of the E1 rows with respect to the log-profile unknowns.

        column_of(i, k) maps component/node to an unknown index, or -1 for
        pinned samples (the cap value of f_2 and Dirichlet nodes).  Row
        (i, k) is placed by the caller; here rows are indexed 0..(n-1)*nint-1
        node-major.
        """
        n = self.n
        nint = self.s.size - 2
        rows, cols, vals = [], [], []
        for k in range(1, nint + 1):
            ki = k - 1
            row0 = ki * (n - 1)
            S = self.S[ki]
            for j, comp in enumerate(self.comps):
                cgrid, pd, pq = comp.parts[ki]
                fj = self.f[j]
                for cj, pdv, pqv in zip(cgrid, pd, pq):
                    u = column_of(j, int(cj))
                    if u < 0:
                        continue
                    scale = fj[cj]
                    # own-row contribution (i = j)
                    own = 2.0 * (pqv + pdv * (S - self.d[j, ki])) * scale
                    rows.append(row0 + j); cols.append(u); vals.append(own)
                    # cross rows i != j via dS
                    for i in range(n - 1):
                        if i == j:
                            continue
                        cross = 2.0 * self.d[i, ki] * pdv * scale
                        rows.append(row0 + i); cols.append(u); vals.append(cross)
        return np.array(rows), np.array(cols), np.array(vals)


# -- full torus block (non-diagonal) ------------------------------------------

def block_residual(n, s, M, dM=None):
    """Residual of the matrix system for a full torus block M(s).

    Plain second-order central stencils; requires M positive definite at
    every node (no cap support on this path).  With dM given, also returns
    the exact directional derivative of (E1n, E2) in that direction.

    E1 = sym((u M' M^{-1})' - 2(n-1) u I) / u  with u = sqrt(det M), expanded
    as tr(P)/2 P + Q - P^2 - 2(n-1) I for P = M'M^{-1}, Q = M''M^{-1}.
    """
    delta = float(s[1] - s[0])
    Mi = np.linalg.inv(M[1:-1])
    D1 = (M[2:] - M[:-2]) / (2.0 * delta)
    D2 = (M[2:] + M[:-2] - 2.0 * M[1:-1]) / (delta * delta)
    P = D1 @ Mi
    Q = D2 @ Mi
    trP = np.trace(P, axis1=1, axis2=2)
    T = 0.5 * trP[:, None, None] * P + Q - P @ P
    k = n - 1
    eye = np.eye(k)
    X = T - 2.0 * (n - 1) * eye[None, :, :]
    e1n = 0.5 * (X + np.swapaxes(X, 1, 2))
    e2 = 0.5 * (trP**2 - np.trace(P @ P, axis1=1, axis2=2)) - 2.0 * (n - 1) * (n - 2)
    if dM is None:
        return e1n, e2
    dMi = -Mi @ dM[1:-1] @ Mi
    dD1 = (dM[2:] - dM[:-2]) / (2.0 * delta)
    dD2 = (dM[2:] + dM[:-2] - 2.0 * dM[1:-1]) / (delta * delta)
    dP = dD1 @ Mi + D1 @ dMi
    dQ = dD2 @ Mi + D2 @ dMi
    dtrP = np.trace(dP, axis1=1, axis2=2)
    dT = (0.5 * dtrP[:, None, None] * P + 0.5 * trP[:, None, None] * dP
          + dQ - dP @ P - P @ dP)
    de1 = 0.5 * (dT + np.swapaxes(dT, 1, 2))
    de2 = trP * dtrP - np.trace(P @ dP, axis1=1, axis2=2)
    return e1n, e2, de1, de2
