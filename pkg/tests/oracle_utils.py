"""Shared test oracles: extended-precision finite differences and fixtures.

The derivative oracle evaluates each measure family in 80-bit extended
precision, so central differences at step 1e-5 resolve second derivatives to
~1e-9 relative (double precision would bottom out right at the 1e-6
tolerance).  It never touches the analytic bundle code it checks.
"""

import numpy as np

from cqdyn import measure

LD = np.longdouble
CLD = np.clongdouble

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


class ConstFn:
    """Picklable constant function of (z, t) for noise specifications."""

    def __init__(self, value):
        self.value = value

    def __call__(self, z, t):
        return np.full_like(np.asarray(z, dtype=float), self.value)


def eval_g_long(family, pts):
    """Measure value at a batch of extended-precision states (m, n)."""
    pts = np.asarray(pts, dtype=CLD)
    if isinstance(family, measure.NormLinear):
        s = (pts.conj() * pts).real.sum(axis=-1)
        return LD(family.c) * s + LD(family.c0)
    if isinstance(family, measure.NormPower):
        s = (pts.conj() * pts).real.sum(axis=-1)
        return s ** family.p
    if isinstance(family, measure.RealAmplitude):
        r = pts + pts.conj()
        return (r * r).real.sum(axis=-1)
    if isinstance(family, measure.QuadraticForm):
        t = family.t_matrix.astype(CLD)
        tx = pts @ t.T
        return (pts.conj() * tx).real.sum(axis=-1)
    raise TypeError(f"unsupported family {family!r}")


def fd_bundle(family, x, h=1e-5):
    """Central-difference derivative bundle (grad, S, H) at one state.

    Real-coordinate derivatives are combined into holomorphic/antiholomorphic
    ones: d/dx = (d/da - i d/db)/2 with x = a + i b.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    base = x.astype(CLD)
    hl = LD(h)

    def shift(*pairs):
        out = base.copy()
        for coord, delta in pairs:
            k, part = divmod(coord, 2)
            out[k] = out[k] + (delta if part == 0 else 1j * delta)
        return out

    nc = 2 * n
    # first derivatives in the 2n real coordinates
    d1 = np.empty(nc, dtype=LD)
    for c in range(nc):
        d1[c] = (eval_g_long(family, shift((c, hl))[None, :])[0]
                 - eval_g_long(family, shift((c, -hl))[None, :])[0]) / (2 * hl)
    # real-coordinate Hessian
    g0 = eval_g_long(family, base[None, :])[0]
    d2 = np.empty((nc, nc), dtype=LD)
    for c in range(nc):
        d2[c, c] = (eval_g_long(family, shift((c, hl))[None, :])[0]
                    - 2 * g0
                    + eval_g_long(family, shift((c, -hl))[None, :])[0]) / hl ** 2
        for d in range(c + 1, nc):
            pp = eval_g_long(family, shift((c, hl), (d, hl))[None, :])[0]
            pm = eval_g_long(family, shift((c, hl), (d, -hl))[None, :])[0]
            mp = eval_g_long(family, shift((c, -hl), (d, hl))[None, :])[0]
            mm = eval_g_long(family, shift((c, -hl), (d, -hl))[None, :])[0]
            d2[c, d] = d2[d, c] = (pp - pm - mp + mm) / (4 * hl ** 2)

    grad = np.empty(n, dtype=complex)
    s_mat = np.empty((n, n), dtype=complex)
    h_mat = np.empty((n, n), dtype=complex)
    for i in range(n):
        grad[i] = 0.5 * (float(d1[2 * i]) - 1j * float(d1[2 * i + 1]))
        for j in range(n):
            aa = float(d2[2 * i, 2 * j])
            bb = float(d2[2 * i + 1, 2 * j + 1])
            ab = float(d2[2 * i, 2 * j + 1])
            ba = float(d2[2 * i + 1, 2 * j])
            s_mat[i, j] = 0.25 * ((aa - bb) - 1j * (ab + ba))
            h_mat[i, j] = 0.25 * ((aa + bb) + 1j * (ba - ab))
    return grad, s_mat, h_mat


def bundle_max_rel_error(family, x, h=1e-5):
    """Worst relative deviation of the analytic bundle from the oracle."""
    bun = measure.grad_bundle(family, x)
    fg, fs, fh = fd_bundle(family, x, h=h)
    errs = []
    for an, fd in ((bun.grad, fg), (bun.s_matrix, fs), (bun.h_matrix, fh)):
        scale = max(1.0, float(np.max(np.abs(an))))
        errs.append(float(np.max(np.abs(an - fd))) / scale)
    return max(errs)
