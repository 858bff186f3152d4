"""Pointwise radial kernels for isotropic dissipation potentials.

Every built-in isotropic potential is a scalar profile ``phi(r)`` of the
Frobenius norm ``r = |D|``.  The hot loops (evaluating the profile, its
Moreau-Yosida envelope and the numerical Legendre transform at every
collocation point) live here in two interchangeable backends:

* ``numba``: scalar loops compiled with ``@njit``;
* ``numpy``: vectorized array code.

The numba backend is used when numba imports and the environment variable
``DRHEO_DISABLE_NUMBA`` is unset (or ``0``).  Both backends are always
importable as :data:`numpy_backend` and :data:`numba_backend` (the latter is
``None`` without numba) so they can be compared against each other.

Parameter vector layout (``prm``, float64, length 7)::

    [mu, mu1, mu2, p, tau0, eps_reg, smoothing]
"""
import os
import types

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

NEWTONIAN = 0
POWER_LAW = 1
CARREAU = 2
BINGHAM = 3
ZERO = 4

N_PARAMS = 7
R_MAX = 1e100
GOLDEN_ITERS = 40
NEWTON_ITERS = 60
_INVPHI = 0.6180339887498949


def _flag(name):
    return os.environ.get(name, "0").strip().lower() not in ("", "0", "false", "no")


# --- profiles -------------------------------------------------------------
# These three functions are shared verbatim by both backends: they branch
# only on scalar arguments, so they accept scalars (numba) or arrays (numpy).

def profile_phi(code, prm, r):
    mu, mu1, mu2, p, tau0, eps = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    if code == NEWTONIAN:
        return 0.5 * mu * r * r
    if code == POWER_LAW:
        if mu1 == 0.0:
            return mu2 ** (0.5 * (p - 2.0)) * np.power(r, p) / p
        return mu1 ** (0.5 * p) * np.expm1(0.5 * p * np.log1p(mu2 * r * r / mu1)) / (mu2 * p)
    if code == CARREAU:
        return 0.5 * mu * r * r + mu1 * np.expm1(0.5 * p * np.log1p(mu2 * r * r)) / (mu2 * p)
    if code == BINGHAM:
        s = np.sqrt(r * r + eps * eps)
        return 0.5 * mu * r * r + tau0 * r * r / (s + eps)
    return 0.0 * r


def profile_dphi(code, prm, r):
    mu, mu1, mu2, p, tau0, eps = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    if code == NEWTONIAN:
        return mu * r
    if code == POWER_LAW:
        if mu1 == 0.0:
            return mu2 ** (0.5 * (p - 2.0)) * np.power(r, p - 1.0)
        return np.power(mu1 + mu2 * r * r, 0.5 * (p - 2.0)) * r
    if code == CARREAU:
        return r * (mu + mu1 * np.power(1.0 + mu2 * r * r, 0.5 * (p - 2.0)))
    if code == BINGHAM:
        return mu * r + tau0 * r / np.sqrt(r * r + eps * eps)
    return 0.0 * r


def profile_d2phi(code, prm, r):
    mu, mu1, mu2, p, tau0, eps = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    if code == NEWTONIAN:
        return mu + 0.0 * r
    if code == POWER_LAW:
        if mu1 == 0.0:
            return (p - 1.0) * mu2 ** (0.5 * (p - 2.0)) * np.power(r, p - 2.0)
        q = mu1 + mu2 * r * r
        return np.power(q, 0.5 * (p - 4.0)) * (mu1 + (p - 1.0) * mu2 * r * r)
    if code == CARREAU:
        q = 1.0 + mu2 * r * r
        return mu + mu1 * np.power(q, 0.5 * (p - 4.0)) * (1.0 + (p - 1.0) * mu2 * r * r)
    if code == BINGHAM:
        s = np.sqrt(r * r + eps * eps)
        return mu + tau0 * eps * eps / (s * s * s)
    return 0.0 * r


# --- numba backend --------------------------------------------------------

def _build_numba_backend():
    jit = numba.njit(cache=True)
    phi = jit(profile_phi)
    dphi = jit(profile_dphi)
    d2phi = jit(profile_d2phi)

    @numba.njit(cache=True)
    def prox_radius(code, prm, r):
        # root of rho + lam * phi'(rho) = r on [0, r]
        lam = prm[6]
        if r == 0.0:
            return 0.0
        lo = 0.0
        hi = r
        rho = 0.5 * r
        for _ in range(200):
            f = rho + lam * dphi(code, prm, rho) - r
            if f > 0.0:
                hi = rho
            else:
                lo = rho
            fp = 1.0 + lam * d2phi(code, prm, rho)
            step = f / fp
            new = rho - step
            if not (new > lo and new < hi) or not np.isfinite(new):
                new = 0.5 * (lo + hi)
            if abs(new - rho) <= 1e-16 * r:
                rho = new
                break
            rho = new
        return rho

    @numba.njit(cache=True)
    def radial_eval(code, prm, r):
        n = r.shape[0]
        out_phi = np.empty(n)
        out_dphi = np.empty(n)
        out_d2 = np.empty(n)
        lam = prm[6]
        for i in range(n):
            ri = r[i]
            if lam > 0.0:
                rho = prox_radius(code, prm, ri)
                # both forms equal phi'(rho); pick the well-conditioned one
                g = (ri - rho) / lam if rho < 0.5 * ri else dphi(code, prm, rho)
                h = d2phi(code, prm, rho)
                out_phi[i] = phi(code, prm, rho) + (ri - rho) * (ri - rho) / (2.0 * lam)
                out_dphi[i] = g
                if np.isinf(h):
                    out_d2[i] = 1.0 / lam
                else:
                    out_d2[i] = h / (1.0 + lam * h)
            else:
                out_phi[i] = phi(code, prm, ri)
                out_dphi[i] = dphi(code, prm, ri)
                out_d2[i] = d2phi(code, prm, ri)
        return out_phi, out_dphi, out_d2

    @numba.njit(cache=True)
    def conj_scalar(code, prm, sigma):
        if sigma == 0.0:
            return 0.0
        if code == ZERO:
            return np.inf
        hi = 1.0
        while dphi(code, prm, hi) < sigma:
            hi *= 2.0
            if hi > R_MAX:
                g1 = sigma * hi - phi(code, prm, hi)
                g0 = 0.5 * sigma * hi - phi(code, prm, 0.5 * hi)
                if g1 - g0 > 1e-12 * max(1.0, abs(g1)):
                    return np.inf
                return g1
        while hi > 1e-300 and dphi(code, prm, 0.5 * hi) >= sigma:
            hi *= 0.5
        lo = 0.5 * hi
        if dphi(code, prm, lo) >= sigma:
            lo = 0.0
        # golden section on the concave objective sigma*r - phi(r)
        a = lo
        b = hi
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        gc = sigma * c - phi(code, prm, c)
        gd = sigma * d - phi(code, prm, d)
        for _ in range(GOLDEN_ITERS):
            if gc >= gd:
                b = d
                d = c
                gd = gc
                c = b - _INVPHI * (b - a)
                gc = sigma * c - phi(code, prm, c)
            else:
                a = c
                c = d
                gc = gd
                d = a + _INVPHI * (b - a)
                gd = sigma * d - phi(code, prm, d)
        r = 0.5 * (a + b)
        # Newton polish on phi'(r) = sigma, safeguarded by the bracket
        for _ in range(NEWTON_ITERS):
            f = dphi(code, prm, r) - sigma
            if f > 0.0:
                hi = r
            else:
                lo = r
            fp = d2phi(code, prm, r)
            new = r - f / fp
            if not (new > lo and new < hi) or not np.isfinite(new):
                new = 0.5 * (lo + hi)
            if abs(new - r) <= 4e-16 * r:
                r = new
                break
            r = new
        return sigma * r - phi(code, prm, r)

    @numba.njit(cache=True)
    def radial_conjugate(code, prm, sigma):
        n = sigma.shape[0]
        out = np.empty(n)
        lam = prm[6]
        for i in range(n):
            out[i] = conj_scalar(code, prm, sigma[i]) + 0.5 * lam * sigma[i] * sigma[i]
        return out

    return types.SimpleNamespace(
        name="numba", radial_eval=radial_eval, radial_conjugate=radial_conjugate
    )


# --- numpy backend --------------------------------------------------------

def _np_prox_radius(code, prm, r):
    lam = prm[6]
    lo = np.zeros_like(r)
    hi = r.copy()
    rho = 0.5 * r
    for _ in range(200):
        f = rho + lam * profile_dphi(code, prm, rho) - r
        hi = np.where(f > 0.0, rho, hi)
        lo = np.where(f > 0.0, lo, rho)
        new = rho - f / (1.0 + lam * profile_d2phi(code, prm, rho))
        bad = ~((new > lo) & (new < hi)) | ~np.isfinite(new)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - rho) <= 1e-16 * r
        rho = new
        if done.all():
            break
    return np.where(r == 0.0, 0.0, rho)


def _np_radial_eval(code, prm, r):
    r = np.asarray(r, dtype=np.float64)
    lam = prm[6]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if lam > 0.0:
            rho = _np_prox_radius(code, prm, r)
            h = profile_d2phi(code, prm, rho)
            phi = profile_phi(code, prm, rho) + (r - rho) ** 2 / (2.0 * lam)
            dphi = np.where(rho < 0.5 * r, (r - rho) / lam, profile_dphi(code, prm, rho))
            d2 = np.where(np.isinf(h), 1.0 / lam, h / (1.0 + lam * h))
        else:
            phi = profile_phi(code, prm, r)
            dphi = profile_dphi(code, prm, r)
            d2 = profile_d2phi(code, prm, r)
    return (np.asarray(phi, dtype=np.float64) + 0.0 * r,
            np.asarray(dphi, dtype=np.float64) + 0.0 * r,
            np.asarray(d2, dtype=np.float64) + 0.0 * r)


def _np_conj(code, prm, sigma):
    out = np.zeros_like(sigma)
    if code == ZERO:
        out[sigma != 0.0] = np.inf
        return out
    active = sigma != 0.0
    s = sigma[active]
    if s.size == 0:
        return out
    hi = np.ones_like(s)
    diverged = np.zeros(s.shape, dtype=bool)
    grow = profile_dphi(code, prm, hi) < s
    while grow.any():
        hi = np.where(grow, 2.0 * hi, hi)
        over = grow & (hi > R_MAX)
        diverged |= over
        grow = grow & ~over & (profile_dphi(code, prm, hi) < s)
    shrink = ~diverged & (hi > 1e-300) & (profile_dphi(code, prm, 0.5 * hi) >= s)
    while shrink.any():
        hi = np.where(shrink, 0.5 * hi, hi)
        shrink = shrink & (hi > 1e-300) & (profile_dphi(code, prm, 0.5 * hi) >= s)
    lo = 0.5 * hi
    lo = np.where(profile_dphi(code, prm, lo) >= s, 0.0, lo)

    def g(x):
        return s * x - profile_phi(code, prm, x)

    a, b = lo.copy(), hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(GOLDEN_ITERS):
        left = gc >= gd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - _INVPHI * (b - a), d)
        d_new = np.where(left, c, a + _INVPHI * (b - a))
        gc_old, gd_old = gc, gd
        c, d = c_new, d_new
        gc = np.where(left, g(c), gd_old)
        gd = np.where(left, gc_old, g(d))
    r = 0.5 * (a + b)
    for _ in range(NEWTON_ITERS):
        f = profile_dphi(code, prm, r) - s
        hi = np.where(f > 0.0, r, hi)
        lo = np.where(f > 0.0, lo, r)
        new = r - f / profile_d2phi(code, prm, r)
        bad = ~((new > lo) & (new < hi)) | ~np.isfinite(new)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - r) <= 4e-16 * r
        r = new
        if done.all():
            break
    val = g(r)
    if diverged.any():
        horizon = hi[diverged]
        sd = s[diverged]
        g1 = sd * horizon - profile_phi(code, prm, horizon)
        g0 = 0.5 * sd * horizon - profile_phi(code, prm, 0.5 * horizon)
        val[diverged] = np.where(g1 - g0 > 1e-12 * np.maximum(1.0, np.abs(g1)), np.inf, g1)
    out[active] = val
    return out


def _np_radial_conjugate(code, prm, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _np_conj(code, prm, sigma) + 0.5 * prm[6] * sigma * sigma


numpy_backend = types.SimpleNamespace(
    name="numpy", radial_eval=_np_radial_eval, radial_conjugate=_np_radial_conjugate
)
numba_backend = _build_numba_backend() if numba is not None else None

if numba_backend is not None and not _flag("DRHEO_DISABLE_NUMBA"):
    backend = numba_backend
else:
    backend = numpy_backend


def radial_eval(code, prm, r):
    """Return ``(phi, phi', phi'')`` of the (possibly smoothed) profile at radii ``r``."""
    r = np.ascontiguousarray(r, dtype=np.float64).ravel()
    return backend.radial_eval(int(code), np.asarray(prm, dtype=np.float64), r)


def radial_conjugate(code, prm, sigma):
    """Numerical Legendre transform of the radial profile, ``+inf`` where the sup diverges."""
    sigma = np.ascontiguousarray(sigma, dtype=np.float64).ravel()
    return backend.radial_conjugate(int(code), np.asarray(prm, dtype=np.float64), sigma)
