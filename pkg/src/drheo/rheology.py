"""Convex dissipation potentials, their conjugates and stress selection.

A model is a convex potential ``F`` on symmetric tensors with ``F(0) = 0``.
The viscous stress is selected from the subdifferential, ``S in dF(D)``, and
the Fenchel-Young gap ``F(D) + F*(S) - S:D`` measures how far a pair
``(S, D)`` is from satisfying the law.

Isotropic models are evaluated through a radial profile ``phi(|D|)`` with
``|.|`` the Frobenius norm::

    newtonian            phi = mu r^2 / 2                       (S = mu D)
    power_law            mu(r) = (mu1 + mu2 r^2)^((p-2)/2)
    carreau              mu(r) = mu + mu1 (1 + mu2 r^2)^((p-2)/2)
    bingham_regularized  mu(r) = mu + tau0 / sqrt(r^2 + eps_reg^2)

where ``mu(r) = phi'(r) / r`` is the secant viscosity.  ``anisotropic_wrap``
composes an isotropic base with a linear map, ``F_L(D) = F(L D)``, and
``euler`` is the wrap with ``L = 0``.

Field functions take tensors with the two component axes first, shape
``(d, d, *points)``; a single tensor is the case with no point axes.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError

KINDS = ("newtonian", "power_law", "carreau", "bingham_regularized", "anisotropic_wrap", "euler")
ISOTROPIC = ("newtonian", "power_law", "carreau", "bingham_regularized")
CONJUGATE_MODES = ("closed_form", "radial_numeric")

_CODES = {
    "newtonian": kernels.NEWTONIAN,
    "power_law": kernels.POWER_LAW,
    "carreau": kernels.CARREAU,
    "bingham_regularized": kernels.BINGHAM,
}

GAP_ABS_TOL = 1e-10
GAP_REL_TOL = 1e-10


def gap_tolerance(f, fstar):
    return GAP_ABS_TOL + GAP_REL_TOL * (abs(f) + abs(fstar))


def sym_basis(d):
    """Orthonormal basis of symmetric d x d tensors under the Frobenius product.

    Returned as a ``(d*d, m)`` matrix whose columns are the vectorized basis
    tensors, ``m = d (d + 1) / 2``.
    """
    cols = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
            cols.append(e.ravel())
    return np.array(cols).T


def sym_tensor(entries):
    """Build a symmetric tensor from the upper triangle of ``entries``."""
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
        raise DomainError(f"expected a 2x2 or 3x3 tensor, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("tensor has non-finite entries")
    return np.triu(a) + np.triu(a, 1).T


@dataclass(frozen=True, eq=False)
class RheologyModel:
    """Immutable, validated description of a dissipation potential.

    ``mu1`` and ``mu2`` are the power-law parameters; for ``carreau`` they are
    the excess zero-shear viscosity and the squared time constant, with
    ``mu`` the infinite-shear viscosity and ``p = n + 1``.  ``smoothing > 0``
    replaces the potential with its Moreau-Yosida envelope of that parameter.
    """

    kind: str
    mu: float = 1.0
    mu1: float = 0.0
    mu2: float = 1.0
    p: float = 2.0
    tau0: float = 0.0
    eps_reg: float = 1e-2
    L: np.ndarray = None
    base: "RheologyModel" = None
    smoothing: float = 0.0
    conjugate_mode: str = None
    _wrap: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown rheology kind {self.kind!r}")
        for name in ("mu", "mu1", "mu2", "p", "tau0", "eps_reg", "smoothing"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"rheology.{name} must be finite")
        if self.smoothing < 0:
            raise ConfigurationError("rheology.smoothing must be >= 0")
        self._validate_kind()
        mode = self.conjugate_mode
        if mode is None:
            mode = "closed_form" if self.has_closed_form_conjugate else "radial_numeric"
        if mode not in CONJUGATE_MODES:
            raise ConfigurationError(f"unknown conjugate mode {mode!r}")
        if mode == "closed_form" and not self.has_closed_form_conjugate:
            raise ConfigurationError(f"{self.kind} has no closed-form conjugate for these parameters")
        object.__setattr__(self, "conjugate_mode", mode)

    def _validate_kind(self):
        k = self.kind
        if k == "newtonian" and not self.mu > 0:
            raise ConfigurationError("newtonian requires mu > 0")
        if k == "power_law":
            if not self.p > 1:
                raise ConfigurationError("power_law requires p > 1")
            if not self.mu2 > 0 or self.mu1 < 0:
                raise ConfigurationError("power_law requires mu2 > 0 and mu1 >= 0")
        if k == "carreau":
            if not self.p > 1 or not self.mu2 > 0 or self.mu1 < 0 or self.mu < 0:
                raise ConfigurationError("carreau requires p > 1, mu2 > 0, mu >= 0, mu1 >= 0")
            if not self.mu + self.mu1 > 0:
                raise ConfigurationError("carreau requires mu + mu1 > 0")
        if k == "bingham_regularized":
            if self.mu < 0 or self.tau0 < 0 or not self.eps_reg > 0:
                raise ConfigurationError("bingham_regularized requires mu >= 0, tau0 >= 0, eps_reg > 0")
            if not self.mu + self.tau0 > 0:
                raise ConfigurationError("bingham_regularized requires mu + tau0 > 0")
        if k == "anisotropic_wrap":
            if self.base is None or self.base.kind not in ISOTROPIC:
                raise ConfigurationError("anisotropic_wrap requires an isotropic base model")
            if self.L is None:
                raise ConfigurationError("anisotropic_wrap requires the linear map L")
            object.__setattr__(self, "_wrap", _restricted_map(self.L))
        if k == "euler" and self.L is not None and np.any(np.asarray(self.L) != 0):
            raise ConfigurationError("euler is the wrap with L = 0")

    # -- derived properties --------------------------------------------------

    @property
    def profile(self):
        """The isotropic model whose radial profile drives this model, or None."""
        if self.kind in ISOTROPIC:
            return self
        if self.kind == "anisotropic_wrap":
            return self.base
        return None

    @property
    def code(self):
        prof = self.profile
        return kernels.ZERO if prof is None else _CODES[prof.kind]

    @property
    def params(self):
        prof = self.profile or self
        return np.array([prof.mu, prof.mu1, prof.mu2, prof.p, prof.tau0, prof.eps_reg,
                         prof.smoothing])

    @property
    def has_closed_form_conjugate(self):
        k = self.kind
        if k == "anisotropic_wrap":
            return self.base.has_closed_form_conjugate
        return (k in ("newtonian", "euler")
                or (k == "power_law" and self.mu1 == 0)
                or (k == "bingham_regularized" and self.mu == 0))

    @property
    def growth_exponent(self):
        """Effective power of F at infinity (0 for the Euler potential)."""
        k = self.kind
        if k == "euler":
            return 0.0
        if k == "anisotropic_wrap":
            return self.base.growth_exponent
        if k == "newtonian":
            return 2.0
        if k == "power_law":
            return self.p
        if k == "carreau":
            return max(self.p, 2.0) if self.mu > 0 else self.p
        return 2.0 if self.mu > 0 else 1.0

    @property
    def dim(self):
        """Spatial dimension fixed by ``L``, or None when any d is accepted."""
        if self._wrap is None:
            return None
        return self._wrap[2]


def _restricted_map(L):
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0] if L.ndim == 2 else -1
    d = {4: 2, 9: 3}.get(n)
    if d is None or L.shape != (n, n):
        raise ConfigurationError("rheology.L must be a 4x4 (d=2) or 9x9 (d=3) matrix")
    if not np.all(np.isfinite(L)):
        raise ConfigurationError("rheology.L has non-finite entries")
    B = sym_basis(d)
    image = L @ B
    skew = image - image.reshape(d, d, -1).transpose(1, 0, 2).reshape(d * d, -1)
    if np.abs(skew).max() > 1e-12 * (1.0 + np.abs(L).max()):
        raise ConfigurationError("rheology.L must map symmetric tensors to symmetric tensors")
    A = B.T @ image
    return A, np.linalg.pinv(A.T), d


def make_model(kind, **params):
    """Build a model; ``euler`` needs no parameters."""
    if kind == "anisotropic_wrap" and isinstance(params.get("base"), str):
        base_kind = params.pop("base")
        shared = {k: v for k, v in params.items() if k not in ("L", "conjugate_mode")}
        params["base"] = RheologyModel(base_kind, **shared)
    return RheologyModel(kind, **params)


# --- field evaluation -------------------------------------------------------

def _norm(D):
    return np.sqrt(np.sum(D * D, axis=(0, 1)))


def _to_coords(model, T):
    d = T.shape[0]
    if model.dim is not None and d != model.dim:
        raise DomainError(f"model L acts on d={model.dim} tensors, got d={d}")
    B = sym_basis(d)
    return B.T @ T.reshape(d * d, -1)


def _from_coords(x, shape):
    d = shape[0]
    return (sym_basis(d) @ x).reshape(shape)


def _check_finite(T):
    if not np.all(np.isfinite(T)):
        raise DomainError("non-finite tensor entries")


def evaluate(model, D):
    """Potential, selected stress and tangent viscosity at every point of ``D``.

    Returns ``(F, S, visc)``: ``F`` has the point shape, ``S`` the shape of
    ``D`` and ``visc`` is the larger of the secant and tangent viscosities
    (the stiffness scale used by the time-step limit).
    """
    D = np.asarray(D, dtype=np.float64)
    _check_finite(D)
    pts = D.shape[2:]
    if model.kind == "euler":
        z = np.zeros(pts)
        return z, np.zeros_like(D), z.copy()
    if model.kind == "anisotropic_wrap":
        A = model._wrap[0]
        y = A @ _to_coords(model, D)
        r = np.sqrt(np.sum(y * y, axis=0))
        phi, dphi, d2 = kernels.radial_eval(model.code, model.params, r)
        secant = _secant(dphi, d2, r)
        S = _from_coords(A.T @ (secant * y), D.shape)
        gain = np.linalg.norm(A, 2) ** 2
        visc = gain * np.maximum(secant, d2)
        return phi.reshape(pts), S, visc.reshape(pts)
    r = _norm(D).ravel()
    phi, dphi, d2 = kernels.radial_eval(model.code, model.params, r)
    secant = _secant(dphi, d2, r)
    S = D * secant.reshape(pts)
    visc = np.maximum(secant, d2)
    return phi.reshape(pts), S, visc.reshape(pts)


def _secant(dphi, d2, r):
    # phi'(r) / r, with the minimal selection 0 for the stress at r = 0
    out = np.zeros_like(r)
    np.divide(dphi, r, out=out, where=r > 0)
    return out


def secant_limit_at_zero(model):
    """Secant viscosity as |D| -> 0 (infinite for degenerate shear thinning)."""
    _, _, d2 = kernels.radial_eval(model.code, model.params, np.array([0.0]))
    return float(d2[0])


def potential(model, D):
    return evaluate(model, D)[0]


def stress(model, D):
    return evaluate(model, D)[1]


def conjugate(model, S):
    """``F*(S)`` at every point of ``S``; ``+inf`` outside the conjugate domain."""
    S = np.asarray(S, dtype=np.float64)
    _check_finite(S)
    pts = S.shape[2:]
    if model.kind == "euler":
        return np.where(_norm(S) == 0.0, 0.0, np.inf).reshape(pts)
    if model.kind == "anisotropic_wrap":
        A, At_pinv, _ = model._wrap
        s = _to_coords(model, S)
        y = At_pinv @ s
        resid = np.sqrt(np.sum((A.T @ y - s) ** 2, axis=0))
        scale = np.sqrt(np.sum(s * s, axis=0))
        feasible = resid <= 1e-9 * np.maximum(1.0, scale)
        sigma = np.sqrt(np.sum(y * y, axis=0))
        out = _radial_conjugate(model.base, sigma, model.base.smoothing)
        return np.where(feasible, out, np.inf).reshape(pts)
    sigma = _norm(S).ravel()
    return _radial_conjugate(model, sigma, model.smoothing).reshape(pts)


def _radial_conjugate(model, sigma, lam):
    if model.conjugate_mode == "radial_numeric":
        return kernels.radial_conjugate(model.code, model.params, sigma)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if model.kind == "newtonian":
            out = sigma * sigma / (2.0 * model.mu)
        elif model.kind == "power_law":
            p = model.p
            q = p / (p - 1.0)
            a = model.mu2 ** (0.5 * (p - 2.0))
            out = a ** (-1.0 / (p - 1.0)) * np.power(sigma, q) / q
        else:
            tau, eps = model.tau0, model.eps_reg
            inside = sigma <= tau
            root = np.sqrt(np.maximum(tau * tau - sigma * sigma, 0.0))
            out = np.where(inside, eps * sigma * sigma / (tau + root), np.inf)
    return out + 0.5 * lam * sigma * sigma


# --- single-tensor operations -------------------------------------------------

def eval_F(model, D):
    """Dissipation potential ``F(D)`` of one tensor."""
    D = sym_tensor(D)
    return float(potential(model, D))


def eval_F_star(model, S):
    """Conjugate ``F*(S) = sup_D S:D - F(D)``; ``inf`` when the sup diverges."""
    S = sym_tensor(S)
    return float(conjugate(model, S))


def stress_from_D(model, D):
    """Subdifferential selection ``S in dF(D)``, the minimal-norm one at D = 0."""
    D = sym_tensor(D)
    return stress(model, D)


def fenchel_young_gap(model, S, D):
    """``F(D) + F*(S) - S:D``; nonnegative, zero iff ``S`` is in ``dF(D)``."""
    S, D = sym_tensor(S), sym_tensor(D)
    fs = float(conjugate(model, S))
    if math.isinf(fs):
        return math.inf
    f = float(potential(model, D))
    return math.fsum([f, fs, -float(np.sum(S * D))])


def asymptotic_F(model, D, s_max=1e4):
    """Recession function ``lim F(sD)/s``, extrapolated from three values of s.

    Returns ``inf`` when the difference quotients grow (superlinear F).
    """
    if s_max < 1e3:
        raise ConfigurationError("asymptotic_F needs s_max >= 1e3")
    D = sym_tensor(D)
    if not np.any(D):
        return 0.0
    s = np.array([0.25, 0.5, 1.0]) * s_max
    g = np.array([eval_F(model, si * D) / si for si in s])
    if not np.all(np.isfinite(g)):
        return math.inf
    d1, d2 = g[1] - g[0], g[2] - g[1]
    if d2 > 1e-9 * max(1.0, abs(g[2])) and d2 >= 0.75 * d1:
        return math.inf
    # two-level Richardson in h = 1/s, removing the 1/s and 1/s^2 terms
    r_fine = 2.0 * g[2] - g[1]
    r_coarse = 2.0 * g[1] - g[0]
    return float((4.0 * r_fine - r_coarse) / 3.0)


# --- structural hypothesis checks -------------------------------------------

@dataclass
class HypothesisReport:
    fenchel_young_ok: bool
    conjugate_superlinear_slope_at: dict
    F_domain_full: bool
    F_star_ball_radius: float
    F_infinity_linear_bound: float
    verdict: dict
    max_gap: float = 0.0
    min_gap: float = 0.0

    @property
    def passed(self):
        return all(self.verdict.values())


def _random_sym(rng, d, n):
    a = rng.standard_normal((n, d, d))
    return 0.5 * (a + a.transpose(0, 2, 1))


def validate_hypotheses(model, samples=200, d=None, seed=0):
    """Sample the structural hypotheses a model must satisfy.

    Checked: ``F >= 0``, ``F(0) = 0`` and full domain; convexity along
    segments; the Fenchel-Young inequality and its equality on the
    subdifferential graph; superlinearity of ``F*``; a ball inside the domain
    of ``F*``; at least linear growth of ``F``; and a finite linear bound on
    the recession function.
    """
    if samples < 100:
        raise ConfigurationError("validate_hypotheses needs at least 100 samples")
    d = d or model.dim or 2
    rng = np.random.default_rng(seed)
    scales = 10.0 ** rng.uniform(-2, 1, samples)
    Ds = _random_sym(rng, d, samples) * scales[:, None, None]
    Ds2 = _random_sym(rng, d, samples) * scales[::-1, None, None]

    F1 = np.array([eval_F(model, D) for D in Ds])
    F2 = np.array([eval_F(model, D) for D in Ds2])
    domain_full = bool(np.all(np.isfinite(F1)) and np.all(np.isfinite(F2)))
    nonneg = eval_F(model, np.zeros((d, d))) == 0.0 and bool(np.all(F1 >= 0) and np.all(F2 >= 0))

    convex = True
    for lam in (0.25, 0.5, 0.75):
        mid = np.array([eval_F(model, lam * a + (1 - lam) * b) for a, b in zip(Ds, Ds2)])
        bound = lam * F1 + (1 - lam) * F2 + 1e-12 * (1 + np.abs(F1) + np.abs(F2))
        convex &= bool(np.all(mid <= bound))

    gaps_on = []
    fy_ok = True
    for D in Ds:
        S = stress_from_D(model, D)
        g = fenchel_young_gap(model, S, D)
        tol = gap_tolerance(eval_F(model, D), eval_F_star(model, S))
        gaps_on.append(g)
        fy_ok &= -tol <= g <= tol
    for D, S in zip(Ds, Ds2):
        g = fenchel_young_gap(model, S, D)
        fy_ok &= g >= -gap_tolerance(eval_F(model, D), 0.0)

    direction = _random_sym(rng, d, 1)[0]
    direction /= np.linalg.norm(direction)
    slopes = {}
    for k in range(1, 5):
        mag = 10.0 ** k
        slopes[mag] = eval_F_star(model, mag * direction) / mag
    sv = np.array(list(slopes.values()))
    superlinear = bool(np.isinf(sv[-1]) or np.all(np.diff(sv) > 0))

    dirs = _random_sym(rng, d, 8)
    dirs /= np.linalg.norm(dirs, axis=(1, 2))[:, None, None]
    def ball_ok(rad):
        return all(math.isfinite(eval_F_star(model, rad * u)) for u in dirs)

    radius, first_bad = 0.0, None
    for rad in np.logspace(-6, 4, 41):
        if not ball_ok(rad):
            first_bad = float(rad)
            break
        radius = float(rad)
    if first_bad is not None and radius > 0.0:
        lo, hi = radius, first_bad
        for _ in range(30):
            mid = math.sqrt(lo * hi)
            lo, hi = (mid, hi) if ball_ok(mid) else (lo, mid)
        radius = lo

    growth = min(eval_F(model, 1e4 * u) / 1e4 for u in dirs)
    rec = [asymptotic_F(model, u) for u in dirs]
    finite_rec = [x for x in rec if math.isfinite(x)]
    rec_bound = max(finite_rec) if finite_rec else 0.0

    verdict = {
        "full_domain": domain_full and nonneg,
        "convexity": convex,
        "fenchel_young": bool(fy_ok),
        "conjugate_superlinear": superlinear,
        "conjugate_ball": radius > 0.0,
        "linear_growth": growth > 0.0,
        "asymptotic_linear_bound": math.isfinite(rec_bound),
    }
    return HypothesisReport(
        fenchel_young_ok=bool(fy_ok),
        conjugate_superlinear_slope_at=slopes,
        F_domain_full=domain_full,
        F_star_ball_radius=radius,
        F_infinity_linear_bound=rec_bound,
        verdict=verdict,
        max_gap=float(max(gaps_on)),
        min_gap=float(min(gaps_on)),
    )
