"""Fourier-Galerkin discretization on the period-2 torus ``[-1, 1]^d``.

Velocities are stored as full complex Fourier coefficient arrays of shape
``(d, N, ..., N)`` in FFT order, normalized so that
``v(x) = sum_k c(k) exp(i k.x)`` with ``k = pi * m`` for integer ``m``.
Collocation points are ``x_j = -1 + 2 j / N``.  The Galerkin space is the
span of divergence-free modes kept by the dealiasing mask (and an optional
radial cutoff); every right-hand side is projected onto it, so the state
stays real, solenoidal and band-limited.
"""
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft

from . import rheology
from .errors import ConfigurationError, DomainError, InputError, StabilityError

C_ADV = 0.5
C_VISC = 0.25

_WORKERS = 1


def set_workers(n):
    """Worker count for the FFTs; results are bit-reproducible for a fixed count."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def get_workers():
    return _WORKERS


@dataclass(frozen=True)
class TorusGrid:
    d: int
    N: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigurationError("grid.d must be 2 or 3")
        if self.N < 8 or self.N % 2:
            raise ConfigurationError("grid.N must be even and >= 8")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ConfigurationError("grid.dealias_fraction must lie in (0, 1]")

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def volume(self):
        return 2.0 ** self.d

    @property
    def h(self):
        return 2.0 / self.N

    @cached_property
    def modes(self):
        """Integer wave indices per axis, broadcast to the grid, shape (d, N, ...)."""
        m = np.fft.fftfreq(self.N, 1.0 / self.N)
        return np.array(np.meshgrid(*([m] * self.d), indexing="ij"))

    @cached_property
    def k(self):
        return math.pi * self.modes

    @cached_property
    def ksq(self):
        return np.sum(self.k ** 2, axis=0)

    @cached_property
    def inv_ksq(self):
        out = np.zeros_like(self.ksq)
        np.divide(1.0, self.ksq, out=out, where=self.ksq > 0)
        return out

    @cached_property
    def dealias(self):
        # strict inequality keeps |m| = N/3 out when N is divisible by 3
        limit = self.dealias_fraction * self.N / 2.0
        return np.all(np.abs(self.modes) < limit, axis=0)

    @cached_property
    def band_radius(self):
        return math.pi * self.N * self.dealias_fraction / 2.0

    @cached_property
    def _phase(self):
        # (-1)^(sum m): shifts the FFT origin from x = 0 to the grid corner x = -1
        return np.where(np.sum(self.modes, axis=0) % 2 == 0, 1.0, -1.0)

    @cached_property
    def x(self):
        x1 = -1.0 + self.h * np.arange(self.N)
        return np.array(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def _axes(self):
        return tuple(range(-self.d, 0))

    @cached_property
    def _neg(self):
        return (-np.arange(self.N)) % self.N

    def to_physical(self, c):
        """Real field from Hermitian coefficients (only the half spectrum is read)."""
        h = self.N // 2 + 1
        half = c[..., :h] * (self._phase[..., :h] * self.N ** self.d)
        return scipy.fft.irfftn(half, s=self.shape, axes=self._axes(), workers=_WORKERS)

    def to_spectral(self, u):
        h = self.N // 2 + 1
        half = scipy.fft.rfftn(u, axes=self._axes(), workers=_WORKERS)
        full = np.empty(half.shape[:-1] + (self.N,), dtype=complex)
        full[..., :h] = half
        tail = half[..., 1:self.N - h + 1][..., ::-1]
        for ax in range(-self.d, -1):
            tail = np.take(tail, self._neg, axis=ax)
        full[..., h:] = np.conj(tail)
        return full * (self._phase / self.N ** self.d)

    def inner(self, a, b):
        """``int a . b`` for two real fields given by spectral coefficients."""
        return self.volume * float(np.sum((a * np.conj(b)).real))

    def integrate(self, f):
        """Trapezoidal (spectrally accurate) integral of a scalar physical field."""
        return self.volume * float(np.mean(f))


def resample(c, grid_from, grid_to):
    """Spectral zero-padding or truncation of coefficients between grids."""
    if grid_from.d != grid_to.d:
        raise InputError("cannot resample between dimensions")
    lead = c.shape[: c.ndim - grid_from.d]
    out = np.zeros(lead + grid_to.shape, dtype=complex)
    K = min(grid_from.N, grid_to.N) // 2
    idx = np.r_[0:K, -K + 1:0]  # drop the unpaired Nyquist index
    src = np.ix_(*([idx % grid_from.N] * grid_from.d))
    dst = np.ix_(*([idx % grid_to.N] * grid_to.d))
    out[(Ellipsis,) + dst] = c[(Ellipsis,) + src]
    return out


@dataclass
class SpectralVelocity:
    grid: TorusGrid
    coeffs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        want = (self.grid.d,) + self.grid.shape
        if self.coeffs.shape != want:
            raise InputError(f"coefficient array has shape {self.coeffs.shape}, expected {want}")

    def physical(self):
        return self.grid.to_physical(self.coeffs)

    def kinetic_energy(self):
        return 0.5 * self.grid.volume * float(np.sum(np.abs(self.coeffs) ** 2))

    def divergence_max(self):
        kc = np.sum(self.grid.k * self.coeffs, axis=0)
        return float(np.abs(kc).max())

    def hermitian_defect(self):
        c = self.coeffs
        flipped = c
        for ax in range(1, c.ndim):
            flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
        return float(np.abs(c - np.conj(flipped)).max())

    def check(self, rtol=1e-13):
        """Raise DomainError unless the field is finite, real and solenoidal."""
        if not np.all(np.isfinite(self.coeffs)):
            raise DomainError("velocity has non-finite coefficients")
        scale = max(1.0, float(np.abs(self.coeffs).max()) * math.pi * self.grid.N)
        if self.divergence_max() > rtol * scale:
            raise DomainError("velocity is not divergence-free")
        if self.hermitian_defect() > rtol * max(1.0, float(np.abs(self.coeffs).max())):
            raise DomainError("velocity coefficients are not Hermitian")
        return self

    def copy(self):
        return SpectralVelocity(self.grid, self.coeffs.copy(), self.time)

    def resampled(self, grid):
        return SpectralVelocity(grid, resample(self.coeffs, self.grid, grid), self.time)


@dataclass
class StressField:
    grid: TorusGrid
    values: np.ndarray  # (d, d, N, ...), physical
    divergence: np.ndarray  # (d, N, ...), spectral, unprojected
    potential: np.ndarray = None  # F(Dv) at the collocation points
    viscosity: np.ndarray = None
    D: np.ndarray = None


@dataclass
class PressureField:
    grid: TorusGrid
    coeffs: np.ndarray

    def physical(self):
        return self.grid.to_physical(self.coeffs)


@dataclass
class Projection:
    """Spectral cutoff composed with the Leray projection ``I - k k^T / |k|^2``."""

    grid: TorusGrid
    mask: np.ndarray
    n_cutoff: float = None

    def __call__(self, c):
        g = self.grid
        kc = np.sum(g.k * c, axis=0)
        out = c - g.k * (kc * g.inv_ksq)
        return out * self.mask

    def truncate(self, c):
        return c * self.mask


def make_basis_projection(grid, n_cutoff=None):
    """Projection onto the Galerkin space of modes with ``|k| <= n_cutoff``."""
    mask = grid.dealias.copy()
    if n_cutoff is not None:
        if n_cutoff > grid.band_radius:
            raise ConfigurationError(
                f"cutoff {n_cutoff:g} exceeds the dealiased band {grid.band_radius:g}")
        mask &= np.sqrt(grid.ksq) <= n_cutoff
    return Projection(grid, mask, n_cutoff)


def _proj(v, projection):
    return projection if projection is not None else make_basis_projection(v.grid)


def _sym_pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def sym_gradient(v):
    """Symmetric velocity gradient at the collocation points, shape (d, d, N, ...)."""
    g, c = v.grid, v.coeffs
    d = g.d
    pairs = _sym_pairs(d)
    hats = np.array([0.5j * (g.k[i] * c[j] + g.k[j] * c[i]) for i, j in pairs])
    phys = g.to_physical(hats)
    D = np.empty((d, d) + g.shape)
    for n, (i, j) in enumerate(pairs):
        D[i, j] = phys[n]
        D[j, i] = phys[n]
    return D


def velocity_gradient(v):
    """Full gradient ``G[i, j] = d_i v_j`` at the collocation points."""
    g, c = v.grid, v.coeffs
    hats = 1j * g.k[:, None] * c[None, :]
    return g.to_physical(hats)


def _divergence_of_sym(grid, T):
    """Spectral ``(div T)_j = sum_i d_i T_ij`` of a symmetric physical field."""
    d = grid.d
    pairs = _sym_pairs(d)
    hats = grid.to_spectral(np.array([T[i, j] for i, j in pairs]))
    full = {}
    for n, (i, j) in enumerate(pairs):
        full[i, j] = full[j, i] = hats[n]
    return np.array([sum(1j * grid.k[i] * full[i, j] for i in range(d)) for j in range(d)])


def convective_divergence(v, u=None):
    """Unprojected spectral ``div(v (x) v)`` from collocation products."""
    g = v.grid
    u = v.physical() if u is None else u
    d = g.d
    prod = np.empty((d, d) + g.shape)
    for i, j in _sym_pairs(d):
        prod[i, j] = prod[j, i] = u[i] * u[j]
    return _divergence_of_sym(g, prod)


def convective_rhs(v, projection=None):
    """Projected convective force ``-P div(v (x) v)``."""
    return -_proj(v, projection)(convective_divergence(v))


def stress_field(model, v):
    D = sym_gradient(v)
    F, S, visc = rheology.evaluate(model, D)
    div = _divergence_of_sym(v.grid, S)
    return StressField(v.grid, S, div, F, visc, D)


def viscous_rhs(model, v, projection=None):
    """Projected viscous force ``P div S`` with ``S`` selected pointwise from ``dF(Dv)``."""
    sf = stress_field(model, v)
    return _proj(v, projection)(sf.divergence), sf


def _force_hat(force, t, grid):
    if force is None:
        return None
    f = np.asarray(force(t, grid), dtype=complex)
    f = f.copy()
    f[(slice(None),) + (0,) * grid.d] = 0.0  # no net force on the mean flow
    return f


def cfl_bound(grid, umax, visc_max, if_mu0=0.0):
    h = grid.h
    adv = C_ADV * h / umax if umax > 0 else math.inf
    nu = max(visc_max - if_mu0, 0.0)
    vis = C_VISC * h * h / nu if nu > 0 else math.inf
    return min(adv, vis)


def cfl_limit(model, v, if_mu0=0.0):
    """Largest stable step: advective and viscous limits on the collocation grid."""
    u = v.physical()
    sf = stress_field(model, v)
    umax = float(np.sqrt(np.sum(u * u, axis=0)).max())
    return cfl_bound(v.grid, umax, float(sf.viscosity.max()), if_mu0)


@dataclass
class StageRates:
    diss_F: float
    diss_Fstar: float
    diss_SD: float
    work: float


@dataclass
class BudgetIncrement:
    """Time integrals over one or more steps, with RK4 stage weights."""

    diss_F: float = 0.0
    diss_Fstar: float = 0.0
    diss_SD: float = 0.0
    work: float = 0.0

    def add(self, other):
        self.diss_F += other.diss_F
        self.diss_Fstar += other.diss_Fstar
        self.diss_SD += other.diss_SD
        self.work += other.work


@dataclass
class _Stage:
    rhs: np.ndarray
    umax: float
    visc_max: float
    rates: StageRates = None


def stage_rates(model, v, sf, force_hat=None):
    g = v.grid
    fstar = rheology.conjugate(model, sf.values)
    sd = np.sum(sf.values * sf.D, axis=(0, 1))
    work = g.inner(force_hat, v.coeffs) if force_hat is not None else 0.0
    return StageRates(g.integrate(sf.potential), g.integrate(fstar), g.integrate(sd), work)


def _evaluate(model, v, t, force, projection, if_mu0, budget):
    g = v.grid
    u = v.physical()
    D = sym_gradient(v)
    F, S, visc = rheology.evaluate(model, D)
    sf = StressField(g, S, None, F, visc, D)
    flux = S.copy()
    for i, j in _sym_pairs(g.d):
        flux[i, j] -= u[i] * u[j]
        if i != j:
            flux[j, i] = flux[i, j]
    total = _divergence_of_sym(g, flux)
    fh = _force_hat(force, t, g)
    if fh is not None:
        total = total + fh
    rhs = projection(total)
    if if_mu0:
        rhs = rhs + 0.5 * if_mu0 * g.ksq * v.coeffs
    umax = float(np.sqrt(np.sum(u * u, axis=0)).max())
    rates = None
    if budget:
        rates = stage_rates(model, v, sf, projection(fh) if fh is not None else None)
    return _Stage(rhs, umax, float(sf.viscosity.max()), rates)


def rhs(model, v, force=None, projection=None):
    """Semi-discrete ``dv/dt``: projected convection, stress divergence and forcing."""
    return _evaluate(model, v, v.time, force, _proj(v, projection), 0.0, False).rhs


def step_with_budget(model, v, dt, force=None, *, projection=None, if_mu0=0.0, budget=True):
    """One classical RK4 step (Lawson integrating-factor form when ``if_mu0 > 0``).

    With ``if_mu0 > 0`` the Newtonian part ``(if_mu0 / 2) Laplacian`` is
    integrated exactly and only the remainder explicitly.  Returns the new
    velocity and the stage-weighted time integrals of the dissipation terms
    and of the forcing work (None when ``budget`` is False).
    """
    g = v.grid
    P = _proj(v, projection)
    t = v.time
    s1 = _evaluate(model, v, t, force, P, if_mu0, budget)
    limit = cfl_bound(g, s1.umax, s1.visc_max, if_mu0)
    if dt > limit * (1.0 + 1e-12):
        raise StabilityError(f"dt = {dt:.6g} exceeds the stability limit {limit:.6g}",
                             suggested_dt=0.5 * limit)
    c = v.coeffs
    if if_mu0:
        E = np.exp(-0.25 * if_mu0 * g.ksq * dt)  # half-step factor
    else:
        E = 1.0

    def state(coeffs, tt):
        return SpectralVelocity(g, coeffs, tt)

    k1 = s1.rhs
    v2 = E * (c + 0.5 * dt * k1)
    s2 = _evaluate(model, state(v2, t + 0.5 * dt), t + 0.5 * dt, force, P, if_mu0, budget)
    k2 = s2.rhs
    v3 = E * c + 0.5 * dt * k2
    s3 = _evaluate(model, state(v3, t + 0.5 * dt), t + 0.5 * dt, force, P, if_mu0, budget)
    k3 = s3.rhs
    v4 = E * E * c + dt * E * k3
    s4 = _evaluate(model, state(v4, t + dt), t + dt, force, P, if_mu0, budget)
    k4 = s4.rhs
    new = E * E * c + (dt / 6.0) * (E * E * k1 + 2.0 * E * (k2 + k3) + k4)
    new = P(new)
    out = SpectralVelocity(g, new, t + dt)
    if not np.all(np.isfinite(new)):
        raise StabilityError("non-finite velocity after step", suggested_dt=0.5 * dt)
    inc = None
    if budget:
        w = dt / 6.0
        rs = [s1.rates, s2.rates, s3.rates, s4.rates]
        wt = (w, 2 * w, 2 * w, w)
        inc = BudgetIncrement(
            sum(a * r.diss_F for a, r in zip(wt, rs)),
            sum(a * r.diss_Fstar for a, r in zip(wt, rs)),
            sum(a * r.diss_SD for a, r in zip(wt, rs)),
            sum(a * r.work for a, r in zip(wt, rs)),
        )
    return out, inc


def step(model, v, dt, force=None, *, projection=None, if_mu0=0.0):
    return step_with_budget(model, v, dt, force, projection=projection,
                            if_mu0=if_mu0, budget=False)[0]


@dataclass
class RunStats:
    steps: int = 0
    min_dt: float = math.inf
    max_dt: float = 0.0


def integrate(model, v0, t_final, dt, *, force=None, projection=None, if_mu0=0.0,
              record_stride=1, budget=True, on_record=None, dt_safety=0.5,
              dt_refresh=10):
    """March ``v0`` to ``t_final``.

    ``dt`` is a number or ``"auto"`` (``dt_safety`` times the stability
    limit, re-evaluated every ``dt_refresh`` steps).  ``on_record(v, inc)``
    is called for the initial state (with ``inc=None``), every
    ``record_stride`` steps and at the final time, where ``inc`` holds the
    budget integrals accumulated since the previous record.
    """
    P = _proj(v0, projection)
    v = v0.copy()
    stats = RunStats()
    t0 = v0.time
    auto = isinstance(dt, str)
    if auto and dt != "auto":
        raise ConfigurationError(f"dt must be a number or 'auto', got {dt!r}")
    if not auto and not dt > 0:
        raise ConfigurationError("dt must be positive")
    if on_record is not None:
        on_record(v, None)
    acc = BudgetIncrement()
    since_record = 0
    h = None
    n = 0
    tiny = 1e-12 * max(1.0, abs(t_final))
    while v.time < t_final - tiny:
        if auto:
            if n % dt_refresh == 0:
                h = dt_safety * cfl_limit(model, v, if_mu0)
                if not math.isfinite(h):
                    h = t_final - v.time
        else:
            h = dt
        remaining = t_final - v.time
        hh = remaining if h >= remaining - tiny else h
        v, inc = step_with_budget(model, v, hh, force, projection=P, if_mu0=if_mu0, budget=budget)
        n += 1
        if not auto and hh == h:
            v.time = t0 + n * h  # avoid drift from repeated addition
        if hh < h or v.time > t_final - tiny:
            v.time = t_final
        stats.steps += 1
        stats.min_dt = min(stats.min_dt, hh)
        stats.max_dt = max(stats.max_dt, hh)
        if inc is not None:
            acc.add(inc)
        since_record += 1
        final = v.time >= t_final - tiny
        if on_record is not None and (since_record == record_stride or final):
            on_record(v, acc if budget else None)
            acc = BudgetIncrement()
            since_record = 0
    return v, stats


def recover_pressure(model, v, force=None):
    """Pressure with zero mean from ``-|k|^2 P = i k . (unprojected rhs)``."""
    g = v.grid
    total = -convective_divergence(v) + stress_field(model, v).divergence
    fh = _force_hat(force, v.time, g)
    if fh is not None:
        total = total + fh
    total = total * g.dealias
    kr = np.sum(g.k * total, axis=0)
    pi_hat = -1j * kr * g.inv_ksq
    pi_hat[(0,) * g.d] = 0.0
    return PressureField(g, pi_hat)


def pressure_gradient(p):
    return 1j * p.grid.k * p.coeffs


def galerkin_residual(model, v, dvdt, projection):
    """Residual of the Galerkin equations of ``projection``'s space at ``v``.

    For a solution computed in that space the residual vanishes; for the
    projection of a finer solution it equals the mismatch between the
    projected fine dynamics and the coarse right-hand side.
    """
    pv = SpectralVelocity(v.grid, projection(v.coeffs), v.time)
    return projection(dvdt) - rhs(model, pv, projection=projection)


# --- initial data -----------------------------------------------------------

def taylor_green(grid, amplitude=1.0, time=0.0):
    """The Taylor-Green vortex ``(sin pi x cos pi y, -cos pi x sin pi y)`` (3-D: times cos pi z)."""
    x = grid.x
    s, c = np.sin(math.pi * x), np.cos(math.pi * x)
    u = np.zeros((grid.d,) + grid.shape)
    if grid.d == 2:
        u[0] = s[0] * c[1]
        u[1] = -c[0] * s[1]
    else:
        u[0] = s[0] * c[1] * c[2]
        u[1] = -c[0] * s[1] * c[2]
    coeffs = grid.to_spectral(amplitude * u)
    coeffs[np.abs(coeffs) < 1e-15 * amplitude] = 0.0
    return SpectralVelocity(grid, coeffs, time)


def seeded_random_smooth(grid, seed, spectral_decay=4.0, max_mode=4, energy=0.5):
    """Seeded divergence-free random field on modes ``|m_j| <= max_mode``.

    Coefficients are Gaussian with amplitude ``|k|^-spectral_decay``, zero
    mean, scaled to the given kinetic energy.  They are drawn on the small
    mode box independently of ``grid.N``, so any grid whose dealiased band
    contains the box receives bit-identical coefficients.
    """
    M = int(max_mode)
    limit = grid.dealias_fraction * grid.N / 2.0
    if not M < limit:
        raise ConfigurationError(f"max_mode {M} outside the dealiased band of N={grid.N}")
    d = grid.d
    rng = np.random.default_rng(seed)
    n = 2 * M + 1
    a = rng.standard_normal((d,) + (n,) * d) + 1j * rng.standard_normal((d,) + (n,) * d)
    mrange = np.arange(-M, M + 1)
    mm = np.array(np.meshgrid(*([mrange] * d), indexing="ij"))
    flipped = a[(slice(None),) + (slice(None, None, -1),) * d]
    a = 0.5 * (a + np.conj(flipped))
    k = math.pi * mm
    ksq = np.sum(k * k, axis=0)
    inv = np.zeros_like(ksq)
    np.divide(1.0, ksq, out=inv, where=ksq > 0)
    a = a - k * (np.sum(k * a, axis=0) * inv)
    amp = np.zeros_like(ksq)
    np.power(ksq, -0.5 * spectral_decay, out=amp, where=ksq > 0)
    a = a * amp
    ke = 0.5 * grid.volume * float(np.sum(np.abs(a) ** 2))
    if ke > 0:
        a = a * math.sqrt(energy / ke)
    coeffs = np.zeros((d,) + grid.shape, dtype=complex)
    idx = np.ix_(*([mrange % grid.N] * d))
    coeffs[(slice(None),) + idx] = a
    return SpectralVelocity(grid, coeffs, 0.0)


# --- snapshot files -------------------------------------------------------------

SNAPSHOT_MAGIC = b"DRHE"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


def write_snapshot(path, v):
    """Binary little-endian snapshot.

    Header: magic ``DRHE``, format version, d, N (uint32 each), time (float64).
    Payload: complex coefficients as (real, imag) float64 pairs in row-major
    wavenumber order (FFT index order per axis), velocity components innermost.
    """
    g = v.grid
    payload = np.moveaxis(v.coeffs, 0, -1).astype("<c16", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.d, g.N, float(v.time)))
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_snapshot(path, dealias_fraction=2.0 / 3.0):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated snapshot header")
    magic, version, d, N, time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise InputError(f"{path}: not a snapshot file")
    if version != SNAPSHOT_VERSION:
        raise InputError(f"{path}: unsupported snapshot version {version}")
    grid = TorusGrid(d, N, dealias_fraction)
    count = d * N ** d
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if data.size != count:
        raise InputError(f"{path}: expected {count} coefficients, found {data.size}")
    coeffs = np.moveaxis(data.reshape(grid.shape + (d,)), -1, 0).astype(complex)
    return SpectralVelocity(grid, coeffs, time)
