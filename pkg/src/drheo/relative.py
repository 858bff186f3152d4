"""Relative energy between a coarse run and a reference strong solution."""
import csv
import json
import math
import time as _time
from dataclasses import dataclass

import numpy as np

from . import kernels, rheology, spectral
from .errors import ConfigurationError, InputError

RTOL_R2 = 1e-6
TIME_TOL = 1e-9


def _same_time(a, b):
    return abs(a - b) <= TIME_TOL * max(1.0, abs(a), abs(b))


def _grad_sup(U):
    """Collocation maximum of the Frobenius norm of the velocity gradient."""
    G = spectral.velocity_gradient(U)
    return float(np.sqrt(np.sum(G * G, axis=(0, 1))).max())


class ReferenceSolution:
    """A strong solution ``U`` with its stress, sampled at record times.

    ``fine_run`` wraps snapshots of a resolved simulation; ``manufactured``
    is the forced closed-form field built by :func:`manufactured`.
    """

    def __init__(self, source, model, grid, *, snapshots=None, velocity=None,
                 velocity_dt=None, force=None):
        if source not in ("fine_run", "manufactured"):
            raise ConfigurationError(f"unknown reference source {source!r}")
        self.source = source
        self.model = model
        self.grid = grid
        self.force = force
        self._snapshots = list(snapshots or [])
        self._velocity = velocity
        self._velocity_dt = velocity_dt

    @classmethod
    def fine_run(cls, model, snapshots, force=None):
        if not snapshots:
            raise InputError("a fine-run reference needs snapshots")
        return cls("fine_run", model, snapshots[0].grid, snapshots=snapshots, force=force)

    @property
    def times(self):
        return [s.time for s in self._snapshots] if self.source == "fine_run" else None

    def at(self, t):
        """The reference velocity at time ``t`` as a SpectralVelocity on ``self.grid``."""
        if self.source == "manufactured":
            u = self._velocity(t, self.grid.x)
            return spectral.SpectralVelocity(self.grid, self.grid.to_spectral(u), t)
        for s in self._snapshots:
            if _same_time(s.time, t):
                return s
        raise InputError(f"reference has no snapshot at t = {t!r}")

    def dudt(self, U):
        """Time derivative of the reference at the state ``U``."""
        if self.source == "manufactured":
            u = self._velocity_dt(U.time, self.grid.x)
            return self.grid.to_spectral(u)
        return spectral.rhs(self.model, U, self.force)

    def sample(self, t, points):
        """Velocity at arbitrary points ``(d, n)`` by direct Fourier summation."""
        points = np.asarray(points, dtype=float)
        if self.source == "manufactured":
            return self._velocity(t, points)
        U = self.at(t)
        return evaluate_series(U, points)


def evaluate_series(v, points):
    """Exact trigonometric interpolant of ``v`` at points of shape ``(d, n)``."""
    g = v.grid
    keep = np.abs(v.coeffs).max(axis=0) > 0
    k = g.k[:, keep]
    return np.real(v.coeffs[:, keep] @ np.exp(1j * (k.T @ points)))


# --- manufactured solution ------------------------------------------------------

def manufactured(model, grid, decay=0.5, shear=0.5):
    """Forced closed-form solution ``U = exp(-decay t) W`` in two dimensions.

    ``W`` is the Taylor-Green vortex plus a shear mode ``shear * (sin pi y, 0)``;
    the pressure is zero and the force is whatever makes the momentum equation
    exact, with the stress of ``model`` differentiated by the chain rule.
    The model must be isotropic with a smooth profile.
    """
    if grid.d != 2:
        raise ConfigurationError("the manufactured reference is two-dimensional")
    if model.kind not in rheology.ISOTROPIC:
        raise ConfigurationError("the manufactured reference needs an isotropic model")
    pi = math.pi
    code, prm = model.code, model.params

    def amp(t):
        return math.exp(-decay * t)

    def W(x):
        sx, cx = np.sin(pi * x[0]), np.cos(pi * x[0])
        sy, cy = np.sin(pi * x[1]), np.cos(pi * x[1])
        return np.array([sx * cy + shear * sy, -cx * sy])

    def velocity(t, x):
        return amp(t) * W(x)

    def velocity_dt(t, x):
        return -decay * amp(t) * W(x)

    def force(t, x):
        a = amp(t)
        sx, cx = np.sin(pi * x[0]), np.cos(pi * x[0])
        sy, cy = np.sin(pi * x[1]), np.cos(pi * x[1])
        w = np.array([sx * cy + shear * sy, -cx * sy])
        # gradient G[i, j] = d_i W_j
        G = np.array([[pi * cx * cy, pi * sx * sy],
                      [-pi * sx * sy + shear * pi * cy, -pi * cx * cy]])
        conv = np.einsum("i...,ij...->j...", w, G)
        D11 = a * pi * cx * cy
        D12 = a * 0.5 * shear * pi * cy
        # derivatives d_j D_ik of the scaled tensor, as dD[j][i][k]
        dx11, dy11 = -a * pi * pi * sx * cy, -a * pi * pi * cx * sy
        dx12, dy12 = np.zeros_like(sx), -a * 0.5 * shear * pi * pi * sy
        D = np.array([[D11, D12], [D12, -D11]])
        dD = np.array([[[dx11, dx12], [dx12, -dx11]],
                       [[dy11, dy12], [dy12, -dy11]]])
        r = np.sqrt(np.sum(D * D, axis=(0, 1)))
        _, dphi, d2 = (a_.reshape(r.shape) for a_ in kernels.radial_eval(code, prm, r))
        safe = np.where(r > 1e-300, r, 1.0)
        mu = np.where(r > 1e-300, dphi / safe, d2)
        # (d mu / dr) / r, removable at r = 0 for smooth profiles
        dmu = np.where(r > 1e-6, (d2 - mu) / safe ** 2, 0.0)
        div_D = np.array([dD[0, 0, 0] + dD[1, 0, 1], dD[0, 1, 0] + dD[1, 1, 1]])
        DdD = np.array([np.sum(D * dD[j], axis=(0, 1)) for j in range(2)])  # D : d_j D
        div_S = mu * div_D + dmu * np.einsum("ij...,j...->i...", D, DdD)
        return -decay * a * w + a * a * conv - div_S

    def force_hat(t, g):
        # sample on a grid finer than the target so the truncation is not aliased
        fine = grid if grid.N >= 2 * g.N else spectral.TorusGrid(2, 2 * g.N, g.dealias_fraction)
        return spectral.resample(fine.to_spectral(force(t, fine.x)), fine, g)

    ref = ReferenceSolution("manufactured", model, grid, velocity=velocity,
                            velocity_dt=velocity_dt, force=force_hat)
    ref.force_physical = force
    return ref


# --- relative energy --------------------------------------------------------------

def relative_energy(v, defect, U):
    """``1/2 int |v - U|^2`` plus half the defect trace, on the finer of the two grids."""
    if not _same_time(v.time, U.time):
        raise InputError(f"time mismatch: v at {v.time!r}, U at {U.time!r}")
    if v.grid.N < U.grid.N:
        v = v.resampled(U.grid)
    elif U.grid.N < v.grid.N:
        U = U.resampled(v.grid)
    w = v.coeffs - U.coeffs
    e = 0.5 * v.grid.volume * float(np.sum(np.abs(w) ** 2))
    if defect is not None:
        e += 0.5 * defect.trace_total
    return e


@dataclass
class RelativeEnergyReport:
    times: np.ndarray
    E: np.ndarray
    gronwall_rate: np.ndarray
    gronwall_envelope: np.ndarray
    slack_r2: np.ndarray
    conv_block: np.ndarray
    dissipation_gap_term: np.ndarray
    kinetic0: float
    rtol_r2: float
    N: int = 0

    @property
    def sup_E(self):
        return float(self.E.max())

    @property
    def envelope_ok(self):
        return bool(np.all(self.E <= self.gronwall_envelope))

    @property
    def slack_ok(self):
        return bool(np.all(self.slack_r2 >= -self.rtol_r2 * self.kinetic0))

    @property
    def convexity_ok(self):
        return bool(np.all(self.conv_block >= -1e-8 * (1.0 + self.kinetic0)))

    @property
    def bound_ok(self):
        return self.envelope_ok and self.slack_ok

    def violations(self):
        """Times where the relative energy inequality slack is below tolerance."""
        bad = self.slack_r2 < -self.rtol_r2 * self.kinetic0
        return self.times[bad]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "E", "gronwall_envelope", "slack_r2", "conv_block"])
            for row in zip(self.times, self.E, self.gronwall_envelope, self.slack_r2,
                           self.conv_block):
                w.writerow([repr(float(x)) for x in row])


def _trapezoid_cumulative(t, f):
    out = np.zeros_like(f)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def _terms(model, v, U, dUdt, force_hat):
    """Integrands of the relative energy inequality at one instant.

    The coarse run's own dissipation ``F(Dv) + F*(S)`` is taken with its
    collocation quadrature (the numbers its energy ledger uses) and its
    stress enters the cross terms through the band-limited interpolant it
    actually exerts on the Galerkin equations.  Everything else lives on
    the reference grid, where the zero-padded ``v`` is represented exactly.
    """
    g = U.grid
    gc = v.grid
    Fc, Sc, _ = rheology.evaluate(model, spectral.sym_gradient(v))
    own = gc.integrate(Fc) + gc.integrate(rheology.conjugate(model, Sc))
    pairs = spectral._sym_pairs(gc.d)
    S_band = gc.to_spectral(np.array([Sc[i, j] for i, j in pairs])) * gc.dealias
    S_band = g.to_physical(spectral.resample(S_band, gc, g))
    Sv = np.empty((g.d, g.d) + g.shape)
    for n, (i, j) in enumerate(pairs):
        Sv[i, j] = Sv[j, i] = S_band[n]
    vf = v.resampled(g) if gc.N != g.N else v
    Dv = spectral.sym_gradient(vf)
    DU = spectral.sym_gradient(U)
    Fv, _, _ = rheology.evaluate(model, Dv)
    FU, SU, _ = rheology.evaluate(model, DU)

    def contract(A, B):
        return np.sum(A * B, axis=(0, 1))

    conv = g.integrate(Fv - contract(SU, Dv - DU) - FU)
    group = own - g.integrate(contract(Sv, DU)) - g.integrate(contract(SU, Dv - DU))
    # (U - v) . (dU/dt + U.grad U - div S_U - f): vanishes for an exact strong solution
    resid = dUdt + spectral.convective_divergence(U) - spectral._divergence_of_sym(g, SU)
    if force_hat is not None:
        resid = resid - force_hat
    source = g.inner(U.coeffs - vf.coeffs, resid)
    return conv, group, source


def verify_r2(coarse, reference, rtol_r2=RTOL_R2, defects=None, stress_term=False):
    """Check the relative energy inequality along a coarse trajectory.

    ``coarse`` is a list of snapshots; ``reference`` a ReferenceSolution with
    data at the same times.  The quadratic convective term (and the defect
    coupling) is bounded by ``c(t) E`` with ``c = 2 sup|grad U|``; with
    ``stress_term`` the collocation maximum of ``|grad S_U|`` is added to
    ``c``.  Violations are reported, never raised.
    """
    if not coarse:
        raise InputError("empty coarse trajectory")
    model = reference.model
    n = len(coarse)
    t = np.array([v.time for v in coarse])
    E = np.zeros(n)
    c = np.zeros(n)
    conv = np.zeros(n)
    group = np.zeros(n)
    src = np.zeros(n)
    for i, v in enumerate(coarse):
        U = reference.at(v.time)
        defect = defects[i] if defects is not None else None
        E[i] = relative_energy(v, defect, U)
        c[i] = 2.0 * _grad_sup(U)
        if stress_term:
            SU = spectral.stress_field(model, U)
            gS = 1j * U.grid.k[:, None, None] * U.grid.to_spectral(SU.values)[None]
            c[i] += float(np.sqrt(np.sum(U.grid.to_physical(gS) ** 2, axis=(0, 1, 2))).max())
        fh = spectral._force_hat(reference.force, v.time, U.grid) if reference.force else None
        if fh is not None:
            fh = spectral.make_basis_projection(U.grid).truncate(fh)
        conv[i], group[i], src[i] = _terms(model, v, U, reference.dudt(U), fh)
    k0 = coarse[0].kinetic_energy()
    lhs = E - E[0] + _trapezoid_cumulative(t, group)
    rhs = _trapezoid_cumulative(t, src + c * E)
    growth = np.exp(_trapezoid_cumulative(t, c))
    envelope = (E[0] + rtol_r2 * k0) * growth
    return RelativeEnergyReport(t, E, c, envelope, rhs - lhs, conv, group, k0, rtol_r2,
                                coarse[0].grid.N)


# --- weak-strong experiment -------------------------------------------------------

@dataclass
class WeakStrongResult:
    reports: dict
    sup_E_by_N: dict
    ratios: dict
    verdict: str
    seeds: dict
    wallclock: float
    partial: bool
    dt: float
    kinetic0: float

    def summary(self):
        return {
            "sup_E_by_N": {str(k): v for k, v in self.sup_E_by_N.items()},
            "verdict": self.verdict,
            "seeds": self.seeds,
            "wallclock": self.wallclock,
        }


@dataclass
class WeakStrongConfig:
    model: object
    N_list: tuple = (16, 32, 64)
    N_ref: int = 128
    T_final: float = 0.25
    dt: object = "auto"
    record_stride: int = 10
    initial: str = "seeded_random_smooth"
    seed: int = 0
    coarse_seed: int = None
    reference_seed: int = None
    spectral_decay: float = 4.0
    max_mode: int = 4
    energy: float = 0.5
    amplitude: float = 1.0
    rtol_r2: float = RTOL_R2
    stress_term: bool = False
    wallclock_cap: float = 300.0
    dealias_fraction: float = 2.0 / 3.0
    d: int = 2


def _initial(cfg, grid, seed):
    if cfg.initial == "taylor_green":
        return spectral.taylor_green(grid, cfg.amplitude)
    if cfg.initial == "seeded_random_smooth":
        return spectral.seeded_random_smooth(grid, seed, cfg.spectral_decay, cfg.max_mode,
                                             cfg.energy)
    raise ConfigurationError(f"unsupported initial data {cfg.initial!r} for weak-strong runs")


def _run(model, v0, T, dt, stride):
    snaps = []

    def keep(v, _inc):
        snaps.append(v.copy())

    spectral.integrate(model, v0, T, dt, record_stride=stride, budget=False, on_record=keep)
    return snaps


def weak_strong_experiment(cfg):
    """Coarse runs at each N in ``cfg.N_list`` against a reference at ``cfg.N_ref``."""
    cs = cfg.seed if cfg.coarse_seed is None else cfg.coarse_seed
    rs = cfg.seed if cfg.reference_seed is None else cfg.reference_seed
    if cs != rs:
        raise ConfigurationError(
            f"coarse seed {cs} and reference seed {rs} differ; runs must share initial data")
    if any(N > cfg.N_ref for N in cfg.N_list):
        raise ConfigurationError("coarse resolutions must not exceed the reference")
    start = _time.perf_counter()
    model = cfg.model
    ref_grid = spectral.TorusGrid(cfg.d, cfg.N_ref, cfg.dealias_fraction)
    U0 = _initial(cfg, ref_grid, rs)
    dt = cfg.dt
    if dt == "auto":
        # one fixed step for every resolution keeps the record times aligned
        dt = 0.5 * spectral.cfl_limit(model, U0)
    steps = max(1, math.ceil(cfg.T_final / dt - 1e-9))
    dt = cfg.T_final / steps
    ref_snaps = _run(model, U0, cfg.T_final, dt, cfg.record_stride)
    reference = ReferenceSolution.fine_run(model, ref_snaps)
    reports, sup = {}, {}
    partial = False
    for N in sorted(cfg.N_list):
        if _time.perf_counter() - start > cfg.wallclock_cap:
            partial = True
            break
        grid = spectral.TorusGrid(cfg.d, N, cfg.dealias_fraction)
        v0 = _initial(cfg, grid, cs)
        snaps = _run(model, v0, cfg.T_final, dt, cfg.record_stride)
        rep = verify_r2(snaps, reference, cfg.rtol_r2, stress_term=cfg.stress_term)
        reports[N] = rep
        sup[N] = rep.sup_E
    Ns = sorted(sup)
    ratios = {}
    for a, b in zip(Ns, Ns[1:]):
        ratios[b] = sup[a] / sup[b] if sup[b] > 0 else math.inf
    monotone = all(sup[b] < sup[a] or sup[a] == 0.0 for a, b in zip(Ns, Ns[1:]))
    envelopes = all(r.envelope_ok for r in reports.values())
    verdict = "weak-strong-consistent" if monotone and envelopes and not partial \
        else "inconsistent"
    if partial:
        verdict = "partial"
    return WeakStrongResult(reports, sup, ratios, verdict, {"coarse": cs, "reference": rs},
                            _time.perf_counter() - start, partial, dt, U0.kinetic_energy())
