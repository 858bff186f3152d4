"""Energy ledgers, Reynolds-defect estimates and weak-form residuals."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rheology, spectral
from .errors import ConfigurationError, InputError, SequencingError

CERT_TOL = 1e-6
REG_TOL = 1e-6

LEDGER_HEADER = ("time", "kinetic", "diss_F", "diss_Fstar", "diss_SD", "gap",
                 "cum_diss", "budget_residual")


@dataclass
class LedgerRecord:
    time: float
    kinetic: float
    diss_F: float
    diss_Fstar: float
    diss_SD: float
    work: float
    cum_F: float = 0.0
    cum_Fstar: float = 0.0
    cum_SD: float = 0.0
    cum_work: float = 0.0
    budget_residual: float = 0.0

    @property
    def gap(self):
        return self.diss_F + self.diss_Fstar - self.diss_SD

    @property
    def cum_diss(self):
        return self.cum_F + self.cum_Fstar


@dataclass
class EnergyLedger:
    """Time series of the energy budget of one run."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def kinetic0(self):
        return self.records[0].kinetic if self.records else 0.0

    def append(self, time, kinetic, rates, increment=None):
        """Add a record; ``rates`` are the instantaneous (F, F*, S:D, work) integrals.

        Cumulative integrals take ``increment`` (a stage-weighted
        ``BudgetIncrement`` from the stepper) when given, otherwise the
        trapezoid rule against the previous record.
        """
        rec = LedgerRecord(time, kinetic, *rates)
        if self.records:
            prev = self.records[-1]
            dt = time - prev.time
            if dt < 0:
                raise SequencingError(f"ledger time went backwards: {prev.time} -> {time}")
            if increment is None:
                increment = spectral.BudgetIncrement(
                    0.5 * dt * (prev.diss_F + rec.diss_F),
                    0.5 * dt * (prev.diss_Fstar + rec.diss_Fstar),
                    0.5 * dt * (prev.diss_SD + rec.diss_SD),
                    0.5 * dt * (prev.work + rec.work),
                )
            rec.cum_F = prev.cum_F + increment.diss_F
            rec.cum_Fstar = prev.cum_Fstar + increment.diss_Fstar
            rec.cum_SD = prev.cum_SD + increment.diss_SD
            rec.cum_work = prev.cum_work + increment.work
        k0 = self.records[0].kinetic if self.records else kinetic
        rec.budget_residual = rec.kinetic + rec.cum_SD - k0 - rec.cum_work
        self.records.append(rec)
        return rec

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_HEADER)
            for r in self.records:
                w.writerow([repr(float(x)) for x in (r.time, r.kinetic, r.diss_F, r.diss_Fstar,
                                                     r.diss_SD, r.gap, r.cum_diss, r.budget_residual)])


def instantaneous_rates(model, v, S=None, force=None):
    """(int F(Dv), int F*(S), int S:Dv, int force.v) at the state ``v``."""
    if S is None:
        S = spectral.stress_field(model, v)
    fh = spectral._force_hat(force, v.time, v.grid)
    if fh is not None:
        fh = spectral.make_basis_projection(v.grid)(fh)
    r = spectral.stage_rates(model, v, S, fh)
    return r.diss_F, r.diss_Fstar, r.diss_SD, r.work


def record_ledger(model, v, S, force, ledger, increment=None):
    """Append the budget of state ``v`` (with its stress field ``S``) to ``ledger``."""
    rates = instantaneous_rates(model, v, S, force)
    ledger.append(v.time, v.kinetic_energy(), rates, increment)
    return ledger


@dataclass
class Certificate:
    ok: bool
    gap_ok: bool
    inequality_ok: bool
    signs_ok: bool
    min_gap_slack: float
    max_violation: float
    cert_tol: float


def check_certificate(ledger, cert_tol=CERT_TOL):
    """Energy-inequality certificate with ``cert_tol`` relative to the initial kinetic energy."""
    if not ledger.records:
        raise InputError("empty ledger")
    tol = cert_tol * ledger.kinetic0
    k0 = ledger.kinetic0
    min_gap = math.inf
    worst = -math.inf
    signs = True
    for r in ledger.records:
        floor = -rheology.GAP_ABS_TOL * (1.0 + abs(r.diss_F) + abs(r.diss_Fstar))
        min_gap = min(min_gap, r.gap - floor)
        worst = max(worst, r.kinetic + r.cum_diss - k0 - r.cum_work)
        signs &= r.kinetic >= 0 and r.diss_F >= floor and r.diss_Fstar >= floor
    gap_ok = min_gap >= 0
    ineq_ok = worst <= tol
    return Certificate(gap_ok and ineq_ok and signs, gap_ok, ineq_ok, signs, min_gap, worst, tol)


# --- Reynolds defect ------------------------------------------------------------

@dataclass
class DefectEstimate:
    """Cell-wise second-moment defect of a fine field over a coarse partition."""

    fine_N: int
    coarse_N: int
    d: int
    cells: np.ndarray  # (coarse_N^d, d, d)
    min_eigenvalues: np.ndarray
    cell_volume: float
    time: float = 0.0

    @property
    def min_eigenvalue(self):
        return float(self.min_eigenvalues.min())

    @property
    def trace_total(self):
        return self.cell_volume * float(np.trace(self.cells, axis1=1, axis2=2).sum())

    @property
    def psd_ok(self):
        return self.min_eigenvalue >= -1e-10 * (1.0 + self.trace_total)

    def tensor_field(self, grid):
        """The estimate as a piecewise-constant physical field on ``grid``."""
        if grid.N % self.coarse_N:
            raise ConfigurationError("grid does not refine the defect partition")
        b = grid.N // self.coarse_N
        blocks = self.cells.reshape((self.coarse_N,) * self.d + (self.d, self.d))
        for ax in range(self.d):
            blocks = np.repeat(blocks, b, axis=ax)
        return np.moveaxis(np.moveaxis(blocks, -1, 0), -1, 0)

    def to_csv(self, path):
        pairs = [(i, j) for i in range(self.d) for j in range(i, self.d)]
        header = ["cell_index"] + [f"m{i + 1}{j + 1}" for i, j in pairs] + ["min_eig"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for n, (m, e) in enumerate(zip(self.cells, self.min_eigenvalues)):
                w.writerow([n] + [repr(float(m[i, j])) for i, j in pairs] + [repr(float(e))])


def _cell_mean(a, d, b):
    """Average over consecutive blocks of ``b`` points along the last ``d`` axes."""
    lead = a.shape[: a.ndim - d]
    n = a.shape[-1] // b
    shaped = a.reshape(lead + sum(((n, b) for _ in range(d)), ()))
    axes = tuple(len(lead) + 2 * i + 1 for i in range(d))
    return shaped.mean(axis=axes)


def estimate_defect(v_fine, coarse_N, subtract_resolved=False):
    """Two-grid estimator of the Reynolds defect.

    Each coarse cell gets the covariance matrix of the fine velocity samples
    inside it, ``<v v^T> - <v><v>^T``.  With ``subtract_resolved`` the modes
    representable on the coarse grid (its dealiased band) are removed first,
    so only unresolved content contributes.
    """
    g = v_fine.grid
    if coarse_N <= 0 or g.N % coarse_N:
        raise ConfigurationError(f"coarse_N={coarse_N} does not divide N={g.N}")
    c = v_fine.coeffs
    if subtract_resolved:
        band = g.dealias_fraction * coarse_N / 2.0
        keep = np.all(np.abs(g.modes) < band, axis=0)
        c = c * ~keep
    u = g.to_physical(c)
    d, b = g.d, g.N // coarse_N
    mean_u = _cell_mean(u, d, b)
    outer = np.einsum("i...,j...->ij...", u, u)
    mean_uu = _cell_mean(outer, d, b)
    m = mean_uu - np.einsum("i...,j...->ij...", mean_u, mean_u)
    cells = np.moveaxis(m.reshape(d, d, -1), -1, 0)
    cells = 0.5 * (cells + np.swapaxes(cells, 1, 2))
    eig = np.linalg.eigvalsh(cells)[:, 0]
    return DefectEstimate(g.N, coarse_N, d, cells, eig, (2.0 / coarse_N) ** d, v_fine.time)


# --- weak formulation -----------------------------------------------------------

@dataclass
class WeakFormResidual:
    cutoff: int
    n_tests: int
    incompressibility_residual: float
    momentum_residual: float
    quadrature_error: float
    times: np.ndarray = None
    momentum_by_time: np.ndarray = None


def _test_mask(grid, cutoff):
    band = grid.dealias_fraction * grid.N / 2.0
    mask = np.all(np.abs(grid.modes) <= cutoff, axis=0) & np.all(np.abs(grid.modes) < band, axis=0)
    mask[(0,) * grid.d] = False
    return mask


def _cumulative(values, dt):
    """Cumulative trapezoid and a Richardson estimate of its error at every node."""
    n = len(values)
    cum = np.zeros_like(values)
    if n > 1:
        cum[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]), axis=0)
    err = np.zeros(n)
    if n > 2:
        coarse = np.zeros_like(values[::2])
        coarse[1:] = np.cumsum(dt * (values[2::2] + values[:-2:2]), axis=0)
        diff = np.abs(cum[::2] - coarse) / 3.0
        e = diff.reshape(len(diff), -1).max(axis=1)
        err[::2] = e
        padded = np.append(e, e[-1])
        odd = len(err[1::2])
        err[1::2] = np.maximum(padded[:odd], padded[1:odd + 1])
    return cum, err


def weak_residuals(model, snapshots, cutoff=8, force=None, defects=None):
    """Residuals of the weak incompressibility and momentum identities.

    ``snapshots`` are velocities on one grid at uniformly spaced times.
    Tests are all divergence-free Fourier modes with ``|m_j| <= cutoff``
    inside the dealiased band; time integrals use the trapezoid rule, and
    ``quadrature_error`` is its Richardson error estimate.  ``defects`` is
    an optional sequence of DefectEstimate aligned with the snapshots.
    """
    if not snapshots or len(snapshots) < 2:
        raise InputError("weak residuals need at least two snapshots")
    grid = snapshots[0].grid
    times = np.array([s.time for s in snapshots])
    steps = np.diff(times)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, abs(steps.mean())):
        raise InputError("snapshots must be at strictly increasing uniform times")
    if defects is not None and len(defects) != len(snapshots):
        raise InputError("one defect estimate per snapshot is required")
    mask = _test_mask(grid, cutoff)
    P = spectral.make_basis_projection(grid)
    vol = grid.volume

    incomp = 0.0
    rates = []
    for n, v in enumerate(snapshots):
        if v.grid != grid:
            raise InputError("snapshots live on different grids")
        kc = np.sum(grid.k * v.coeffs, axis=0)
        incomp = max(incomp, vol * float(np.abs(kc[mask]).max(initial=0.0)))
        total = -spectral.convective_divergence(v) + spectral.stress_field(model, v).divergence
        fh = spectral._force_hat(force, v.time, grid)
        if fh is not None:
            total = total + fh
        if defects is not None:
            total = total - spectral._divergence_of_sym(grid, defects[n].tensor_field(grid))
        rates.append(P(total)[:, mask])
    rates = np.array(rates)
    cum, qerr = _cumulative(rates, float(steps.mean()))
    c0 = P(snapshots[0].coeffs)[:, mask]
    res = np.array([np.abs(P(v.coeffs)[:, mask] - c0 - cum[n]) for n, v in enumerate(snapshots)])
    by_time = vol * np.sqrt((res ** 2).sum(axis=1)).max(axis=1)
    return WeakFormResidual(cutoff, int(mask.sum()) * (grid.d - 1), incomp,
                            float(by_time.max()), vol * float(qerr.max()), times, by_time)


# --- conditional regularity -----------------------------------------------------

@dataclass
class RegularityVerdict:
    verdict: str
    budget_gap: float
    defect_trace: float
    reg_tol: float

    @property
    def ok(self):
        return self.verdict == "strong-consistent"


def regularity_diagnostic(ledger, defects, reg_tol=REG_TOL):
    """Does a run saturate its energy budget with negligible Reynolds defect?

    The budget gap is the largest ``|budget_residual|`` relative to the
    initial kinetic energy (absolute when that energy vanishes); the defect
    is the largest ``trace_total`` in ``defects``.
    """
    k0 = ledger.kinetic0 if ledger.records else 0.0
    gaps = [abs(r.budget_residual) for r in ledger.records]
    gap = max(gaps, default=0.0) / (k0 if k0 > 0 else 1.0)
    trace = max((d.trace_total for d in defects), default=0.0)
    ok = gap <= reg_tol and trace <= reg_tol
    return RegularityVerdict("strong-consistent" if ok else "not-strong-consistent",
                             gap, trace, reg_tol)
