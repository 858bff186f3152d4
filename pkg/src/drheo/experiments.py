"""Orchestration of the command-line experiments and all their file output."""
import csv
import json
import math
import os

import numpy as np

from . import config as cfgmod
from . import energy, kernels, relative, rheology, spectral
from .errors import ConfigurationError, StabilityError

FORMAT_VERSION = 1


def _fmt(x):
    return repr(float(x))


def prepare_output(out_dir, cfg, command, extra=None):
    """Create the run directory and write the config echo and metadata."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())
    meta = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "workers": spectral.get_workers(),
        "kernel_backend": kernels.backend.name,
    }
    meta.update(extra or {})
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_grid(cfg):
    return spectral.TorusGrid(cfg.int("grid.d"), cfg.int("grid.N"), cfg.num("grid.dealias_fraction"))


def build_initial(cfg, grid, model=None):
    kind = cfg["initial.kind"]
    if kind == "manufactured":
        _, ref = build_force(cfgmod.Config(dict(cfg, **{"force.kind": "manufactured"})), model, grid)
        return ref.at(0.0)
    if kind == "taylor_green":
        return spectral.taylor_green(grid, cfg.num("initial.amplitude"))
    if kind == "seeded_random_smooth":
        return spectral.seeded_random_smooth(
            grid, cfg.int("initial.seed"), cfg.num("initial.spectral_decay"),
            cfg.int("initial.max_mode"), cfg.num("initial.energy"))
    if kind == "snapshot":
        v = spectral.read_snapshot(cfg["initial.snapshot_path"], grid.dealias_fraction)
        if v.grid.d != grid.d:
            raise ConfigurationError("snapshot dimension differs from grid.d")
        return v if v.grid.N == grid.N else v.resampled(grid)
    raise ConfigurationError(f"unknown initial.kind {kind!r}")


def build_force(cfg, model, grid):
    kind = cfg["force.kind"]
    if kind == "none":
        return None, None
    if kind == "manufactured":
        ref = relative.manufactured(model, grid, cfg.num("force.decay", 0.5),
                                    cfg.num("force.shear", 0.5))
        return ref.force, ref
    raise ConfigurationError(f"unknown force.kind {kind!r}")


def _dt(cfg):
    dt = cfg["time.dt"]
    if dt == "auto":
        return dt
    if isinstance(dt, bool) or not isinstance(dt, (int, float)) or not dt > 0:
        raise ConfigurationError(f"time.dt must be positive or 'auto', got {dt!r}")
    return float(dt)


class SimulationResult:
    def __init__(self, ledger, certificate, summary, snapshots, defects, regularity):
        self.ledger = ledger
        self.certificate = certificate
        self.summary = summary
        self.snapshots = snapshots
        self.defects = defects
        self.regularity = regularity


def run_simulate(cfg, out_dir=None, keep_snapshots=False):
    """Step a configured run to ``time.T_final`` writing ledger, snapshots and summary."""
    model = cfgmod.model_from(cfg)
    grid = build_grid(cfg)
    if model.dim is not None and model.dim != grid.d:
        raise ConfigurationError("rheology.L does not match grid.d")
    v0 = build_initial(cfg, grid, model)
    v0.check()
    force, _ = build_force(cfg, model, grid)
    dt = _dt(cfg)
    if_mu0 = cfg.num("time.if_mu0")
    T = cfg.num("time.T_final")
    stride = cfg.int("time.record_stride")
    snap_stride = cfg.int("output.snapshot_stride")
    coarse_N = cfg.int("output.defect_coarse_N")
    if stride < 1:
        raise ConfigurationError("time.record_stride must be >= 1")
    if T < 0:
        raise ConfigurationError("time.T_final must be >= 0")
    first_dt = 0.5 * spectral.cfl_limit(model, v0, if_mu0) if dt == "auto" else dt
    if out_dir is not None:
        prepare_output(out_dir, cfg, "simulate",
                       {"initial_dt": first_dt if math.isfinite(first_dt) else None,
                        "seed": cfg.int("initial.seed")})
    ledger = energy.EnergyLedger()
    snapshots, defects = [], []
    state = {"count": 0, "last": v0}

    def on_record(v, inc):
        energy.record_ledger(model, v, None, force, ledger, inc)
        v.check(1e-12)
        n = state["count"]
        state["last"] = v
        if keep_snapshots:
            snapshots.append(v.copy())
        if coarse_N:
            defects.append(energy.estimate_defect(v, coarse_N, subtract_resolved=True))
        if out_dir is not None and snap_stride and n % snap_stride == 0:
            spectral.write_snapshot(os.path.join(out_dir, f"snapshot_{n:06d}.bin"), v)
        state["count"] += 1

    try:
        v, stats = spectral.integrate(model, v0, T, dt, force=force, if_mu0=if_mu0,
                                      record_stride=stride, on_record=on_record)
    except StabilityError:
        if out_dir is not None:
            spectral.write_snapshot(os.path.join(out_dir, "last_good.bin"), state["last"])
        raise
    cert = energy.check_certificate(ledger)
    regularity = energy.regularity_diagnostic(ledger, defects) if coarse_N else None
    summary = {
        "steps": stats.steps,
        "min_dt": stats.min_dt if stats.steps else None,
        "max_dt": stats.max_dt if stats.steps else None,
        "max_gap": max(r.gap for r in ledger.records),
        "min_gap_slack": cert.min_gap_slack,
        "certificate_ok": cert.ok,
        "certificate_violation": cert.max_violation,
        "cert_tol": cert.cert_tol,
        "final_time": v.time,
        "final_kinetic": ledger.records[-1].kinetic,
    }
    if regularity is not None:
        summary["regularity"] = {"verdict": regularity.verdict,
                                 "budget_gap": regularity.budget_gap,
                                 "defect_trace": regularity.defect_trace}
    if out_dir is not None:
        ledger.to_csv(os.path.join(out_dir, "ledger.csv"))
        spectral.write_snapshot(os.path.join(out_dir, "final.bin"), v)
        if defects:
            defects[-1].to_csv(os.path.join(out_dir, "defect_final.csv"))
        _write_json(os.path.join(out_dir, "summary.json"), summary)
    return SimulationResult(ledger, cert, summary, snapshots, defects, regularity)


def run_taylor_green(cfg, out_dir=None):
    """Newtonian Taylor-Green regression against the exact exponential decay."""
    cfg = cfgmod.Config(dict(cfg, **{"initial.kind": "taylor_green"}))
    model = cfgmod.model_from(cfg)
    if model.kind != "newtonian" or cfg.int("grid.d") != 2:
        raise ConfigurationError("taylor-green needs rheology.kind = newtonian and grid.d = 2")
    res = run_simulate(cfg, out_dir)
    # each velocity mode has |k|^2 = 2 pi^2 and decays at mu |k|^2 / 2
    rate = 2.0 * model.mu * math.pi ** 2
    k0 = res.ledger.kinetic0
    rows, worst = [], 0.0
    for r in res.ledger.records:
        exact = k0 * math.exp(-rate * r.time)
        err = abs(r.kinetic - exact) / exact
        worst = max(worst, err)
        rows.append((r.time, r.kinetic, exact, err))
    res.summary["max_rel_error"] = worst
    res.summary["decay_rate"] = rate
    if out_dir is not None:
        with open(os.path.join(out_dir, "decay.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "kinetic", "exact", "rel_error"])
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        _write_json(os.path.join(out_dir, "summary.json"), res.summary)
    return res


def conjugate_table(model, S_min=1e-3, S_max=1e3, count=61, d=2):
    """F* along a ray ``sigma * E`` with ``E`` a fixed unit traceless tensor."""
    sig = np.logspace(math.log10(S_min), math.log10(S_max), int(count))
    E = np.zeros((d, d))
    E[0, 0], E[1, 1] = 1.0, -1.0
    E /= np.linalg.norm(E)
    S = E[:, :, None] * sig
    return sig, rheology.conjugate(model, S)


def run_conjugate_table(cfg, out_dir=None):
    model = cfgmod.model_from(cfg)
    d = model.dim or cfg.int("grid.d")
    sig, fs = conjugate_table(model, cfg.num("experiment.S_min", 1e-3),
                              cfg.num("experiment.S_max", 1e3),
                              cfg.int("experiment.S_count", 61), d)
    if out_dir is not None:
        prepare_output(out_dir, cfg, "conjugate-table")
        with open(os.path.join(out_dir, "conjugate_table.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "F_star"])
            for a, b in zip(sig, fs):
                w.writerow([_fmt(a), _fmt(b)])
    return sig, fs


def run_verify_rheology(cfg, out_dir=None):
    model = cfgmod.model_from(cfg)
    report = rheology.validate_hypotheses(model, samples=cfg.int("experiment.samples", 200),
                                          seed=cfg.int("initial.seed"))
    if out_dir is not None:
        prepare_output(out_dir, cfg, "verify-rheology")
    sig, fs = run_conjugate_table(cfg, None)
    if out_dir is not None:
        with open(os.path.join(out_dir, "conjugate_table.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "F_star"])
            for a, b in zip(sig, fs):
                w.writerow([_fmt(a), _fmt(b)])
        _write_json(os.path.join(out_dir, "hypotheses.json"), {
            "verdict": report.verdict,
            "passed": report.passed,
            "max_gap": report.max_gap,
            "min_gap": report.min_gap,
            "F_star_ball_radius": report.F_star_ball_radius,
            "conjugate_superlinear_slope_at": {str(k): v for k, v in
                                               report.conjugate_superlinear_slope_at.items()},
        })
    return report, (sig, fs)


def weak_strong_config(cfg):
    model = cfgmod.model_from(cfg)
    seed = cfg.int("initial.seed")
    exp = cfg.section("experiment")
    return relative.WeakStrongConfig(
        model=model,
        N_list=tuple(int(n) for n in cfg.list("experiment.N_list", [16, 32, 64])),
        N_ref=cfg.int("experiment.N_ref", 128),
        T_final=cfg.num("time.T_final"),
        dt=_dt(cfg),
        record_stride=cfg.int("time.record_stride"),
        initial=cfg["initial.kind"],
        seed=seed,
        coarse_seed=exp.get("coarse_seed"),
        reference_seed=exp.get("reference_seed"),
        spectral_decay=cfg.num("initial.spectral_decay"),
        max_mode=cfg.int("initial.max_mode"),
        energy=cfg.num("initial.energy"),
        amplitude=cfg.num("initial.amplitude"),
        rtol_r2=cfg.num("experiment.rtol_r2", relative.RTOL_R2),
        stress_term=cfg.flag("experiment.gronwall_stress_term", False),
        wallclock_cap=cfg.num("experiment.wallclock_cap", 300.0),
        dealias_fraction=cfg.num("grid.dealias_fraction"),
        d=cfg.int("grid.d"),
    )


def run_weak_strong(cfg, out_dir=None):
    wcfg = weak_strong_config(cfg)
    if out_dir is not None:
        prepare_output(out_dir, cfg, "weak-strong")
    result = relative.weak_strong_experiment(wcfg)
    if out_dir is not None:
        for N, rep in result.reports.items():
            rep.to_csv(os.path.join(out_dir, f"report_N{N}.csv"))
        summary = result.summary()
        summary.update(partial=result.partial, dt=result.dt,
                       ratios={str(k): v for k, v in result.ratios.items()},
                       bound_ok={str(k): r.bound_ok for k, r in result.reports.items()})
        _write_json(os.path.join(out_dir, "summary.json"), summary)
    return result
