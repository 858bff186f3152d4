"""Command-line entry point: ``drheo <command> [--config PATH] [--out DIR] ...``."""
import argparse
import logging
import sys

from . import config as cfgmod
from . import experiments, spectral
from .errors import CertificateViolation, DrheoError

log = logging.getLogger("drheo")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def _common(p):
    p.add_argument("--config", metavar="PATH", help="experiment config file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, metavar="U64", help="override initial.seed")
    p.add_argument("--threads", type=int, metavar="N", help="FFT worker count")


def build_parser():
    parser = argparse.ArgumentParser(prog="drheo", description=__doc__)
    # global flags may come before or after the command
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "step a configured run and write its energy ledger"),
        ("verify-rheology", "check the structural hypotheses of a dissipation potential"),
        ("weak-strong", "coarse runs against a resolved reference"),
        ("taylor-green", "Newtonian Taylor-Green decay regression"),
        ("conjugate-table", "tabulate the conjugate potential on a log grid"),
    ]:
        _common(sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS))
    return parser


def load_config(args):
    values = cfgmod.load(args.config) if args.config else {}
    cfg = cfgmod.Config(values)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise cfgmod.ConfigurationError("--seed must be an unsigned 64-bit integer")
        cfg["initial.seed"] = args.seed
    return cfg


def _check(ok, what):
    if not ok:
        raise CertificateViolation(what)


def dispatch(args):
    cfg = load_config(args)
    out = args.out or cfg["output.dir"]
    cmd = args.command
    if cmd == "simulate":
        res = experiments.run_simulate(cfg, out)
        log.info("%d steps, certificate %s", res.summary["steps"],
                 "ok" if res.certificate.ok else "VIOLATED")
        _check(res.certificate.ok, f"energy certificate violated by {res.certificate.max_violation:.3e}")
    elif cmd == "taylor-green":
        res = experiments.run_taylor_green(cfg, out)
        err = res.summary["max_rel_error"]
        log.info("max relative kinetic energy error %.3e", err)
        _check(res.certificate.ok, "energy certificate violated")
        _check(err <= 1e-6, f"decay error {err:.3e} above 1e-6")
    elif cmd == "verify-rheology":
        report, _ = experiments.run_verify_rheology(cfg, out)
        for key, ok in report.verdict.items():
            log.info("%-24s %s", key, "pass" if ok else "fail")
        _check(report.fenchel_young_ok, "Fenchel-Young inequality violated")
    elif cmd == "conjugate-table":
        experiments.run_conjugate_table(cfg, out)
    elif cmd == "weak-strong":
        res = experiments.run_weak_strong(cfg, out)
        log.info("sup E by N: %s -> %s", res.sup_E_by_N, res.verdict)
        _check(res.verdict == "weak-strong-consistent", f"verdict {res.verdict}")
    return EXIT_OK


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    for key in ("config", "out", "seed", "threads"):
        if not hasattr(args, key):
            setattr(args, key, None)
    if args.threads is not None:
        spectral.set_workers(args.threads)
    try:
        return dispatch(args)
    except CertificateViolation as exc:
        log.error("certificate violation: %s", exc)
        return EXIT_VIOLATION
    except (DrheoError, OSError) as exc:
        log.error("error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
