"""Experiment configuration: ``key = value`` text files with dotted keys.

Lines starting with ``#`` (and anything after an unquoted ``#``) are
comments, values are numbers, booleans (``on``/``off``/``true``/``false``),
bare strings or comma lists of those.
"""
import math

from .errors import ConfigurationError

DEFAULTS = {
    "rheology.kind": "newtonian",
    "grid.d": 2,
    "grid.N": 32,
    "grid.dealias_fraction": 2.0 / 3.0,
    "time.T_final": 1.0,
    "time.dt": "auto",
    "time.record_stride": 1,
    "time.if_mu0": 0.0,
    "initial.kind": "taylor_green",
    "initial.seed": 0,
    "initial.spectral_decay": 4.0,
    "initial.max_mode": 4,
    "initial.energy": 0.5,
    "initial.amplitude": 1.0,
    "force.kind": "none",
    "output.dir": "out",
    "output.snapshot_stride": 0,
    "output.defect_coarse_N": 0,
}

RHEOLOGY_KEYS = ("mu", "mu1", "mu2", "p", "tau0", "eps_reg", "smoothing", "base",
                 "conjugate_mode", "L")

KNOWN_SECTIONS = ("rheology", "grid", "time", "initial", "force", "experiment", "output")


def _scalar(text):
    low = text.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(text):
    text = text.strip()
    if "," in text:
        return [_scalar(p.strip()) for p in text.split(",") if p.strip()]
    return _scalar(text)


def parse(text):
    """Parse config text into a flat dict of dotted keys."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key or key.split(".", 1)[0] not in KNOWN_SECTIONS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


class Config(dict):
    """Flat dotted-key mapping with defaults and typed accessors."""

    def __init__(self, values=None):
        super().__init__(DEFAULTS)
        self.update(values or {})

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.items() if k.startswith(prefix)}

    def num(self, key, default=None):
        v = self.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigurationError(f"{key} must be a number, got {v!r}")
        return v

    def int(self, key, default=None):
        v = self.num(key, default)
        if int(v) != v:
            raise ConfigurationError(f"{key} must be an integer, got {v!r}")
        return int(v)

    def list(self, key, default=None):
        v = self.get(key, default)
        if v is None:
            return None
        return v if isinstance(v, list) else [v]

    def flag(self, key, default=False):
        v = self.get(key, default)
        if not isinstance(v, bool):
            raise ConfigurationError(f"{key} must be on/off, got {v!r}")
        return v

    def dumps(self):
        """Deterministic text form that :func:`parse` reads back to the same mapping."""
        lines = []
        for key in sorted(self):
            v = self[key]
            if isinstance(v, list):
                text = ", ".join(_fmt(x) for x in v)
                if len(v) == 1:
                    text += ","
            else:
                text = _fmt(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
            return repr(float(v))
        return repr(v)
    return str(v)


def model_from(cfg):
    """Build the RheologyModel described by the ``rheology.*`` keys."""
    from . import rheology
    import numpy as np

    params = {}
    for key, value in cfg.section("rheology").items():
        if key == "kind":
            continue
        if key not in RHEOLOGY_KEYS:
            raise ConfigurationError(f"unknown rheology key {key!r}")
        params[key] = value
    if "L" in params:
        L = np.asarray(params["L"], dtype=float)
        n = int(round(math.sqrt(L.size)))
        if n * n != L.size:
            raise ConfigurationError("rheology.L must list a square matrix row by row")
        params["L"] = L.reshape(n, n)
    return rheology.make_model(cfg["rheology.kind"], **params)
