"""Line-oriented experiment configuration.

Grammar::

    # comment
    [section]
    key = value          # trailing comments allowed
    list = 1.0, -0.5, 2  # comma-separated floats

Unknown sections or keys, malformed lines and out-of-range values are all
collected and raised together as one :class:`ConfigError` whose entries name
the offending line.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCENARIOS = ("forward", "spectrum", "kernel", "invert", "order-sweep", "robin-sweep", "noise-sweep",
             "theorem2-loop", "multi-input-union", "ml-table")


def _float(text):
    return float(text)


def _int(text):
    return int(text)


def _floats(text):
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "run": {"scenario": (_choice(*SCENARIOS), "forward")},
    "model": {
        "alpha": (_float, 0.7),
        "basis": (_choice("bump", "cosine"), "bump"),
        "coeffs": (_floats, (1.0, 3.0, 1.0)),
        "h": (_float, 1.0),
        "H": (_float, 1.3),
    },
    "initial": {
        "modes": (_floats, (1.0, -0.6, 0.4, 0.25, -0.15)),
        "velocity": (_floats, ()),
    },
    "source": {
        "theta": (_floats, (1.0, 1.0)),
        "g": (_floats, (1.0,)),
    },
    "kernel": {
        "coeffs": (_floats, (0.0,)),
        "h": (_float, 1.0),
        "J": (_float, 1.3),
        "mesh": (_int, 128),
    },
    "grid": {
        "x_cells": (_int, 256),
        "t_min": (_float, 1e-3),
        "T": (_float, 5.0),
        "t_points": (_int, 400),
        "spacing": (_choice("log", "linear"), "log"),
    },
    "fit": {
        "modes": (_int, 5),
        "alpha_min": (_float, 0.05),
        "alpha_max": (_float, 1.95),
        "alpha_step": (_float, 0.05),
        "basis_dim": (_int, 3),
        "side": (_choice("left", "right"), "left"),
    },
    "noise": {
        "level": (_float, 0.0),
        "seed": (_int, 0),
    },
}


def _render_value(v):
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``values[section][key]`` with every default filled in."""

    values: dict
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def scenario(self):
        return self.values["run"]["scenario"]

    def render(self):
        """Canonical text: every section and key in schema order."""
        out = []
        for sec, keys in SCHEMA.items():
            out.append(f"[{sec}]")
            out.extend(f"{k} = {_render_value(self.values[sec][k])}" for k in keys)
            out.append("")
        return "\n".join(out)

    def digest(self):
        """SHA-256 of the canonical text."""
        return hashlib.sha256(self.render().encode()).hexdigest()

    def replace(self, section, **kw):
        """Copy with keys of one section replaced (validated again)."""
        vals = {s: dict(v) for s, v in self.values.items()}
        vals[section].update(kw)
        cfg = ExperimentConfig(vals)
        errors = _validate(cfg.values, {})
        if errors:
            raise ConfigError(errors)
        return cfg

    def time_grid(self):
        g = self.values["grid"]
        space = np.geomspace if g["spacing"] == "log" else np.linspace
        return space(g["t_min"], g["T"], g["t_points"])


def default_config():
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _validate(v, lines):
    errs = []

    def check(cond, sec, key, msg):
        if not cond:
            errs.append((lines.get((sec, key), 0), msg))

    m, g, f, n = v["model"], v["grid"], v["fit"], v["noise"]
    check(0.0 < m["alpha"] < 2.0, "model", "alpha", "alpha must lie in (0,2)")
    check(m["h"] > 0.0, "model", "h", "h must be positive (h, H > 0)")
    check(m["H"] > 0.0, "model", "H", "H must be positive (h, H > 0)")
    check(len(m["coeffs"]) >= 1, "model", "coeffs", "coeffs needs at least one value")
    check(len(v["initial"]["modes"]) >= 1, "initial", "modes", "modes needs at least one value")
    vel = v["initial"]["velocity"]
    check(not vel or len(vel) == len(v["initial"]["modes"]), "initial", "velocity",
          "velocity must have as many entries as modes")
    check(any(c != 0.0 for c in v["source"]["theta"]), "source", "theta", "theta must not vanish identically")
    check(v["kernel"]["h"] > 0.0, "kernel", "h", "h must be positive (h, H > 0)")
    check(v["kernel"]["J"] > 0.0, "kernel", "J", "J must be positive (h, H > 0)")
    check(v["kernel"]["mesh"] >= 16, "kernel", "mesh", "mesh must be at least 16")
    check(g["x_cells"] >= 16, "grid", "x_cells", "x_cells must be at least 16")
    check(g["t_min"] > 0.0, "grid", "t_min", "t_min must be positive")
    check(g["T"] > g["t_min"], "grid", "T", "T must exceed t_min")
    check(g["t_points"] >= 2, "grid", "t_points", "t_points must be at least 2")
    check(1 <= f["modes"] <= 8, "fit", "modes", "fit modes must lie in 1..8")
    check(0.0 < f["alpha_min"] < f["alpha_max"] < 2.0, "fit", "alpha_max",
          "alpha bounds must satisfy 0 < alpha_min < alpha_max < 2")
    check(f["alpha_step"] > 0.0, "fit", "alpha_step", "alpha_step must be positive")
    check(f["basis_dim"] >= 1, "fit", "basis_dim", "basis_dim must be at least 1")
    check(n["level"] >= 0.0, "noise", "level", "noise level must be non-negative")
    check(n["seed"] >= 0, "noise", "seed", "seed must be non-negative")
    return errs


def parse_config(text):
    """Parse and validate configuration text; missing keys take their defaults."""
    values = default_config().values
    values = {s: dict(k) for s, k in values.items()}
    lines, errs, seen = {}, [], set()
    section, skipping = None, False
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errs.append((ln, f"malformed section header {line!r}"))
                section, skipping = None, True
                continue
            section = line[1:-1].strip()
            skipping = section not in SCHEMA
            if skipping:
                errs.append((ln, f"unknown section [{section}]"))
                section = None
            continue
        if "=" not in line:
            errs.append((ln, f"expected 'key = value', got {line!r}"))
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if section is None:
            if not skipping:
                errs.append((ln, f"key {key!r} before any section header"))
            continue
        if key not in SCHEMA[section]:
            errs.append((ln, f"unknown key {key!r} in [{section}]"))
            continue
        if (section, key) in seen:
            errs.append((ln, f"duplicate key {key!r} in [{section}]"))
            continue
        seen.add((section, key))
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(val)
        except ValueError as exc:
            errs.append((ln, f"bad value for {section}.{key}: {val!r} ({exc})"))
            continue
        lines[(section, key)] = ln
    errs += _validate(values, lines)
    if errs:
        raise ConfigError(sorted(errs, key=lambda e: e[0]))
    return ExperimentConfig(values, lines)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
