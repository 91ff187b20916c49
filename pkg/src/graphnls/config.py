"""Flat ``key = value`` experiment configuration with dotted keys."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

COMMANDS = ("spectrum", "ground-state", "gamma-star", "criterion", "omega-star-scan",
            "evolve", "virial-check", "instability", "symmetric-mode")

# key -> (type, default)
DEFAULTS: dict = {
    "n_edges": (int, 3),
    "edge_length": (float, 40.0),
    "cells_per_edge": (int, 4000),
    "symmetric": (bool, False),
    "gamma": (float, 2.0),
    "omega": (float, 4.0),
    "p": (float, 3.0),
    "potential.kind": (str, "zero"),
    "potential.beta": (float, 1.0),
    "potential.alpha": (float, 0.5),
    "potential.files": (str, ""),
    "eigen.tol": (float, 1e-10),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 5000),
    "criterion.dlam": (float, 1e-2),
    "scan.omega_min": (float, 10.0),
    "scan.omega_max": (float, 200.0),
    "scan.n": (int, 8),
    "scan.tol": (float, 1e-3),
    "scan.workers": (int, 1),
    "evolve.dt": (float, 2e-3),
    "evolve.t_final": (float, 1.0),
    "evolve.scheme": (str, "crank-nicolson-fixedpoint"),
    "evolve.fixedpoint_tol": (float, 1e-12),
    "evolve.monitor_stride": (int, 1),
    "evolve.allow_large_dt": (bool, False),
    "evolve.initial": (str, "soliton"),
    "evolve.amplitude": (float, 1.0),
    "evolve.chirp": (float, 0.0),
    "evolve.lambda": (float, 1.0),
    "instability.lambda1": (float, 1.01),
    "instability.a": (float, math.nan),  # nan: 6 / sqrt(omega)
    "instability.eps_tube": (float, 0.05),
    "instability.relative_tube": (bool, True),
    "instability.require_entry": (bool, True),  # false for control runs
    "instability.perturbation": (str, "scaling"),
    "instability.noise_amplitude": (float, 1e-3),
    "seed": (int, 0),
    "output_dir": (str, ""),
}

CHOICES = {
    "potential.kind": ("zero", "inverse_power", "tabulated"),
    "evolve.scheme": ("crank-nicolson-fixedpoint", "crank-nicolson-relaxation"),
    "evolve.initial": ("soliton", "ground-state", "zero", "eigenvector"),
    "instability.perturbation": ("scaling", "noise"),
}

POSITIVE = ("edge_length", "eigen.tol", "solver.tol", "criterion.dlam", "scan.omega_min",
            "scan.omega_max", "scan.tol", "evolve.dt", "evolve.fixedpoint_tol",
            "instability.lambda1", "instability.eps_tube")


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _coerce(key: str, raw):
    kind = DEFAULTS[key][0]
    if not isinstance(raw, str):
        value = raw
    elif kind is bool:
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(key, f"expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    else:
        raw = raw.strip()
        try:
            if kind is int:
                f = float(raw)  # accepts "4e3"
                if not f.is_integer():
                    raise ValueError
                value = int(f)
            else:
                value = kind(raw)
        except ValueError:
            raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}") from None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(key, f"expected {kind.__name__}, got {value!r}")
    return value


def parse_lines(lines) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_file(path) -> dict:
    return parse_lines(Path(path).read_text().splitlines())


@dataclass
class ExperimentConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def hash(self) -> str:
        """sha256 of the resolved config, ignoring where the output goes."""
        body = {k: v for k, v in self.values.items() if k != "output_dir"}
        body["command"] = self.command
        text = json.dumps(body, sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()

    def as_dict(self) -> dict:
        d = {"command": self.command}
        d.update({k: (None if isinstance(v, float) and math.isnan(v) else v)
                  for k, v in self.values.items()})
        return d


def resolve(command: str, raw: dict | None = None, overrides=()) -> ExperimentConfig:
    """Merge defaults, file values and ``key=value`` overrides, then validate."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}; expected one of {COMMANDS}")
    merged = dict(raw or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = item.split("=", 1)
        merged[k.strip()] = v
    values = {k: d for k, (_, d) in DEFAULTS.items()}
    for key, raw_value in merged.items():
        if key == "command":
            continue
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, raw_value)
    cfg = ExperimentConfig(command, values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    for key, allowed in CHOICES.items():
        if v[key] not in allowed:
            raise ConfigError(key, f"must be one of {allowed}, got {v[key]!r}")
    for key in POSITIVE:
        if not v[key] > 0:
            raise ConfigError(key, f"must be positive, got {v[key]}")
    if v["n_edges"] < 2:
        raise ConfigError("n_edges", "a star graph needs at least 2 edges")
    if v["cells_per_edge"] < 4:
        raise ConfigError("cells_per_edge", "need at least 4 cells per edge")
    if not v["p"] > 1:
        raise ConfigError("p", "nonlinearity power must exceed 1")
    if not v["omega"] > 0 and cfg.command not in ("spectrum",):
        raise ConfigError("omega", "must be positive")
    if v["potential.kind"] == "inverse_power":
        if not v["potential.beta"] > 0:
            raise ConfigError("potential.beta", "must be positive")
        if not 0 < v["potential.alpha"] < 1:
            raise ConfigError("potential.alpha", "must lie in (0, 1)")
    if v["potential.kind"] == "tabulated" and not v["potential.files"]:
        raise ConfigError("potential.files", "tabulated potential needs table files")
    if v["scan.omega_max"] <= v["scan.omega_min"]:
        raise ConfigError("scan.omega_max", "must exceed scan.omega_min")
    if v["scan.n"] < 2:
        raise ConfigError("scan.n", "need at least 2 scan points")
    if v["scan.workers"] < 1:
        raise ConfigError("scan.workers", "must be >= 1")
    if v["evolve.t_final"] < 0:
        raise ConfigError("evolve.t_final", "must be non-negative")
    if v["evolve.monitor_stride"] < 1:
        raise ConfigError("evolve.monitor_stride", "must be >= 1")
    h = v["edge_length"] / v["cells_per_edge"]
    if cfg.command in ("evolve", "virial-check", "instability") and \
            v["evolve.dt"] > h and not v["evolve.allow_large_dt"]:
        raise ConfigError("evolve.dt", f"dt = {v['evolve.dt']} exceeds h = {h:.3g}; "
                                       "set evolve.allow_large_dt = true to override")
    a = v["instability.a"]
    if not math.isnan(a) and not a > 0:
        raise ConfigError("instability.a", "cutoff radius must be positive")
    if cfg.command == "omega-star-scan":
        if not v["p"] > 5:
            raise ConfigError("p", "omega* scan needs p > 5")
        if v["potential.kind"] != "inverse_power":
            raise ConfigError("potential.kind", "omega* scan needs an inverse-power potential")
