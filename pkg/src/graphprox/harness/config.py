"""Declarative experiment configuration.

Configs are YAML mappings. Every section is validated strictly: unknown keys,
wrong types and out-of-range values raise `ConfigError` with the dotted path
of the offending field. Example::

    kind: eta_sweep_sparse
    seed: 7
    topology: {type: random_knn, agents: 20, k: 3, seed: 0}
    models: {type: sparse, M: 10, seed: 0}
    solver:
      mu: [0.005]
      eta: [0.0, 0.01, 0.02]
      iterations: 3000
      regularizers:
        - {kind: reweighted_l1, epsilon: 0.1}
        - {kind: l0, lam: 1.0}
    metrics: {runs: 30, runs_by_regularizer: {l0: 400}, window: 200}
    output: {dir: results/sparse}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from ..prox import Regularizer

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "KINDS"]

KINDS = ("theorem_illustration", "eta_sweep_sparse", "eta_sweep_smooth", "weather", "custom")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _keys(section: dict, path: str, allowed: dict[str, Any], required=()):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(section).__name__}")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        where = path if path != "config" else ""
        names = ", ".join(f"{where}.{k}".lstrip(".") for k in unknown)
        raise ConfigError(f"unknown key {names}; {path} allows {sorted(allowed)}")
    for key in required:
        if key not in section:
            raise ConfigError(f"{path}.{key}: required field missing")
    out = copy.deepcopy(allowed)
    out.update(section)
    return out


def _num(value, path, lo=None, hi=None, integer=False, strict_lo=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise ConfigError(f"{path}: must be {'>' if strict_lo else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {value}")
    return int(value) if integer else float(value)


def _num_list(value, path, **kw):
    if not isinstance(value, list):
        value = [value]
    if not value:
        raise ConfigError(f"{path}: sweep axis must not be empty")
    return [_num(v, f"{path}[{i}]", **kw) for i, v in enumerate(value)]


def _pair(value, path):
    if not (isinstance(value, list) and len(value) == 2):
        raise ConfigError(f"{path}: expected [low, high]")
    lo, hi = (_num(v, f"{path}[{i}]", lo=0, strict_lo=True) for i, v in enumerate(value))
    if hi < lo:
        raise ConfigError(f"{path}: low exceeds high")
    return [lo, hi]


TOPOLOGY = {"type": None, "agents": 20, "k": 3, "seed": 0, "path": None}
MODELS = {"type": None, "M": 10, "seed": 0, "cost": "mse", "tau": 5.0,
          "sigma_u": [1.0, 1.5], "sigma_v": [0.15, 0.25], "rho": 0.0}
SOLVER = {"mu": None, "eta": None, "eta_over_mu": None, "iterations": None,
          "init": "zeros", "init_seed": 0, "regularizers": None, "rho": 1e-5, "epochs": 1}
METRICS = {"runs": 30, "runs_by_regularizer": {}, "window": 200, "check_steady": True,
           "max_extensions": 3,
           "reference": "local_models", "tolerance": 1e-9, "batch": 100}
OUTPUT = {"dir": "results", "cache_dir": None, "trajectories": False}
WEATHER = {"dataset": None, "k_neighbors": 4, "standardize": True,
           "train": ["2004-01-01", "2012-12-31"], "test": ["2013-01-01", "2017-12-31"]}
TOP = {"kind": None, "seed": 0, "topology": None, "models": None, "solver": None,
       "metrics": {}, "output": {}, "weather": None, "description": ""}
REG_KEYS = {"kind": None, "beta": 0.0, "lam": 1.0, "epsilon": 0.1}


def _regularizers(value, path) -> list[Regularizer]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of regularizers")
    regs = []
    for i, r in enumerate(value):
        if isinstance(r, str):
            r = {"kind": r}
        r = _keys(r, f"{path}[{i}]", REG_KEYS, required=("kind",))
        try:
            regs.append(Regularizer(r["kind"], float(r["beta"]), float(r["lam"]), float(r["epsilon"])))
        except ValueError as exc:
            raise ConfigError(f"{path}[{i}]: {exc}") from None
    labels = [g.label() for g in regs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: duplicate regularizers {labels}")
    return regs


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; `raw` keeps the normalized mapping."""

    raw: dict
    regularizers: tuple[Regularizer, ...]

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def digest(self) -> str:
        """Hash of everything that determines the numerical results."""
        core = {k: v for k, v in self.raw.items() if k not in ("output", "description")}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def runs_for(self, reg: Regularizer) -> int:
        return int(self.raw["metrics"]["runs_by_regularizer"].get(reg.kind, self.raw["metrics"]["runs"]))

    def etas_for(self, mu: float) -> list[float]:
        s = self.raw["solver"]
        if s["eta_over_mu"] is not None:
            return [r * mu for r in s["eta_over_mu"]]
        return list(s["eta"])


def parse_config(data: dict, base_dir=None, seed_override=None) -> ExperimentConfig:
    """Validate a raw mapping and fill defaults."""
    cfg = _keys(data, "config", TOP, required=("kind",))
    if cfg["kind"] not in KINDS:
        raise ConfigError(f"config.kind: must be one of {list(KINDS)}, got {cfg['kind']!r}")
    if seed_override is not None:
        cfg["seed"] = seed_override
    cfg["seed"] = _num(cfg["seed"], "config.seed", lo=0, integer=True)
    kind = cfg["kind"]

    m = _keys(cfg["metrics"], "metrics", METRICS)
    m["runs"] = _num(m["runs"], "metrics.runs", lo=1, integer=True)
    if not isinstance(m["runs_by_regularizer"], dict):
        raise ConfigError("metrics.runs_by_regularizer: expected a mapping")
    for name, n in m["runs_by_regularizer"].items():
        if name not in Regularizer.KINDS:
            raise ConfigError(f"metrics.runs_by_regularizer.{name}: unknown regularizer")
        m["runs_by_regularizer"][name] = _num(n, f"metrics.runs_by_regularizer.{name}", lo=1, integer=True)
    m["window"] = _num(m["window"], "metrics.window", lo=1, integer=True)
    m["tolerance"] = _num(m["tolerance"], "metrics.tolerance", lo=0, strict_lo=True)
    m["batch"] = _num(m["batch"], "metrics.batch", lo=1, integer=True)
    m["max_extensions"] = _num(m["max_extensions"], "metrics.max_extensions", lo=0, integer=True)
    if m["reference"] not in ("local_models", "regularized_solution", "both"):
        raise ConfigError("metrics.reference: must be local_models, regularized_solution or both")
    if not isinstance(m["check_steady"], bool):
        raise ConfigError("metrics.check_steady: expected true/false")
    if kind == "theorem_illustration" and "reference" not in data.get("metrics", {}):
        m["reference"] = "regularized_solution"
    cfg["metrics"] = m

    o = _keys(cfg["output"], "output", OUTPUT)
    cfg["output"] = o

    s = _keys(cfg["solver"] or {}, "solver", SOLVER, required=("mu", "regularizers"))
    s["mu"] = _num_list(s["mu"], "solver.mu", lo=0, strict_lo=True)
    if (s["eta"] is None) == (s["eta_over_mu"] is None):
        raise ConfigError("solver: give exactly one of 'eta' or 'eta_over_mu'")
    if s["eta"] is not None:
        s["eta"] = _num_list(s["eta"], "solver.eta", lo=0)
    else:
        s["eta_over_mu"] = _num_list(s["eta_over_mu"], "solver.eta_over_mu", lo=0)
    regs = _regularizers(s["regularizers"], "solver.regularizers")
    s["regularizers"] = [{"kind": r.kind, "beta": r.beta, "lam": r.lam, "epsilon": r.epsilon}
                         for r in regs]
    if s["init"] not in ("zeros", "gaussian"):
        raise ConfigError("solver.init: must be 'zeros' or 'gaussian'")
    s["init_seed"] = _num(s["init_seed"], "solver.init_seed", lo=0, integer=True)
    s["rho"] = _num(s["rho"], "solver.rho", lo=0)
    s["epochs"] = _num(s["epochs"], "solver.epochs", lo=1, integer=True)
    if kind == "weather":
        if s["iterations"] is not None:
            raise ConfigError("solver.iterations: not used by weather runs (set solver.epochs)")
    else:
        if s["iterations"] is None:
            raise ConfigError("solver.iterations: required field missing")
        s["iterations"] = _num(s["iterations"], "solver.iterations", lo=1, integer=True)
        if s["iterations"] <= m["window"]:
            raise ConfigError("solver.iterations: must exceed metrics.window")
    cfg["solver"] = s

    if kind == "weather":
        for sec in ("topology", "models"):
            if cfg[sec] is not None:
                raise ConfigError(f"{sec}: not used by weather runs (graph and data come from the dataset)")
        w = _keys(cfg["weather"] or {}, "weather", WEATHER, required=("dataset",))
        if w["dataset"] != "synthetic" and base_dir is not None:
            w["dataset"] = str((Path(base_dir) / w["dataset"]).resolve()) \
                if not Path(w["dataset"]).is_absolute() else w["dataset"]
        w["k_neighbors"] = _num(w["k_neighbors"], "weather.k_neighbors", lo=1, integer=True)
        for key in ("train", "test"):
            if not (isinstance(w[key], list) and len(w[key]) == 2):
                raise ConfigError(f"weather.{key}: expected [first_day, last_day]")
            w[key] = [str(d) for d in w[key]]
        cfg["weather"] = w
        return ExperimentConfig(cfg, tuple(regs))

    if cfg["weather"] is not None:
        raise ConfigError("weather: only valid for kind 'weather'")
    t = _keys(cfg["topology"] or {}, "topology", TOPOLOGY, required=("type",))
    if t["type"] not in ("ring", "random_knn", "file"):
        raise ConfigError("topology.type: must be ring, random_knn or file")
    t["agents"] = _num(t["agents"], "topology.agents", lo=1, integer=True)
    t["k"] = _num(t["k"], "topology.k", lo=1, integer=True)
    t["seed"] = _num(t["seed"], "topology.seed", lo=0, integer=True)
    if t["type"] == "file":
        if not t["path"]:
            raise ConfigError("topology.path: required for type 'file'")
        if base_dir is not None and not Path(t["path"]).is_absolute():
            t["path"] = str((Path(base_dir) / t["path"]).resolve())
    cfg["topology"] = t

    md = _keys(cfg["models"] or {}, "models", MODELS, required=("type",))
    expected = {"eta_sweep_sparse": "sparse", "eta_sweep_smooth": "smooth"}.get(kind)
    if md["type"] not in ("sparse", "smooth"):
        raise ConfigError("models.type: must be sparse or smooth")
    if expected and md["type"] != expected:
        raise ConfigError(f"models.type: kind {kind} requires {expected!r} models")
    if md["cost"] not in ("mse", "logistic"):
        raise ConfigError("models.cost: must be mse or logistic")
    md["M"] = _num(md["M"], "models.M", lo=1, integer=True)
    md["seed"] = _num(md["seed"], "models.seed", lo=0, integer=True)
    md["tau"] = _num(md["tau"], "models.tau", lo=0, strict_lo=True)
    md["sigma_u"] = _pair(md["sigma_u"], "models.sigma_u")
    md["sigma_v"] = _pair(md["sigma_v"], "models.sigma_v")
    md["rho"] = _num(md["rho"], "models.rho", lo=0)
    cfg["models"] = md

    if m["reference"] in ("regularized_solution", "both"):
        bad = [r.label() for r in regs if not r.convex]
        if bad:
            raise ConfigError(f"metrics.reference: regularized solution undefined for {bad}")
    return ExperimentConfig(cfg, tuple(regs))


def load_config(path, seed_override=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    if data is None:
        raise ConfigError(f"{path}: empty config")
    return parse_config(data, base_dir=path.parent, seed_override=seed_override)
