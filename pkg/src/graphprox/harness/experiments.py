"""Config-driven experiment runner.

`run_experiment` turns an `ExperimentConfig` into a directory of artifacts:

``summary.txt``
    ``key = value`` lines (steady-state levels, best eta, prediction errors).
``provenance.txt``
    Config digest, seed and library versions.
``config.yaml``
    The normalized configuration that produced the run.
``sweep.csv`` / ``curve_*.csv`` / ``table.csv`` / ``results.csv``
    Tabular results; every CSV starts with a ``# config_digest: ...`` line.
``references/<key>.npz``
    Cached regularized solutions, reused across runs with the same inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from .. import __version__
from ..costs import ModelEnsemble, generate_smooth_models, generate_sparse_models
from ..metrics import LearningCurve, SteadyStateError, steady_state_db, write_curve_csv
from ..prox import Regularizer
from ..solver import ReferenceSolution, SolverConfig, run_decentralized, simulate_curves, solve_reference
from ..topology import Network, load_topology, random_geometric_network, ring_network
from .config import ExperimentConfig
from .weather import WeatherDataset, ingest_weather, synthetic_weather, weather_experiment

__all__ = ["ResultBundle", "run_experiment", "build_network_from", "build_models_from",
           "reference_for", "load_weather"]

log = logging.getLogger(__name__)


@dataclass
class ResultBundle:
    out_dir: Path
    digest: str
    summary: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    files: list = field(default_factory=list)


def build_network_from(topology: dict) -> Network:
    if topology["type"] == "ring":
        return ring_network(topology["agents"])
    if topology["type"] == "random_knn":
        return random_geometric_network(topology["agents"], topology["k"], topology["seed"])
    return load_topology(topology["path"])


def build_models_from(models: dict, network: Network) -> ModelEnsemble:
    kw = dict(kind=models["cost"], sigma_u_range=tuple(models["sigma_u"]),
              sigma_v_range=tuple(models["sigma_v"]), rho=models["rho"])
    if models["type"] == "sparse":
        return generate_sparse_models(network.num_agents, models["M"], models["seed"], **kw)
    return generate_smooth_models(network, models["M"], models["tau"], models["seed"], **kw)


def _key(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def reference_for(cfg: ExperimentConfig, network, ensemble, eta: float, reg: Regularizer,
                  cache_dir: Path | None) -> np.ndarray:
    """Regularized solution for one (eta, regularizer), cached on disk."""
    key = _key({"topology": cfg["topology"], "models": cfg["models"], "eta": eta,
                "reg": [reg.kind, reg.beta, reg.lam, reg.epsilon],
                "tol": cfg["metrics"]["tolerance"], "seed": cfg.seed})
    path = None if cache_dir is None else cache_dir / f"{key}.npz"
    if path is not None and path.exists():
        return ReferenceSolution.load(path).W
    sol = solve_reference(network, ensemble, eta, reg, cfg["metrics"]["tolerance"], seed=cfg.seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        sol.save(path)
    return sol.W


def _job(args):
    """Simulate one sweep point, lengthening the horizon until it settles.

    The steady-state rule compares the two halves of the final window. When
    it fails, the horizon grows by half the configured length (the sample
    streams are deterministic, so the earlier iterations are unchanged), up
    to ``metrics.max_extensions`` times; after that the error propagates.
    Returns the curves and the horizon used.
    """
    cfg_raw, mu, eta, reg, runs, refs = args
    cfg = ExperimentConfig(cfg_raw, ())
    network = build_network_from(cfg["topology"])
    ensemble = build_models_from(cfg["models"], network)
    s, m = cfg["solver"], cfg["metrics"]
    T = s["iterations"]
    for attempt in range(m["max_extensions"] + 1):
        sc = SolverConfig(mu, eta, reg, T, s["init"], s["init_seed"])
        curves = simulate_curves(network, ensemble, sc, cfg.seed, runs, refs, m["batch"])
        if not m["check_steady"]:
            return curves, T
        try:
            for values in curves.values():
                steady_state_db(values, m["window"], check=True)
            return curves, T
        except SteadyStateError:
            if attempt == m["max_extensions"]:
                raise
            log.info("mu=%g eta=%g %s: not settled at %d iterations; extending",
                     mu, eta, reg.label(), T)
            T += max(s["iterations"] // 2, 1)


def _csv_header(digest: str) -> str:
    return f"# config_digest: {digest}\n"


def _write_rows(path: Path, digest: str, columns, rows):
    with open(path, "w") as fh:
        fh.write(_csv_header(digest))
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in columns) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _provenance(cfg: ExperimentConfig) -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        rev = "unknown"
    lines = {
        "config_digest": cfg.digest(),
        "kind": cfg.kind,
        "seed": cfg.seed,
        "package_version": __version__,
        "git_revision": rev,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    return "".join(f"{k} = {v}\n" for k, v in lines.items())


def _write_summary(path: Path, summary: dict):
    with open(path, "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def load_weather(w: dict) -> WeatherDataset:
    """Dataset from a raw CSV, an ingested ``.npz`` or ``synthetic``."""
    if w["dataset"] == "synthetic":
        return synthetic_weather(k_neighbors=w["k_neighbors"])
    path = Path(w["dataset"])
    if path.suffix == ".npz":
        if not path.exists():
            raise FileNotFoundError(f"ingested dataset {path} not found; run 'graphprox ingest' first")
        return WeatherDataset.load(path)
    return ingest_weather(path, w["k_neighbors"], w["train"], w["test"], w["standardize"])


def _tag(x: float) -> str:
    return f"{x:.6g}"


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> ResultBundle:
    """Run every sweep point of `cfg` and write the result bundle."""
    out = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    bundle = ResultBundle(out, digest)
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.raw, fh, sort_keys=True)
    (out / "provenance.txt").write_text(_provenance(cfg))
    bundle.summary.update({"config_digest": digest, "kind": cfg.kind, "seed": cfg.seed})

    if cfg.kind == "weather":
        _run_weather(cfg, bundle)
    else:
        _run_synthetic(cfg, bundle, workers)
    _write_summary(out / "summary.txt", bundle.summary)
    bundle.files += ["summary.txt", "provenance.txt", "config.yaml"]
    return bundle


def _run_weather(cfg: ExperimentConfig, bundle: ResultBundle):
    w, s = cfg["weather"], cfg["solver"]
    data = load_weather(w)
    rows = []
    for mu in s["mu"]:
        part = weather_experiment(data, cfg.etas_for(mu), cfg.regularizers, mu=mu, rho=s["rho"],
                                  epochs=s["epochs"], window=cfg["metrics"]["window"],
                                  seed=s["init_seed"])
        rows += [{"mu": mu, **r} for r in part]
    _write_rows(bundle.out_dir / "table.csv", bundle.digest,
                ["mu", "eta", "regularizer", "prediction_error"], rows)
    bundle.rows = rows
    bundle.files.append("table.csv")
    bundle.summary.update({f"dataset.{k}": v for k, v in data.summary().items()})
    for mu in s["mu"]:
        sub = [r for r in rows if r["mu"] == mu]
        zero = [r["prediction_error"] for r in sub if r["eta"] == 0]
        if zero:
            bundle.summary[f"error_eta0[mu={_tag(mu)}]"] = zero[0]
        for reg in cfg.regularizers:
            mine = [r for r in sub if r["regularizer"] == reg.label()]
            best = min(mine, key=lambda r: (r["prediction_error"], r["eta"]))
            bundle.summary[f"best_eta[{reg.label()},mu={_tag(mu)}]"] = best["eta"]
            bundle.summary[f"best_error[{reg.label()},mu={_tag(mu)}]"] = best["prediction_error"]


def _run_synthetic(cfg: ExperimentConfig, bundle: ResultBundle, workers: int):
    network = build_network_from(cfg["topology"])
    ensemble = build_models_from(cfg["models"], network)
    m, s = cfg["metrics"], cfg["solver"]
    cache = Path(cfg["output"]["cache_dir"]) if cfg["output"]["cache_dir"] else bundle.out_dir / "references"
    want_loc = m["reference"] in ("local_models", "both")
    want_reg = m["reference"] in ("regularized_solution", "both")

    points = []  # (mu, eta, reg, runs)
    for mu in s["mu"]:
        for reg in cfg.regularizers:
            for eta in cfg.etas_for(mu):
                points.append((mu, eta, reg, cfg.runs_for(reg)))

    # one simulation per distinct job; eta = 0 is the same for every regularizer
    jobs, job_of = {}, []
    for mu, eta, reg, runs in points:
        key = (mu, 0.0, None, runs) if eta == 0 else (mu, eta, reg, runs)
        if key not in jobs:
            refs = {}
            if want_loc:
                refs["local"] = ensemble.w_true
            if want_reg:
                refs["regularized"] = reference_for(cfg, network, ensemble, eta, reg, cache)
            jobs[key] = (cfg.raw, mu, eta, reg if reg is not None else cfg.regularizers[0], runs, refs)
        job_of.append(key)

    keys = list(jobs)
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(zip(keys, pool.map(_job, [jobs[k] for k in keys])))
    else:
        results = {k: _job(jobs[k]) for k in keys}

    rows = []
    for (mu, eta, reg, runs), key in zip(points, job_of):
        curves, horizon = results[key]
        row = {"mu": mu, "eta": eta, "regularizer": reg.label(), "n_runs": runs}
        if horizon != s["iterations"]:
            bundle.summary[f"horizon[{reg.label()},mu={_tag(mu)},eta={_tag(eta)}]"] = horizon
        for name, kind, col in (("local", "local_models", "msd_loc_db"),
                                ("regularized", "regularized_solution", "msd_db")):
            if name not in curves:
                continue
            curve = LearningCurve(curves[name], runs, kind)
            row[col] = steady_state_db(curve, m["window"], check=m["check_steady"])
            if cfg.kind in ("theorem_illustration", "custom"):
                fname = f"curve_mu={_tag(mu)}_eta={_tag(eta)}_{reg.label()}_{name}.csv"
                write_curve_csv(bundle.out_dir / fname, curve, _csv_header(bundle.digest))
                bundle.files.append(fname)
        rows.append(row)
    bundle.rows = rows

    if cfg["output"]["trajectories"]:
        for mu, eta, reg, _ in points:
            sc = SolverConfig(mu, eta, reg, s["iterations"], s["init"], s["init_seed"])
            traj = run_decentralized(network, ensemble, sc, cfg.seed)
            traj.config_digest = bundle.digest
            fname = f"trajectory_mu={_tag(mu)}_eta={_tag(eta)}_{reg.label()}.npz"
            traj.save(bundle.out_dir / fname)
            bundle.files.append(fname)

    if cfg.kind in ("eta_sweep_sparse", "eta_sweep_smooth"):
        _write_rows(bundle.out_dir / "sweep.csv", bundle.digest,
                    ["eta", "regularizer", "msd_loc_db", "n_runs"]
                    if len(s["mu"]) == 1 else ["mu", "eta", "regularizer", "msd_loc_db", "n_runs"],
                    rows)
        bundle.files.append("sweep.csv")
    else:
        cols = ["mu", "eta", "regularizer", "n_runs"] + [c for c in ("msd_db", "msd_loc_db") if c in rows[0]]
        _write_rows(bundle.out_dir / "results.csv", bundle.digest, cols, rows)
        bundle.files.append("results.csv")

    summ = bundle.summary
    summ["agents"] = network.num_agents
    summ["dimension"] = ensemble.M
    for r in rows:
        tag = f"{r['regularizer']},mu={_tag(r['mu'])},eta={_tag(r['eta'])}"
        for col in ("msd_db", "msd_loc_db"):
            if col in r:
                summ[f"{col}[{tag}]"] = r[col]
    if cfg.kind == "theorem_illustration":
        col = "msd_db" if want_reg else "msd_loc_db"
        for reg in cfg.regularizers:
            levels = [(r["mu"], r[col]) for r in rows if r["regularizer"] == reg.label()]
            for (mu_a, a), (mu_b, b) in zip(levels, levels[1:]):
                summ[f"gap_db[{reg.label()},{_tag(mu_b)}/{_tag(mu_a)}]"] = b - a
    if want_loc:
        for mu in s["mu"]:
            for reg in cfg.regularizers:
                mine = [r for r in rows if r["regularizer"] == reg.label() and r["mu"] == mu]
                best = min(mine, key=lambda r: (r["msd_loc_db"], r["eta"]))
                zero = [r["msd_loc_db"] for r in mine if r["eta"] == 0]
                tag = f"{reg.label()},mu={_tag(mu)}"
                summ[f"best_eta[{tag}]"] = best["eta"]
                summ[f"best_msd_loc_db[{tag}]"] = best["msd_loc_db"]
                if zero:
                    summ[f"gain_db[{tag}]"] = zero[0] - best["msd_loc_db"]
