"""Weather-station classification data: ingestion, graph, and experiment.

Input is a delimited text file with one row per (station, day) and the
columns listed in `COLUMNS`. Features are the daily mean temperature, mean dew
point, mean visibility, mean wind speed and maximum sustained wind speed; the
label is the rain-or-snow flag mapped to ``{-1, +1}``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..costs import AgentModel, ModelEnsemble, generate_sparse_models
from ..metrics import prediction_error
from ..solver import iterate
from ..topology import Network, knn_network

__all__ = [
    "COLUMNS",
    "FEATURES",
    "SchemaError",
    "WeatherRecord",
    "WeatherDataset",
    "read_weather_csv",
    "ingest_weather",
    "weather_experiment",
    "synthetic_weather",
]

log = logging.getLogger(__name__)

FEATURES = ("temp", "dewp", "visib", "wdsp", "mxspd")
COLUMNS = ("station", "date", *FEATURES, "rain_snow", "lat", "lon")
# GSOD missing-value sentinels
MISSING = {"9999.9", "999.9", ""}

TRAIN_WINDOW = (dt.date(2004, 1, 1), dt.date(2012, 12, 31))
TEST_WINDOW = (dt.date(2013, 1, 1), dt.date(2017, 12, 31))


class SchemaError(ValueError):
    """The input file does not carry the expected columns."""


@dataclass(frozen=True)
class WeatherRecord:
    station: str
    date: dt.date
    features: np.ndarray  # (5,)
    label: int
    lat: float
    lon: float

    def __post_init__(self):
        if np.asarray(self.features).shape != (len(FEATURES),):
            raise ValueError(f"expected {len(FEATURES)} features")
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")


def _parse_row(row: dict) -> WeatherRecord:
    vals = [row[f].strip() for f in FEATURES]
    if any(v in MISSING for v in vals):
        raise ValueError("missing feature")
    feats = np.array([float(v) for v in vals])
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite feature")
    flag = row["rain_snow"].strip()
    if flag in ("1", "+1"):
        label = 1
    elif flag in ("0", "-1"):
        label = -1
    else:
        raise ValueError(f"bad rain_snow flag {flag!r}")
    return WeatherRecord(row["station"].strip(), dt.date.fromisoformat(row["date"].strip()),
                         feats, label, float(row["lat"]), float(row["lon"]))


def read_weather_csv(path) -> tuple[list[WeatherRecord], int]:
    """Parse records, dropping malformed or incomplete rows.

    Returns the records and the number of dropped rows. Duplicate
    (station, date) rows after the first are dropped as well.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"weather dataset {path} not found; expected a CSV with header "
            f"{','.join(COLUMNS)} (one row per station and day, rain_snow in {{0, 1}})")
    records, dropped, seen = [], 0, set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}; found {header}; "
                              f"expected {list(COLUMNS)}")
        reader.fieldnames = header
        for row in reader:
            try:
                if None in row.values() or None in row:
                    raise ValueError("wrong field count")
                rec = _parse_row(row)
            except (ValueError, TypeError, AttributeError):
                dropped += 1
                continue
            key = (rec.station, rec.date)
            if key in seen:
                dropped += 1
                continue
            seen.add(key)
            records.append(rec)
    return records, dropped


def _project(lat, lon) -> np.ndarray:
    """Equirectangular projection around the mean latitude (degrees)."""
    lat, lon = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
    return np.column_stack([lon * np.cos(np.deg2rad(lat.mean())), lat])


@dataclass
class WeatherDataset:
    """Date-aligned per-station streams.

    ``train_H[i, k]`` holds station ``k``'s features on training day ``i``
    (NaN if absent) and ``train_mask[i, k]`` marks availability.
    """

    stations: list[str]
    coordinates: np.ndarray  # (K, 2) lat, lon
    network: Network
    train_dates: list[dt.date]
    train_H: np.ndarray
    train_y: np.ndarray
    train_mask: np.ndarray
    test_dates: list[dt.date]
    test_H: np.ndarray
    test_y: np.ndarray
    test_mask: np.ndarray
    dropped_rows: int = 0
    excluded: list[str] = field(default_factory=list)
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.stations)

    @property
    def D_a(self) -> int:
        return len(self.train_dates)

    @property
    def D_t(self) -> int:
        return len(self.test_dates)

    def test_set(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for k in range(self.K):
            m = self.test_mask[:, k]
            out.append((self.test_H[m, k], self.test_y[m, k]))
        return out

    def save(self, path):
        np.savez_compressed(
            path, stations=np.array(self.stations), coordinates=self.coordinates,
            adjacency=self.network.adjacency, rho=self.network.rho,
            train_dates=np.array([d.isoformat() for d in self.train_dates]),
            train_H=self.train_H, train_y=self.train_y, train_mask=self.train_mask,
            test_dates=np.array([d.isoformat() for d in self.test_dates]),
            test_H=self.test_H, test_y=self.test_y, test_mask=self.test_mask,
            dropped_rows=self.dropped_rows, excluded=np.array(self.excluded, dtype=str),
            feature_mean=_or_empty(self.feature_mean), feature_std=_or_empty(self.feature_std))

    @classmethod
    def load(cls, path) -> "WeatherDataset":
        from ..topology import build_network
        with np.load(path, allow_pickle=False) as z:
            coords = z["coordinates"]
            net = build_network(z["adjacency"], rho=z["rho"], coordinates=_project(*coords.T))
            dates = lambda a: [dt.date.fromisoformat(s) for s in a]  # noqa: E731
            return cls(z["stations"].tolist(), coords, net, dates(z["train_dates"]),
                       z["train_H"], z["train_y"], z["train_mask"], dates(z["test_dates"]),
                       z["test_H"], z["test_y"], z["test_mask"], int(z["dropped_rows"]),
                       z["excluded"].tolist(), _or_none(z["feature_mean"]), _or_none(z["feature_std"]))

    def summary(self) -> dict:
        return {"stations": self.K, "train_days": self.D_a, "test_days": self.D_t,
                "dropped_rows": self.dropped_rows, "excluded_stations": len(self.excluded),
                "links": len(self.network.edges)}


def _or_empty(a):
    return np.empty(0) if a is None else a


def _or_none(a):
    return a if a.size else None


def _calendar(lo: dt.date, hi: dt.date) -> list[dt.date]:
    return [lo + dt.timedelta(days=n) for n in range((hi - lo).days + 1)]


def _align(records, stations, dates):
    K, D, M = len(stations), len(dates), len(FEATURES)
    s_idx = {s: k for k, s in enumerate(stations)}
    d_idx = {d: i for i, d in enumerate(dates)}
    H = np.full((D, K, M), np.nan)
    y = np.zeros((D, K))
    for r in records:
        k, i = s_idx.get(r.station), d_idx.get(r.date)
        if k is not None and i is not None:
            H[i, k] = r.features
            y[i, k] = r.label
    return H, y, ~np.isnan(H[..., 0])


def ingest_weather(
    path,
    k_neighbors: int = 4,
    train_window=TRAIN_WINDOW,
    test_window=TEST_WINDOW,
    standardize: bool = True,
) -> WeatherDataset:
    """Read, split, standardize and connect the station streams.

    Training and test days are the full calendars of the two windows, so
    their lengths do not depend on which stations reported. Stations with no
    valid training row are excluded with a warning. Standardization uses each
    station's training mean and standard deviation.
    """
    records, dropped = read_weather_csv(path)
    train_window = tuple(dt.date.fromisoformat(str(d)) for d in train_window)
    test_window = tuple(dt.date.fromisoformat(str(d)) for d in test_window)
    stations = sorted({r.station for r in records})
    has_train = {r.station for r in records if train_window[0] <= r.date <= train_window[1]}
    excluded = [s for s in stations if s not in has_train]
    for s in excluded:
        log.warning("station %s has no valid training rows; excluded", s)
    stations = [s for s in stations if s in has_train]
    if len(stations) < 2:
        raise ValueError(f"need at least 2 stations with training data, found {len(stations)}")

    first = {}
    for r in records:
        first.setdefault(r.station, (r.lat, r.lon))
    coords = np.array([first[s] for s in stations])

    train_dates = _calendar(*train_window)
    test_dates = _calendar(*test_window)
    trH, trY, trM = _align(records, stations, train_dates)
    teH, teY, teM = _align(records, stations, test_dates)

    mean = std = None
    if standardize:
        mean = np.nanmean(trH, axis=0)  # (K, M)
        std = np.nanstd(trH, axis=0)
        std = np.where(std > 0, std, 1.0)
        trH = (trH - mean) / std
        teH = (teH - mean) / std

    k_eff = min(k_neighbors, len(stations) - 1)
    if k_eff != k_neighbors:
        log.warning("only %d stations; using %d nearest neighbors", len(stations), k_eff)
    network = knn_network(_project(coords[:, 0], coords[:, 1]), k_eff)
    return WeatherDataset(stations, coords, network, train_dates, trH, trY, trM,
                          test_dates, teH, teY, teM, dropped, excluded, mean, std)


def weather_experiment(
    data: WeatherDataset,
    eta_grid,
    regularizers,
    mu: float = 5e-4,
    rho: float = 1e-5,
    epochs: int = 1,
    window: int = 200,
    seed: int = 0,
) -> list[dict]:
    """Prediction error on the test days for every (eta, regularizer) pair.

    The algorithm runs over the training calendar in date order (``epochs``
    passes). Iteration ``i`` uses each station's record of day ``i``; stations
    without a record that day skip the gradient step but still take part in
    the social step. Initial iterates are standard Gaussian (seeded by
    `seed`); the classifier is the average of the last `window` iterates.
    """
    K, M = data.K, data.train_H.shape[2]
    H = np.nan_to_num(data.train_H)
    y, mask = data.train_y, data.train_mask
    D = data.D_a
    T = D * int(epochs)
    W0 = np.random.default_rng(seed).standard_normal((K, M))[None]
    test = data.test_set()
    rows = []
    cache = {}
    for reg in regularizers:
        for eta in eta_grid:
            key = ("inert",) if eta == 0 else (reg, float(eta))
            if key not in cache:
                tail = np.zeros((K, M))
                start = T - window + 1

                def grad(i, W):
                    d = (i - 1) % D
                    margin = y[d] * np.sum(H[d] * W[0], axis=1)
                    g = rho * W[0] - (y[d] * expit(-margin))[:, None] * H[d]
                    return g[None]

                def observe(i, W, Psi):
                    if i >= start:
                        tail[:] += W[0]

                iterate(data.network, W0, grad, mu, float(eta), reg, T, observe,
                        active=lambda i: mask[(i - 1) % D])
                cache[key] = prediction_error(tail / min(window, T), test)
            rows.append({"eta": float(eta), "regularizer": reg.label(),
                         "prediction_error": cache[key]})
    return rows


def synthetic_weather(
    K: int = 20,
    M: int = 5,
    train_days: int = 300,
    test_days: int = 2000,
    seed: int = 0,
    k_neighbors: int = 4,
    missing_rate: float = 0.0,
) -> WeatherDataset:
    """Logistic stand-in for the station data with the same layout.

    Stations are uniform points in the unit square linked by the k-NN rule;
    their models differ sparsely around a common vector. Useful when the real
    dataset is unavailable.
    """
    rng = np.random.default_rng(seed)
    ens = generate_sparse_models(K, M, seed=seed, kind="logistic")
    base = ens.w_true
    models = tuple(AgentModel.isotropic("logistic", 2.0 * base[k], 1.0) for k in range(K))
    ens = ModelEnsemble(models, "sparse_differences")
    pts = rng.uniform(size=(K, 2))
    network = knn_network(pts, min(k_neighbors, K - 1))

    def draw(n):
        Hs = rng.standard_normal((n, K, M))
        p = expit(np.einsum("nkm,km->nk", Hs, ens.w_true))
        ys = np.where(rng.uniform(size=(n, K)) < p, 1.0, -1.0)
        mask = rng.uniform(size=(n, K)) >= missing_rate
        Hs = np.where(mask[..., None], Hs, np.nan)
        return Hs, np.where(mask, ys, 0.0), mask

    trH, trY, trM = draw(train_days)
    teH, teY, teM = draw(test_days)
    d0 = dt.date(2000, 1, 1)
    dates = lambda n, off: [d0 + dt.timedelta(days=off + i) for i in range(n)]  # noqa: E731
    stations = [f"S{k:03d}" for k in range(K)]
    return WeatherDataset(stations, np.column_stack([pts[:, 1], pts[:, 0]]), network,
                          dates(train_days, 0), trH, trY, trM,
                          dates(test_days, train_days), teH, teY, teM)
