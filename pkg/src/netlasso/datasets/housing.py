"""Housing sales: CSV loading, standardization and the geographic kNN graph."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..graph import ProblemGraph, build_graph
from ..objectives import RegressionObjective

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
MIN_DISTANCE_KM = 1e-3

DEFAULT_ALIASES = {
    "latitude": ("latitude", "lat"),
    "longitude": ("longitude", "lon", "lng"),
    "beds": ("beds", "bedrooms"),
    "baths": ("baths", "bathrooms"),
    "sqft": ("sq__ft", "sqft", "sq_ft", "square_feet"),
    "price": ("price", "sale_price"),
}
FEATURES = ("beds", "baths", "sqft")


class StandardizationError(ValueError):
    pass


@dataclass
class HousingData:
    """Standardized sales. ``features`` has one column per bed/bath/sqft with
    missing entries set to 0 (the post-standardization mean)."""

    latitude: np.ndarray
    longitude: np.ndarray
    features: np.ndarray
    price: np.ndarray
    missing: np.ndarray
    stats: dict = field(default_factory=dict)
    n_skipped: int = 0

    @property
    def n(self):
        return len(self.price)

    @property
    def frac_missing_any(self):
        return float(self.missing.any(axis=1).mean()) if self.n else 0.0

    def subset(self, idx):
        idx = np.asarray(idx)
        return HousingData(self.latitude[idx], self.longitude[idx], self.features[idx],
                           self.price[idx], self.missing[idx], self.stats, 0)

    def objectives(self, mu):
        return [RegressionObjective(f, p, mu) for f, p in zip(self.features, self.price)]


def _resolve_columns(header, aliases):
    lower = {h.strip().lower(): i for i, h in enumerate(header)}
    cols = {}
    for key, names in aliases.items():
        for name in names:
            if name.lower() in lower:
                cols[key] = lower[name.lower()]
                break
        else:
            raise ValueError(f"no column for {key!r} (tried {', '.join(names)})")
    return cols


def read_housing_csv(path, aliases=None, zero_is_missing=True):
    """Raw columns as float arrays; missing feature values become NaN.

    The public Sacramento file encodes unknown beds/baths/size as 0, hence
    ``zero_is_missing``. Rows with unparseable coordinates or price are
    skipped and counted.
    """
    aliases = dict(DEFAULT_ALIASES, **(aliases or {}))
    rows = {k: [] for k in aliases}
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = _resolve_columns(header, aliases)
        for row in reader:
            try:
                lat = float(row[cols["latitude"]])
                lon = float(row[cols["longitude"]])
                price = float(row[cols["price"]])
                if not (-90 <= lat <= 90 and -180 <= lon <= 180) or not math.isfinite(price):
                    raise ValueError
            except (ValueError, IndexError):
                skipped += 1
                continue
            feats = []
            for key in FEATURES:
                try:
                    v = float(row[cols[key]])
                except (ValueError, IndexError):
                    v = math.nan
                if zero_is_missing and v == 0:
                    v = math.nan
                feats.append(v)
            rows["latitude"].append(lat)
            rows["longitude"].append(lon)
            rows["price"].append(price)
            for key, v in zip(FEATURES, feats):
                rows[key].append(v)
    if skipped:
        log.warning("skipped %d unparseable rows in %s", skipped, path)
    raw = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    return raw, skipped


def _zscore(col, ref):
    ref = ref[np.isfinite(ref)]
    if ref.size == 0:
        raise StandardizationError("column has no observed values")
    mean, std = float(ref.mean()), float(ref.std())
    if std == 0:
        raise StandardizationError("column has zero variance")
    out = (col - mean) / std
    return np.where(np.isfinite(out), out, 0.0), mean, std


def load_housing(path, train_idx=None, aliases=None, zero_is_missing=True) -> HousingData:
    """Load and z-score features and price with statistics of ``train_idx``
    (default: every row)."""
    raw, skipped = read_housing_csv(path, aliases, zero_is_missing)
    n = len(raw["price"])
    train_idx = np.arange(n) if train_idx is None else np.asarray(train_idx)
    stats = {}
    feats = []
    for key in FEATURES:
        z, mean, std = _zscore(raw[key], raw[key][train_idx])
        feats.append(z)
        stats[key] = (mean, std)
    price, mean, std = _zscore(raw["price"], raw["price"][train_idx])
    stats["price"] = (mean, std)
    missing = ~np.isfinite(np.stack([raw[k] for k in FEATURES], axis=1))
    return HousingData(raw["latitude"], raw["longitude"], np.stack(feats, axis=1),
                       price, missing, stats, skipped)


def split_indices(n, n_test, seed=0):
    """Random ``(train, test)`` index split, both sorted."""
    if not 0 <= n_test < n:
        raise ValueError("n_test must be in [0, n)")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance, broadcasting over inputs."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _knn(dist, k, exclude_self):
    """Indices of the k smallest entries per row; ties go to the lower index."""
    if exclude_self:
        dist = dist.copy()
        np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def build_knn_graph(lat, lon, k=5, test_lat=None, test_lon=None, p=4, objectives=None):
    """Union-of-kNN graph over training points plus kNN lists for test points.

    Edge weight is ``1 / distance_km`` with distances floored at 1 m.

    Returns
    -------
    graph : ProblemGraph
    test_neighbors : list of list of (train_index, weight)
    """
    lat = np.asarray(lat, float)
    lon = np.asarray(lon, float)
    m = len(lat)
    if m < k + 1:
        raise ValueError("need at least k + 1 training points")
    dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    dist = np.maximum(dist, MIN_DISTANCE_KM)
    nn = _knn(dist, k, exclude_self=True)
    pairs = set()
    for i in range(m):
        for j in nn[i]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    edges = [(i, j, 1.0 / dist[i, j]) for i, j in sorted(pairs)]
    graph = build_graph(m, p, edges, objectives)

    test_neighbors = []
    if test_lat is not None:
        tl = np.asarray(test_lat, float)
        tg = np.asarray(test_lon, float)
        tdist = np.maximum(haversine_km(tl[:, None], tg[:, None], lat[None, :], lon[None, :]), MIN_DISTANCE_KM)
        tnn = _knn(tdist, k, exclude_self=False)
        test_neighbors = [[(int(j), float(1.0 / tdist[t, j])) for j in row] for t, row in enumerate(tnn)]
    return graph, test_neighbors
