"""Building traffic counts: weekly detrending, event extraction, and a
per-slot Poisson baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np
from scipy.stats import poisson

from ..graph import build_graph
from ..objectives import EventObjective

PERIOD = 7 * 24 * 2
SLOT = timedelta(minutes=30)
IN_FLOW, OUT_FLOW = "9", "7"


@dataclass
class EventSeries:
    """``counts[:, 0]`` entries and ``counts[:, 1]`` exits per half-hour slot."""

    counts: np.ndarray
    timestamps: list | None = None
    period: int = PERIOD

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[1] != 2:
            raise ValueError("counts must be a (T, 2) array")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def T(self):
        return len(self.counts)


def _parse_dt(date, time):
    for fmt in ("%m/%d/%y %H:%M:%S", "%m/%d/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S"):
        try:
            return datetime.strptime(f"{date.strip()} {time.strip()}", fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognized timestamp {date!r} {time!r}")


def load_calit2(path) -> EventSeries:
    """Read ``flow,date,time,count`` rows (flow 9 = in, 7 = out)."""
    table = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                flow = row[0].strip()
                ts = _parse_dt(row[1], row[2])
                count = int(row[3])
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: could not parse {row!r}") from None
            if flow not in (IN_FLOW, OUT_FLOW):
                raise ValueError(f"{path}:{lineno}: unknown flow id {flow!r}")
            table.setdefault(ts, [0, 0])[0 if flow == IN_FLOW else 1] = count
    stamps = sorted(table)
    counts = np.array([table[t] for t in stamps], dtype=np.int64)
    return EventSeries(counts, stamps)


def load_event_list(path, series: EventSeries):
    """Truth events as inclusive slot-index intervals.

    Accepts ``date,begin_time,end_time[,name]`` rows or two full timestamps.
    A slot belongs to an event when their time ranges overlap.
    """
    if series.timestamps is None:
        raise ValueError("series has no timestamps to align events against")
    starts = np.array([t.timestamp() for t in series.timestamps])
    ends = starts + SLOT.total_seconds()
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                try:
                    b = _parse_dt(row[0], row[1])
                    e = _parse_dt(row[0], row[2])
                except ValueError:
                    b = datetime.fromisoformat(row[0].strip())
                    e = datetime.fromisoformat(row[1].strip())
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: could not parse {row!r}") from None
            if e <= b:
                e += timedelta(days=1)
            hit = np.flatnonzero((starts < e.timestamp()) & (ends > b.timestamp()))
            if hit.size:
                out.append((int(hit[0]), int(hit[-1])))
    return out


def slot_medians(counts, period=PERIOD):
    counts = np.asarray(counts, float)
    slots = np.arange(len(counts)) % period
    med = np.zeros((period, counts.shape[1]))
    for s in range(period):
        sel = counts[slots == s]
        if len(sel):
            med[s] = np.median(sel, axis=0)
    return med


def detrend_series(series: EventSeries):
    """Observation minus the median of its weekly slot, shape ``(T, 2)``."""
    if series.T < series.period:
        raise ValueError("series shorter than one period")
    med = slot_medians(series.counts, series.period)
    return series.counts.astype(float) - med[np.arange(series.T) % series.period]


def event_graph(xbar, mu):
    """Chain graph over time with one :class:`EventObjective` per slot."""
    xbar = np.asarray(xbar, float)
    T = len(xbar)
    edges = [(i, i + 1, 1.0) for i in range(T - 1)]
    return build_graph(T, xbar.shape[1], edges, [EventObjective(v, mu) for v in xbar])


def _runs(mask, k_min):
    """Maximal runs of True of length >= k_min, as inclusive (start, end)."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends) if e - s + 1 >= k_min]


def detect_events(x, k_min=2):
    """Runs where entries plus exits above trend are positive."""
    x = np.asarray(x, float)
    return _runs(x[:, 0] + x[:, 1] > 0, k_min)


def poisson_rates(series: EventSeries):
    """Per-slot maximum-likelihood rates (slot means), shape ``(period, 2)``."""
    counts = series.counts.astype(float)
    slots = np.arange(series.T) % series.period
    rates = np.zeros((series.period, 2))
    for s in range(series.period):
        sel = counts[slots == s]
        if len(sel):
            rates[s] = sel.mean(axis=0)
    return rates


def poisson_log_pmf(series: EventSeries):
    """Joint log pmf and the "above rate" flag per slot."""
    lam = poisson_rates(series)[np.arange(series.T) % series.period]
    N = series.counts
    logp = poisson.logpmf(N[:, 0], lam[:, 0]) + poisson.logpmf(N[:, 1], lam[:, 1])
    above = (N[:, 0] > lam[:, 0]) | (N[:, 1] > lam[:, 1])
    return logp, above


def poisson_baseline(series: EventSeries, eps_grid, k_min=2):
    """Predicted intervals per threshold: every slot improbable and above rate."""
    logp, above = poisson_log_pmf(series)
    out = {}
    for eps in eps_grid:
        out[float(eps)] = _runs((logp < np.log(eps)) & above, k_min)
    return out


def match_events(predicted, truth):
    """Number of true events overlapped by at least one prediction."""
    if not predicted:
        return 0
    P = np.asarray(predicted)
    return int(sum(np.any((P[:, 0] <= e) & (P[:, 1] >= s)) for s, e in truth))


def recall_table(curve, levels):
    """Fewest predictions reaching each recall level.

    ``curve`` is an iterable of ``(n_predicted, n_correct)``; levels never
    reached map to None.
    """
    curve = list(curve)
    out = {}
    for r in levels:
        hits = [n for n, c in curve if c >= r]
        out[int(r)] = min(hits) if hits else None
    return out


def synth_event_series(weeks=15, n_events=30, seed=0, base_scale=8.0, period=PERIOD):
    """Weekly-periodic Poisson counts with injected multi-slot surges.

    Returns ``(series, truth)`` with ``truth`` as inclusive slot intervals.
    """
    rng = np.random.default_rng(seed)
    T = weeks * period
    phase = 2 * np.pi * (np.arange(period) % 48) / 48
    daily = np.clip(np.sin(phase - np.pi / 2) + 0.6, 0.05, None)
    weekday = np.repeat(np.where(np.arange(7) < 5, 1.0, 0.3), 48)
    rate = base_scale * daily * weekday
    lam = np.tile(np.stack([rate, rate * 0.9], axis=1), (weeks, 1))
    truth = []
    taken = np.zeros(T, bool)
    attempts = 0
    while len(truth) < n_events:
        attempts += 1
        if attempts > 1000 * n_events:
            raise ValueError(f"cannot place {n_events} separated events in {weeks} weeks")
        length = int(rng.integers(3, 9))
        s = int(rng.integers(period, T - length - 1))
        if taken[max(0, s - 4): s + length + 4].any():
            continue
        taken[s: s + length] = True
        boost = rng.uniform(4.0, 15.0)
        lam[s: s + length] += boost
        truth.append((s, s + length - 1))
    truth.sort()
    counts = rng.poisson(lam)
    start = datetime(2005, 7, 24)
    stamps = [start + i * SLOT for i in range(T)]
    return EventSeries(counts, stamps, period), truth
