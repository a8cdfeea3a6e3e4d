"""Weighted survival curves, cumulative incidence contrasts and bootstrap bands."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .data import EventDataset
from .weighting import EmptyGroup, NonPositiveBandwidth, UnitWeights, estimate_weights_ahw

log = logging.getLogger(__name__)

__all__ = [
    "EstimationError", "ZeroWeightedRiskSet", "DegenerateReplicate", "TiedEventTimes",
    "StepCurve", "ContrastBand", "weighted_kaplan_meier", "cumulative_incidence", "contrast",
    "sup_distance", "bootstrap_bands", "band_grid", "reweighted_incidence_analysis",
    "write_curve_csv", "write_band_csv", "curves_to_svg",
]


class EstimationError(RuntimeError):
    pass


class ZeroWeightedRiskSet(EstimationError):
    pass


class DegenerateReplicate(EstimationError):
    pass


class TiedEventTimes(UserWarning):
    pass


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function: ``initial`` before ``times[0]``,
    ``values[k]`` on ``[times[k], times[k+1])``."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 1.0
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("times and values differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("curve times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        idx = np.searchsorted(self.times, t, side="right")
        return np.concatenate([[self.initial], self.values])[idx]

    def __eq__(self, other):
        if not isinstance(other, StepCurve):
            return NotImplemented
        return (self.initial == other.initial and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.initial, self.times.tobytes(), self.values.tobytes()))


@dataclass(frozen=True)
class ContrastBand:
    times: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    replicates: int
    degenerate: int = 0
    meta: Mapping = field(default_factory=dict)

    def covers(self, t: float, value: float = 0.0) -> bool:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k < 0:
            raise ValueError("time before the band grid")
        return bool(self.lower[k] <= value <= self.upper[k])


def weighted_kaplan_meier(dataset: EventDataset, weights=None, outcome_process: str = "", group=None,
                          *, chunk_cells: int = 4_000_000) -> StepCurve:
    """Weighted Kaplan-Meier estimate for the first jump of ``outcome_process``.

    Each observed event time ``t`` contributes the factor
    ``1 - sum_events W_{t-} / sum_at_risk W_{t-}``, where subjects are at risk
    until their event, censoring or the horizon.  Factors outside ``[0, 1]``
    (possible with extreme or negative weights) are clipped and counted in
    ``meta["clipped"]``; a zero weighted risk set at an event time raises
    :class:`ZeroWeightedRiskSet`.  Tied event times are merged with a warning.
    """
    mask = dataset.group_mask(group)
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        raise EmptyGroup("no subjects in group")
    exits = dataset.exit_times(outcome_process)[rows]
    events = dataset.observed_first_jump(outcome_process)[rows]
    ev_rows = np.isfinite(events)
    times, counts = np.unique(events[ev_rows], return_counts=True)
    if np.any(counts > 1):
        # copies of one subject (bootstrap resamples) tie by construction
        pairs = np.unique(np.stack([events[ev_rows], np.unique(dataset.ids[rows][ev_rows], return_inverse=True)[1]]), axis=1)
        distinct = np.unique(pairs[0], return_counts=True)[1]
        if np.any(distinct > 1):
            warnings.warn(f"{int(np.sum(distinct > 1))} event times shared by different subjects were merged",
                          TiedEventTimes, stacklevel=2)
    if weights is None or isinstance(weights, UnitWeights):
        exits_sorted = np.sort(exits)
        num = counts.astype(float)
        den = (len(exits_sorted) - np.searchsorted(exits_sorted, times, side="left")).astype(float)
    else:
        num = np.empty(len(times))
        den = np.empty(len(times))
        step = max(1, chunk_cells // max(1, len(rows)))
        for lo in range(0, len(times), step):
            t = times[lo:lo + step]
            W = weights.left_limits(t, rows)
            at_risk = exits[:, None] >= t[None, :]
            hit = events[:, None] == t[None, :]
            den[lo:lo + step] = np.where(at_risk, W, 0.0).sum(axis=0)
            num[lo:lo + step] = np.where(hit, W, 0.0).sum(axis=0)
    if np.any(den == 0):
        k = int(np.flatnonzero(den == 0)[0])
        raise ZeroWeightedRiskSet(f"weighted risk set is zero at event time {times[k]!r}")
    factor = 1.0 - num / den
    clipped = int(np.sum((factor < 0) | (factor > 1)))
    if clipped:
        log.warning("clipped %d Kaplan-Meier factors outside [0, 1]", clipped)
    factor = np.clip(factor, 0.0, 1.0)
    values = np.cumprod(factor)
    return StepCurve(times, values, 1.0, {"clipped": clipped, "events": int(counts.sum()),
                                          "subjects": int(len(rows)), "ties": int(np.sum(counts > 1))})


def cumulative_incidence(curve: StepCurve) -> StepCurve:
    return StepCurve(curve.times, 1.0 - curve.values, 1.0 - curve.initial, dict(curve.meta))


def contrast(curve_a: StepCurve, curve_b: StepCurve) -> StepCurve:
    """Pointwise ``a - b`` on the union of jump times."""
    times = np.union1d(curve_a.times, curve_b.times)
    return StepCurve(times, curve_a(times) - curve_b(times), curve_a.initial - curve_b.initial)


def sup_distance(curve_a: StepCurve, curve_b: StepCurve, horizon: Optional[float] = None) -> float:
    """Supremum of ``|a - b|`` over ``[0, horizon]`` (exact for step functions)."""
    times = np.union1d(curve_a.times, curve_b.times)
    if horizon is not None:
        times = times[times <= horizon]
    diffs = np.abs(curve_a(times) - curve_b(times))
    return float(max(abs(curve_a.initial - curve_b.initial), diffs.max() if len(diffs) else 0.0))


def band_grid(curve: StepCurve, extra: Sequence[float] = (), max_points: int = 512) -> np.ndarray:
    """Event times of ``curve`` thinned to at most ``max_points``, plus ``extra``."""
    times = curve.times
    if len(times) > max_points:
        idx = np.unique(np.linspace(0, len(times) - 1, max_points).round().astype(int))
        times = times[idx]
    return np.union1d(times, np.asarray(extra, dtype=float))


def bootstrap_bands(pipeline: Callable[[EventDataset], StepCurve], dataset: EventDataset, replicates: int = 400,
                    level: float = 0.95, seed=0, *, times: Sequence[float] = (), threads: int = 1,
                    max_points: int = 512) -> ContrastBand:
    """Pointwise percentile bands by resampling subjects with replacement.

    ``pipeline`` maps a dataset to a curve and is re-run in full on every
    resample.  Replicate ``k`` draws its indices from
    ``default_rng([seed, k])``, so results do not depend on ``threads``.
    Replicates whose pipeline raises an estimation error are logged, excluded
    and counted.  The band is widened where needed to contain the point
    estimate.
    """
    if replicates < 2:
        raise ValueError("at least two bootstrap replicates are needed")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    point = pipeline(dataset)
    grid = band_grid(point, times, max_points)
    n = dataset.n

    def one(k):
        rng = np.random.default_rng([int(seed), k])
        idx = rng.integers(0, n, n)
        try:
            return pipeline(dataset.take(idx))(grid)
        except (EstimationError, EmptyGroup, NonPositiveBandwidth, ValueError) as exc:
            log.info("bootstrap replicate %d degenerate: %s", k, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replicates)))
    else:
        results = [one(k) for k in range(replicates)]
    good = [r for r in results if r is not None]
    degenerate = replicates - len(good)
    if not good:
        raise DegenerateReplicate("every bootstrap replicate failed")
    mat = np.vstack(good)
    alpha = 1 - level
    lower, upper = np.quantile(mat, [alpha / 2, 1 - alpha / 2], axis=0)
    est = point(grid)
    widened = int(np.sum((est < lower) | (est > upper)))
    lower, upper = np.minimum(lower, est), np.maximum(upper, est)
    return ContrastBand(grid, est, lower, upper, level, replicates, degenerate,
                        {"widened": widened, "used_replicates": len(good)})


def reweighted_incidence_analysis(dataset: EventDataset, treatment: str, outcome: str, group_node: str,
                                  target_value=1, reference_value=0, bandwidth: Optional[float] = None,
                                  weights=None) -> dict:
    """Incidence curves for comparing two groups under a common treatment regime.

    The target group is reweighted so its treatment initiation intensity
    matches the reference group's.  Returns the observational and
    reweighted target incidence, the reference incidence, their contrast
    (reweighted target minus reference) and the weights.
    """
    tgt, ref = {group_node: target_value}, {group_node: reference_value}
    if weights is None:
        weights = estimate_weights_ahw(dataset, tgt, ref, treatment, bandwidth)
    observed = cumulative_incidence(weighted_kaplan_meier(dataset, None, outcome, tgt))
    reweighted = cumulative_incidence(weighted_kaplan_meier(dataset, weights, outcome, tgt))
    reference = cumulative_incidence(weighted_kaplan_meier(dataset, None, outcome, ref))
    return {
        "observed_target": observed,
        "reweighted_target": reweighted,
        "reference": reference,
        "contrast": contrast(reweighted, reference),
        "weights": weights,
    }


# -- output -------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_curve_csv(curve: StepCurve, path) -> None:
    """``time,value`` rows, starting with the initial value at time 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value"])
        if len(curve.times) == 0 or curve.times[0] > 0:
            w.writerow([_fmt(0.0), _fmt(curve.initial)])
        for t, v in zip(curve.times, curve.values):
            w.writerow([_fmt(t), _fmt(v)])


def write_band_csv(band: ContrastBand, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value", "lower", "upper"])
        for row in zip(band.times, band.estimate, band.lower, band.upper):
            w.writerow([_fmt(x) for x in row])


_PALETTE = ["#1b6ca8", "#c2452d", "#2e8540", "#7a4fa3", "#b8860b"]


def curves_to_svg(curves: Mapping[str, StepCurve], path, *, horizon: float, title: str = "",
                  band: Optional[ContrastBand] = None, y_range: Optional[tuple] = None,
                  width: int = 640, height: int = 400) -> None:
    """Minimal SVG with step paths, axes and a legend."""
    ml, mr, mt, mb = 60, 160, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    if y_range is None:
        vals = [c.initial for c in curves.values()] + [v for c in curves.values() for v in c.values]
        if band is not None:
            vals += list(band.lower) + list(band.upper)
        lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        y_range = (lo, hi)
    y0, y1 = y_range

    def X(t):
        return ml + pw * float(t) / horizon

    def Y(v):
        return mt + ph * (1 - (float(v) - y0) / (y1 - y0))

    def step_path(times, values, initial):
        pts = [f"M{X(0):.2f},{Y(initial):.2f}"]
        prev = initial
        for t, v in zip(times, values):
            if t > horizon:
                break
            pts.append(f"L{X(t):.2f},{Y(prev):.2f}L{X(t):.2f},{Y(v):.2f}")
            prev = v
        pts.append(f"L{X(horizon):.2f},{Y(prev):.2f}")
        return "".join(pts)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if title:
        out.append(f'<text x="{ml}" y="18" font-family="sans-serif" font-size="14">{_esc(title)}</text>')
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    for k in range(5):
        v = y0 + (y1 - y0) * k / 4
        t = horizon * k / 4
        out.append(f'<text x="{ml - 6}" y="{Y(v) + 4:.2f}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3g}</text>')
        out.append(f'<text x="{X(t):.2f}" y="{mt + ph + 16}" font-family="sans-serif" font-size="10" text-anchor="middle">{t:.3g}</text>')
    if band is not None:
        upper = step_path(band.times, band.upper, band.upper[0] if len(band.upper) else 0.0)
        lower = step_path(band.times, band.lower, band.lower[0] if len(band.lower) else 0.0)
        out.append(f'<path d="{upper}" fill="none" stroke="#888" stroke-dasharray="4,3"/>')
        out.append(f'<path d="{lower}" fill="none" stroke="#888" stroke-dasharray="4,3"/>')
    if y0 < 0 < y1:
        out.append(f'<line x1="{ml}" y1="{Y(0):.2f}" x2="{ml + pw}" y2="{Y(0):.2f}" stroke="#ccc"/>')
    for k, (name, c) in enumerate(curves.items()):
        color = _PALETTE[k % len(_PALETTE)]
        out.append(f'<path d="{step_path(c.times, c.values, c.initial)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 * k + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="10">{_esc(name)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
