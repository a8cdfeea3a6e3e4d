"""Likelihood-ratio weights for interventions on intensities.

Two routes are provided:

* exact weights, computed along each subject path from known intensities
  and a known ratio process ``rho`` (new intensity = ``rho`` x old
  intensity);
* the additive-hazard style estimator, where the ratio is estimated from
  Nelson-Aalen increments of two groups over a sliding window.

Weights are represented per subject by :class:`WeightTrajectory` and, for
whole datasets, by objects exposing ``left_limits(times)`` so estimators can
evaluate ``W_{t-}`` for all subjects at once.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from .data import EventDataset, SubjectPath
from .simulation import IntensityModel, NonFiniteRate

__all__ = [
    "NegativeRho", "RhoBoundExceeded", "EmptyGroup", "NonPositiveBandwidth",
    "CumulativeHazard", "WeightTrajectory", "RatioProcess", "ThetaRatio",
    "TrajectoryWeights", "AHWWeights", "UnitWeights", "TruncatedWeights",
    "likelihood_contribution", "exact_weights", "combined_weights", "dataset_exact_weights",
    "nelson_aalen", "theta_ratio", "estimate_weights_ahw", "default_bandwidth",
    "weight_diagnostics", "write_weights_csv",
]


class NegativeRho(ValueError):
    pass


class RhoBoundExceeded(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


class NonPositiveBandwidth(ValueError):
    pass


QUAD_EPSREL = 1e-10


# -- step functions ----------------------------------------------------------------


@dataclass(frozen=True)
class CumulativeHazard:
    """Right-continuous step function ``A_t = sum of increments at times <= t``."""

    times: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        inc = np.asarray(self.increments, dtype=float)
        if times.shape != inc.shape:
            raise ValueError("times and increments differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if np.any(inc <= 0):
            raise ValueError("increments must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(inc)]))

    def __call__(self, t):
        return self._cum[np.searchsorted(self.times, t, side="right")]

    def left(self, t):
        """``A_{t-}``."""
        return self._cum[np.searchsorted(self.times, t, side="left")]

    def increment_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left")
        hit = (idx < len(self.times)) & (self.times[np.minimum(idx, len(self.times) - 1)] == t) if len(self.times) else np.zeros(t.shape, bool)
        out = np.zeros(t.shape)
        if len(self.times):
            out[hit] = self.increments[idx[hit]]
        return out

    @property
    def values(self) -> np.ndarray:
        return self._cum[1:]


# -- ratio processes -------------------------------------------------------------------


@dataclass(frozen=True)
class RatioProcess:
    """Nonnegative predictable multiplier ``rho(t, baseline, history)``."""

    evaluator: Callable
    bound: float
    dependencies: frozenset = frozenset()
    piecewise_constant: bool = True
    breakpoints: tuple = ()
    constant_value: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if not (self.bound >= 0 and math.isfinite(self.bound)):
            raise ValueError("ratio bound must be finite and nonnegative")

    @classmethod
    def constant(cls, value: float) -> "RatioProcess":
        value = float(value)
        if value < 0:
            raise NegativeRho(f"rho must be nonnegative, got {value}")
        return cls(lambda t, b, h: value, value, frozenset(), True, (), value, f"constant({value!r})")

    @classmethod
    def ratio(cls, new: IntensityModel, old: IntensityModel, bound: float) -> "RatioProcess":
        """``new / old``; where ``old`` vanishes ``new`` must vanish too."""

        def evaluator(t, b, h):
            lo = old.evaluator(t, b, h)
            hi = new.evaluator(t, b, h)
            if lo <= 0:
                if hi > 0:
                    raise RhoBoundExceeded(f"new intensity {hi!r} where the old one vanishes at t={t!r}")
                return 1.0
            return hi / lo

        return cls(evaluator, bound, new.dependencies | old.dependencies,
                   new.piecewise_constant and old.piecewise_constant,
                   tuple(sorted(set(new.breakpoints) | set(old.breakpoints))), None, "ratio")

    @property
    def is_identity(self) -> bool:
        return self.constant_value == 1.0

    def __call__(self, t, baseline, history) -> float:
        r = self.evaluator(t, baseline, history)
        if not math.isfinite(r):
            raise NonFiniteRate("rho", t, r)
        if r < 0:
            raise NegativeRho(f"rho is {r!r} at t={t!r}")
        if r > self.bound * (1 + 1e-12):
            raise RhoBoundExceeded(f"rho is {r!r} at t={t!r}, above its bound {self.bound!r}")
        return r


# -- weight trajectories ---------------------------------------------------------------


@dataclass(frozen=True)
class WeightTrajectory:
    """Right-continuous weight process of one subject.

    ``values[k]`` is ``W`` at ``times[k]`` and ``left[k]`` its left limit
    there.  Between anchors the weight is either log-linear (``kind =
    "interpolate"``, exact for piecewise constant integrands) or constant
    (``kind = "step"``).  After the last anchor it stays constant.
    """

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray
    kind: str = "interpolate"
    subject_id: object = None

    def __post_init__(self):
        for name in ("times", "values", "left"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.times[0] != 0.0:
            raise ValueError("a weight trajectory starts at time 0")
        if self.kind not in ("interpolate", "step"):
            raise ValueError(f"unknown interpolation kind {self.kind!r}")

    def _inside(self, k, t):
        """Value strictly inside segment ``k`` (or after the last anchor)."""
        last = len(self.times) - 1
        kk = np.minimum(k, last - 1) if last > 0 else k
        wa = self.values[k]
        if self.kind == "step" or last == 0:
            return wa
        wb = self.left[kk + 1]
        a, b = self.times[kk], self.times[kk + 1]
        frac = np.clip((t - a) / (b - a), 0.0, 1.0)
        positive = (wa > 0) & (wb > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            loglin = wa * np.exp(frac * (np.log(np.where(positive, wb, 1.0)) - np.log(np.where(positive, wa, 1.0))))
        out = np.where(positive, loglin, wa + frac * (wb - wa))
        out = np.where(wa == wb, wa, out)
        return np.where(k >= last, wa, out)

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.maximum(np.searchsorted(self.times, ts, side="right") - 1, 0)
        on_anchor = self.times[k] == ts
        out = np.where(on_anchor, self.values[k], self._inside(k, ts))
        out = np.where(ts < 0, 1.0, out)
        return float(out[0]) if scalar else out

    def left_limit(self, t):
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(self.times, ts, side="left")
        kc = np.minimum(k, len(self.times) - 1)
        on_anchor = (k < len(self.times)) & (self.times[kc] == ts)
        out = np.where(on_anchor, self.left[kc], self._inside(np.maximum(k - 1, 0), ts))
        out = np.where(ts <= 0, 1.0, out)
        return float(out[0]) if scalar else out

    def jump_factors(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.left != 0, self.values / np.where(self.left != 0, self.left, 1), np.nan)

    def __mul__(self, other: "WeightTrajectory") -> "WeightTrajectory":
        times = np.union1d(self.times, other.times)
        kind = "step" if self.kind == other.kind == "step" else "interpolate"
        return WeightTrajectory(times, self(times) * other(times), self.left_limit(times) * other.left_limit(times),
                                kind, self.subject_id)


# -- path helpers ------------------------------------------------------------------------


def _history_before(path: SubjectPath, t: float) -> dict:
    return {p: list(j[:bisect_left(j, t)]) for p, j in path.jumps.items()}


def _history_through(path: SubjectPath, t: float) -> dict:
    return {p: [s for s in j if s <= t] for p, j in path.jumps.items()}


def _anchor_times(path: SubjectPath, end: float, extra=()) -> list:
    pts = {0.0, end}
    for j in path.jumps.values():
        pts.update(s for s in j if s <= end)
    pts.update(s for s in extra if 0 < s <= end)
    return sorted(pts)


def _segment_integral(f: Callable, a: float, b: float, piecewise: bool) -> float:
    if b <= a:
        return 0.0
    if piecewise:
        return f(0.5 * (a + b)) * (b - a)
    val, _ = integrate.quad(f, a, b, epsrel=QUAD_EPSREL, epsabs=1e-14, limit=200)
    return val


def _checked_rate(model: IntensityModel, t, baseline, history) -> float:
    r = model.evaluator(t, baseline, history)
    if not math.isfinite(r) or r < 0:
        raise NonFiniteRate(model.target, t, r)
    return r


def likelihood_contribution(path: SubjectPath, intensity: IntensityModel, t: float) -> float:
    """Factor ``prod_{s_i <= t} lambda_{s_i} * exp(-int_0^t lambda_s ds)`` of one process."""
    node = intensity.target
    anchors = _anchor_times(path, t, intensity.breakpoints)
    log_surv = 0.0
    for a, b in zip(anchors[:-1], anchors[1:]):
        hist = _history_through(path, a)
        log_surv += _segment_integral(lambda s: _checked_rate(intensity, s, path.baseline, hist), a, b,
                                      intensity.piecewise_constant)
    prod = 1.0
    for s in path.jumps.get(node, ()):
        if s <= t:
            prod *= _checked_rate(intensity, s, path.baseline, _history_before(path, s))
    return prod * math.exp(-log_surv)


def exact_weights(path: SubjectPath, base_intensity: IntensityModel, rho: RatioProcess, grid: Sequence[float] = (),
                  *, stop: Optional[float] = None, end: Optional[float] = None) -> WeightTrajectory:
    """``W_t = prod_{s <= t} rho_s^{dN_s} exp(-int_0^t (rho_s - 1) lambda_s ds)`` along ``path``.

    The trajectory is anchored at ``grid``, at every jump of the path and at
    declared breakpoints, and frozen after ``stop`` (typically the censoring
    time).  ``end`` defaults to the largest grid point or jump.
    """
    node = base_intensity.target
    grid = sorted(float(g) for g in grid)
    if end is None:
        end = max([*grid, *(s for j in path.jumps.values() for s in j), 0.0])
    stop = end if stop is None else min(stop, end)
    pts = _anchor_times(path, stop, tuple(grid) + base_intensity.breakpoints + rho.breakpoints)
    after = sorted({g for g in grid if stop < g <= end} | ({end} if end > stop else set()))
    if rho.is_identity:
        times = np.array(pts + after)
        ones = np.ones(len(times))
        return WeightTrajectory(times, ones, ones.copy(), "interpolate", path.subject_id)
    piecewise = base_intensity.piecewise_constant and rho.piecewise_constant
    own = set(s for s in path.jumps.get(node, ()) if s <= stop)
    values, left = [1.0], [1.0]
    w = 1.0
    for a, b in zip(pts[:-1], pts[1:]):
        hist = _history_through(path, a)

        def integrand(s):
            return (rho(s, path.baseline, hist) - 1.0) * _checked_rate(base_intensity, s, path.baseline, hist)

        w_left = w * math.exp(-_segment_integral(integrand, a, b, piecewise)) if w != 0.0 else 0.0
        w = w_left
        if b in own:
            w = w_left * rho(b, path.baseline, _history_before(path, b))
        values.append(w)
        left.append(w_left)
    times = np.array(pts + after)
    values += [w] * len(after)
    left += [w] * len(after)
    return WeightTrajectory(times, np.array(values), np.array(left), "interpolate", path.subject_id)


def combined_weights(path: SubjectPath, lambda_c: IntensityModel, rho_c: RatioProcess, lambda_x: IntensityModel,
                     rho_x: RatioProcess, grid: Sequence[float] = (), *, stop: Optional[float] = None,
                     end: Optional[float] = None) -> WeightTrajectory:
    """Product of the censoring and treatment weight factors, stopped at censoring."""
    stop = path.censor_time if stop is None else stop
    if end is None:
        end = max([*grid, *(s for j in path.jumps.values() for s in j), 0.0])
    wc = exact_weights(path, lambda_c, rho_c, grid, stop=stop, end=end)
    wx = exact_weights(path, lambda_x, rho_x, grid, stop=stop, end=end)
    return wc * wx


# -- dataset-level weights -------------------------------------------------------------


class _Weights:
    """Common interface: ``left_limits(times)`` and ``values(times)`` give
    ``(n, len(times))`` arrays over all subjects."""

    n: int
    ids: np.ndarray
    flags: dict

    def left_limits(self, times, rows=None) -> np.ndarray:
        raise NotImplementedError

    def values(self, times, rows=None) -> np.ndarray:
        raise NotImplementedError

    def take(self, index) -> "_Weights":
        raise NotImplementedError

    def subject_flag(self, i: int) -> str:
        return ""


class UnitWeights(_Weights):
    def __init__(self, n: int, ids=None):
        self.n = n
        self.ids = np.arange(n) if ids is None else np.asarray(ids)
        self.flags = {}

    def left_limits(self, times, rows=None):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        return np.ones((len(rows), len(np.atleast_1d(times))))

    values = left_limits

    def take(self, index):
        index = np.asarray(index)
        return UnitWeights(len(index), self.ids[index])

    def trajectory(self, i: int) -> WeightTrajectory:
        return WeightTrajectory([0.0], [1.0], [1.0], "step", self.ids[i].item())


class TrajectoryWeights(_Weights):
    def __init__(self, trajectories: Sequence[WeightTrajectory], ids=None):
        self.trajectories = list(trajectories)
        self.n = len(self.trajectories)
        self.ids = np.asarray([t.subject_id for t in self.trajectories] if ids is None else ids)
        self.flags = {}

    def left_limits(self, times, rows=None):
        rows = range(self.n) if rows is None else rows
        times = np.atleast_1d(times)
        return np.array([self.trajectories[i].left_limit(times) for i in rows]).reshape(-1, len(times))

    def values(self, times, rows=None):
        rows = range(self.n) if rows is None else rows
        times = np.atleast_1d(times)
        return np.array([self.trajectories[i](times) for i in rows]).reshape(-1, len(times))

    def take(self, index):
        return TrajectoryWeights([self.trajectories[i] for i in np.asarray(index)], self.ids[np.asarray(index)])

    def trajectory(self, i: int) -> WeightTrajectory:
        return self.trajectories[i]


def dataset_exact_weights(dataset: EventDataset, base_intensity: IntensityModel, rho: RatioProcess,
                          grid: Sequence[float] = (), *, censoring_intensity: Optional[IntensityModel] = None,
                          censoring_rho: Optional[RatioProcess] = None) -> TrajectoryWeights:
    """Exact (optionally combined) weights for every subject, stopped at censoring."""
    trajs = []
    grid = tuple(grid)
    for path in dataset:
        stop = min(path.censor_time, dataset.horizon)
        if censoring_intensity is not None:
            trajs.append(combined_weights(path, censoring_intensity, censoring_rho or RatioProcess.constant(1.0),
                                          base_intensity, rho, grid, stop=stop, end=dataset.horizon))
        else:
            trajs.append(exact_weights(path, base_intensity, rho, grid, stop=stop, end=dataset.horizon))
    return TrajectoryWeights(trajs, dataset.ids)


def nelson_aalen(dataset: EventDataset, process: str, group=None) -> CumulativeHazard:
    """Nelson-Aalen estimate for the first jump of ``process``.

    Subjects are at risk at ``s`` while they have neither jumped nor left
    observation before ``s``.
    """
    mask = dataset.group_mask(group)
    if not mask.any():
        raise EmptyGroup(f"no subjects in group {group!r}")
    exits = np.sort(dataset.exit_times(process)[mask])
    events = dataset.observed_first_jump(process)[mask]
    events = events[np.isfinite(events)]
    if len(events) == 0:
        return CumulativeHazard(np.empty(0), np.empty(0))
    times, counts = np.unique(events, return_counts=True)
    at_risk = len(exits) - np.searchsorted(exits, times, side="left")
    return CumulativeHazard(times, counts / at_risk)


def default_bandwidth(n: int, time_scale: float = 1.0) -> float:
    return time_scale * n ** -0.25


@dataclass(frozen=True)
class ThetaRatio:
    """Windowed ratio of Nelson-Aalen increments.

    ``theta(s)`` uses increments over ``(s - b, s]`` and ``theta.left(s)``
    over ``[s - b, s)``.  A window without denominator increments yields 1 and
    is reported by ``flagged``.
    """

    numerator: CumulativeHazard
    denominator: CumulativeHazard
    b: float

    def _eval(self, s, left: bool):
        s = np.asarray(s, dtype=float)
        f = (lambda A, t: A.left(t)) if left else (lambda A, t: A(t))
        num = f(self.numerator, s) - f(self.numerator, s - self.b)
        den = f(self.denominator, s) - f(self.denominator, s - self.b)
        zero = den <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(zero, 1.0, num / np.where(zero, 1.0, den))
        return theta, zero

    def __call__(self, s):
        return self._eval(s, left=False)[0]

    def left(self, s):
        return self._eval(s, left=True)[0]

    def flagged(self, s, left: bool = True):
        return self._eval(s, left)[1]


def theta_ratio(A_tilde: CumulativeHazard, A_hat: CumulativeHazard, b: float) -> ThetaRatio:
    if not b > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {b!r}")
    return ThetaRatio(A_tilde, A_hat, float(b))


class AHWWeights(_Weights):
    """Estimated weights in factorized form.

    With pooled Nelson-Aalen jump times ``G`` and per-time factor
    ``1 - dA_tilde + dA_hat``, an untreated target subject carries the common
    prefix product ``P``.  At its own treatment time ``tau`` the weight is
    multiplied by ``theta_{tau-} - dA_tilde(tau) + dA_hat(tau)`` relative to
    ``P_{tau-}`` and stays constant afterwards.  Other subjects have weight 1.
    Weights are frozen at the end of observation.
    """

    def __init__(self, grid, prefix, in_target, treat_time, treated_value, stop, ids, flags, theta_flag):
        self.grid = np.asarray(grid, dtype=float)
        self.prefix = np.asarray(prefix, dtype=float)  # P after each grid time
        self.in_target = np.asarray(in_target, dtype=bool)
        self.treat_time = np.asarray(treat_time, dtype=float)
        self.treated_value = np.asarray(treated_value, dtype=float)
        self.stop = np.asarray(stop, dtype=float)
        self.ids = np.asarray(ids)
        self.n = len(self.ids)
        self.flags = flags
        self.theta_flag = np.asarray(theta_flag, dtype=bool)

    def _prefix_right(self, t):
        idx = np.searchsorted(self.grid, t, side="right")
        return np.concatenate([[1.0], self.prefix])[idx]

    def _prefix_left(self, t):
        idx = np.searchsorted(self.grid, t, side="left")
        return np.concatenate([[1.0], self.prefix])[idx]

    def _evaluate(self, times, rows, left: bool):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        t = np.atleast_1d(np.asarray(times, dtype=float))[None, :]
        stop = self.stop[rows][:, None]
        tau = self.treat_time[rows][:, None]
        if left:
            # W_{t-} with freezing after stop: W_{(t ^ stop)-} for t <= stop, W_stop after
            before = t <= stop
            t_eff = np.where(before, t, stop)
            pre = np.where(before, self._prefix_left(t_eff), self._prefix_right(t_eff))
            treated = np.where(before, tau < t_eff, tau <= t_eff)
        else:
            t_eff = np.minimum(t, stop)
            pre = self._prefix_right(t_eff)
            treated = tau <= t_eff
        out = np.where(treated, self.treated_value[rows][:, None], pre)
        return np.where(self.in_target[rows][:, None], out, 1.0)

    def left_limits(self, times, rows=None):
        return self._evaluate(times, rows, True)

    def values(self, times, rows=None):
        return self._evaluate(times, rows, False)

    def take(self, index):
        i = np.asarray(index)
        return AHWWeights(self.grid, self.prefix, self.in_target[i], self.treat_time[i], self.treated_value[i],
                          self.stop[i], self.ids[i], self.flags, self.theta_flag[i])

    def subject_flag(self, i: int) -> str:
        return "theta_default" if self.theta_flag[i] else ""

    def trajectory(self, i: int) -> WeightTrajectory:
        """Step trajectory anchored at the pooled jump times up to the end of observation."""
        stop = self.stop[i]
        times = np.concatenate([[0.0], self.grid[self.grid <= stop]])
        if np.isfinite(self.treat_time[i]) and self.treat_time[i] not in times:
            times = np.sort(np.append(times, self.treat_time[i]))
        vals = self.values(times, [i])[0]
        left = self.left_limits(times, [i])[0]
        return WeightTrajectory(times, vals, left, "step", self.ids[i].item())


def estimate_weights_ahw(dataset: EventDataset, target_group, reference_group, treatment_process: str,
                         b: Optional[float] = None) -> AHWWeights:
    """Estimate weights imposing the reference group's treatment intensity on the target group.

    Solves ``W_t = 1 + int W_{s-} (theta_{s-} - 1) dN_s - int W_{s-} I(N_{s-} = 0) d(A_ref - A_tgt)_s``
    exactly at the pooled jump times, where ``A_ref`` and ``A_tgt`` are
    Nelson-Aalen estimates for treatment initiation in the two groups and
    ``theta`` their windowed increment ratio with bandwidth ``b`` (default
    ``n^{-1/4}`` times the horizon).  Only the first treatment jump is used.
    """
    tmask = dataset.group_mask(target_group)
    rmask = dataset.group_mask(reference_group)
    if not tmask.any():
        raise EmptyGroup("target group is empty")
    if not rmask.any():
        raise EmptyGroup("reference group is empty")
    if b is None:
        b = default_bandwidth(dataset.n, dataset.horizon)
    if not b > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {b!r}")
    A_hat = nelson_aalen(dataset, treatment_process, tmask)
    A_tilde = nelson_aalen(dataset, treatment_process, rmask)
    theta = theta_ratio(A_tilde, A_hat, b)
    grid = np.union1d(A_hat.times, A_tilde.times)
    d_tilde = A_tilde.increment_at(grid)
    d_hat = A_hat.increment_at(grid)
    prefix = np.cumprod(1.0 - d_tilde + d_hat)
    tau = dataset.observed_first_jump(treatment_process)
    tau = np.where(tmask, tau, np.inf)
    treated = np.isfinite(tau)
    tt = tau[treated]
    p_before = np.concatenate([[1.0], prefix])[np.searchsorted(grid, tt, side="left")]
    th = theta.left(tt)
    factor = th - A_tilde.increment_at(tt) + A_hat.increment_at(tt)
    value = np.ones(dataset.n)
    value[treated] = p_before * factor
    theta_flag = np.zeros(dataset.n, dtype=bool)
    theta_flag[treated] = theta.flagged(tt)
    flags = {
        "bandwidth": float(b),
        "theta_default_count": int(theta_flag.sum()),
        "theta_default_times": [float(x) for x in tt[theta.flagged(tt)]],
        "negative_prefix_count": int(np.sum(prefix < 0)),
        "negative_weight_count": int(np.sum(value < 0)),
        "target_size": int(tmask.sum()),
        "reference_size": int(rmask.sum()),
        "n_grid": int(len(grid)),
    }
    return AHWWeights(grid, prefix, tmask, tau, value, dataset.end_of_observation(), dataset.ids, flags, theta_flag)


class TruncatedWeights(_Weights):
    """Weights clipped to fixed bounds, with a count of clipped evaluations."""

    def __init__(self, base: _Weights, lower: float, upper: float):
        if lower > upper:
            raise ValueError("lower truncation bound exceeds upper bound")
        self.base, self.lower, self.upper = base, float(lower), float(upper)
        self.n, self.ids = base.n, base.ids
        self.flags = dict(base.flags, truncation=[self.lower, self.upper])
        self.clipped = 0

    @classmethod
    def quantile(cls, base: _Weights, q: float, times) -> "TruncatedWeights":
        if not 0 <= q < 0.5:
            raise ValueError("truncation quantile must lie in [0, 0.5)")
        w = base.values(times).ravel()
        return cls(base, float(np.quantile(w, q)), float(np.quantile(w, 1 - q)))

    def _clip(self, w):
        self.clipped += int(np.sum((w < self.lower) | (w > self.upper)))
        return np.clip(w, self.lower, self.upper)

    def left_limits(self, times, rows=None):
        return self._clip(self.base.left_limits(times, rows))

    def values(self, times, rows=None):
        return self._clip(self.base.values(times, rows))

    def take(self, index):
        return TruncatedWeights(self.base.take(index), self.lower, self.upper)

    def subject_flag(self, i):
        return self.base.subject_flag(i)

    def trajectory(self, i):
        t = self.base.trajectory(i)
        return WeightTrajectory(t.times, np.clip(t.values, self.lower, self.upper),
                                np.clip(t.left, self.lower, self.upper), t.kind, t.subject_id)


def weight_diagnostics(weights: _Weights, times) -> dict:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    w = weights.values(times)
    out = {
        "times": times.tolist(),
        "mean": w.mean(axis=0).tolist(),
        "variance": w.var(axis=0, ddof=1).tolist() if weights.n > 1 else [0.0] * len(times),
        "min": w.min(axis=0).tolist(),
        "max": w.max(axis=0).tolist(),
    }
    out.update({k: v for k, v in weights.flags.items()})
    if isinstance(weights, TruncatedWeights):
        out["truncated_evaluations"] = weights.clipped
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_weights_csv(weights: _Weights, path, times) -> None:
    """Rows ``subject_id,time,weight,flag`` at the given times per subject."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    w = weights.values(times)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "time", "weight", "flag"])
        for i in range(weights.n):
            flag = weights.subject_flag(i)
            sid = weights.ids[i].item() if hasattr(weights.ids[i], "item") else weights.ids[i]
            for t, v in zip(times, w[i]):
                writer.writerow([sid, _fmt(t), _fmt(v), flag])
