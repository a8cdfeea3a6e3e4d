"""Event-history data: per-subject paths and a columnar dataset container."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = ["SubjectPath", "EventDataset", "DataFormatError", "write_dataset", "read_dataset"]


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SubjectPath:
    subject_id: object
    baseline: Mapping
    jumps: Mapping  # node -> tuple of sorted jump times
    censor_time: float = math.inf

    def n_jumps(self, node: str, t: float = math.inf) -> int:
        return int(np.searchsorted(self.jumps.get(node, ()), t, side="right"))


class EventDataset:
    """Independent subject paths stored column-wise.

    Jump times of each process are kept in CSR form (``offsets``, ``times``)
    so subsets and bootstrap resamples are cheap index operations.  The
    censoring time of a subject is the first jump of ``censoring`` (``inf`` if
    none); observation ends at ``min(C, horizon)``.
    """

    def __init__(self, ids, baseline, jumps, horizon, censoring=None, metadata=None):
        self.ids = np.asarray(ids)
        self.n = len(self.ids)
        self.baseline = {k: np.asarray(v) for k, v in baseline.items()}
        self.jumps = {}
        for node, (offsets, times) in jumps.items():
            offsets = np.asarray(offsets, dtype=np.int64)
            times = np.asarray(times, dtype=float)
            if len(offsets) != self.n + 1:
                raise DataFormatError(f"offsets for {node} do not match {self.n} subjects")
            self.jumps[node] = (offsets, times)
        self.horizon = float(horizon)
        self.censoring = censoring
        self.metadata = dict(metadata or {})
        self._cache: dict = {}

    # -- construction -------------------------------------------------------

    @classmethod
    def from_paths(cls, paths: Iterable[SubjectPath], horizon, censoring=None, metadata=None, nodes=None):
        paths = list(paths)
        ids = [p.subject_id for p in paths]
        bnodes = sorted({k for p in paths for k in p.baseline})
        pnodes = sorted(set(nodes or ()) | {k for p in paths for k in p.jumps})
        baseline = {k: np.array([p.baseline.get(k) for p in paths]) for k in bnodes}
        jumps = {}
        for node in pnodes:
            counts = [len(p.jumps.get(node, ())) for p in paths]
            offsets = np.zeros(len(paths) + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            flat = [t for p in paths for t in p.jumps.get(node, ())]
            jumps[node] = (offsets, np.array(flat, dtype=float))
        return cls(ids, baseline, jumps, horizon, censoring, metadata)

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return (self.subject(i) for i in range(self.n))

    @property
    def process_nodes(self) -> list:
        return sorted(self.jumps)

    def subject(self, i: int) -> SubjectPath:
        jumps = {}
        for node, (off, times) in self.jumps.items():
            jumps[node] = tuple(times[off[i]:off[i + 1]].tolist())
        base = {k: v[i].item() if hasattr(v[i], "item") else v[i] for k, v in self.baseline.items()}
        return SubjectPath(self.ids[i].item(), base, jumps, float(self.censor_times()[i]))

    def take(self, index) -> "EventDataset":
        """Subset or resample subjects (duplicates allowed)."""
        index = np.asarray(index, dtype=np.int64)
        jumps = {}
        for node, (off, times) in self.jumps.items():
            counts = (off[1:] - off[:-1])[index]
            new_off = np.zeros(len(index) + 1, dtype=np.int64)
            np.cumsum(counts, out=new_off[1:])
            if counts.sum():
                starts = np.repeat(off[:-1][index], counts)
                within = np.arange(counts.sum()) - np.repeat(new_off[:-1], counts)
                new_times = times[starts + within]
            else:
                new_times = np.empty(0)
            jumps[node] = (new_off, new_times)
        base = {k: v[index] for k, v in self.baseline.items()}
        return EventDataset(self.ids[index], base, jumps, self.horizon, self.censoring, self.metadata)

    def where(self, mask) -> "EventDataset":
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    # -- derived quantities ---------------------------------------------------

    def jump_times(self, node: str, i: int) -> np.ndarray:
        off, times = self.jumps[node]
        return times[off[i]:off[i + 1]]

    def jump_counts(self, node: str) -> np.ndarray:
        off, _ = self.jumps[node]
        return off[1:] - off[:-1]

    def first_jump(self, node: str) -> np.ndarray:
        """First jump time per subject, ``inf`` if the process never jumps."""
        key = ("first", node)
        if key not in self._cache:
            if node not in self.jumps:
                out = np.full(self.n, np.inf)
            else:
                off, times = self.jumps[node]
                has = off[1:] > off[:-1]
                out = np.full(self.n, np.inf)
                out[has] = times[off[:-1][has]]
            self._cache[key] = out
        return self._cache[key]

    def censor_times(self) -> np.ndarray:
        if self.censoring is None:
            return np.full(self.n, np.inf)
        return self.first_jump(self.censoring)

    def end_of_observation(self) -> np.ndarray:
        return np.minimum(self.censor_times(), self.horizon)

    def observed_first_jump(self, node: str) -> np.ndarray:
        """First jump if it happens while under observation, else ``inf``."""
        first = self.first_jump(node)
        return np.where(first <= self.end_of_observation(), first, np.inf)

    def exit_times(self, node: str) -> np.ndarray:
        """End of the at-risk period for the first jump of ``node``."""
        return np.minimum(self.first_jump(node), self.end_of_observation())

    def group_mask(self, group) -> np.ndarray:
        """Boolean mask from ``None`` (all), a mapping ``{node: value}`` or a mask."""
        if group is None:
            return np.ones(self.n, dtype=bool)
        if isinstance(group, Mapping):
            mask = np.ones(self.n, dtype=bool)
            for node, value in group.items():
                if node not in self.baseline:
                    raise DataFormatError(f"no baseline values for {node!r} (known: {sorted(self.baseline)})")
                mask &= self.baseline[node] == value
            return mask
        mask = np.asarray(group, dtype=bool)
        if mask.shape != (self.n,):
            raise ValueError("group mask has the wrong length")
        return mask

    def stopped(self) -> "EventDataset":
        """Copy with every record after the end of observation removed."""
        end = self.end_of_observation()
        jumps = {}
        for node, (off, times) in self.jumps.items():
            owner = np.repeat(np.arange(self.n), off[1:] - off[:-1])
            keep = times <= end[owner]
            counts = np.bincount(owner[keep], minlength=self.n)
            new_off = np.zeros(self.n + 1, dtype=np.int64)
            np.cumsum(counts, out=new_off[1:])
            jumps[node] = (new_off, times[keep])
        return EventDataset(self.ids, self.baseline, jumps, self.horizon, self.censoring, self.metadata)


# -- CSV I/O -------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def write_dataset(dataset: EventDataset, out_dir, *, prefix: str = "") -> dict:
    """Write ``events.csv``, ``baseline.csv`` and ``metadata.json`` (long format).

    Censoring appears as a jump of the censoring node.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out_dir / f"{prefix}events.csv",
        "baseline": out_dir / f"{prefix}baseline.csv",
        "metadata": out_dir / f"{prefix}metadata.json",
    }
    rows = []
    for node, (off, times) in dataset.jumps.items():
        owner = np.repeat(np.arange(dataset.n), off[1:] - off[:-1])
        rows.extend(zip(owner.tolist(), [node] * len(times), times.tolist()))
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "node_id", "event_time"])
        for i, node, t in rows:
            w.writerow([_fmt(dataset.ids[i].item()), node, _fmt(t)])
    with open(paths["baseline"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "node_id", "value"])
        for i in range(dataset.n):
            for node in sorted(dataset.baseline):
                w.writerow([_fmt(dataset.ids[i].item()), node, _fmt(dataset.baseline[node][i].item())])
    meta = dict(dataset.metadata)
    meta.update(
        horizon=dataset.horizon,
        censoring=dataset.censoring,
        process_nodes=dataset.process_nodes,
        subject_ids=[dataset.ids[i].item() for i in range(dataset.n)],
    )
    with open(paths["metadata"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}


def read_dataset(events_path, baseline_path=None, *, horizon=None, censoring=None, metadata_path=None, process_nodes=()) -> EventDataset:
    meta: dict = {}
    if metadata_path is not None:
        with open(metadata_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    horizon = horizon if horizon is not None else meta.get("horizon")
    if horizon is None:
        raise DataFormatError("horizon must be given explicitly or via metadata")
    censoring = censoring if censoring is not None else meta.get("censoring")
    events: dict = {}
    baseline: dict = {}
    order: list = list(meta.get("subject_ids", []))
    seen = set(order)

    def note(sid):
        if sid not in seen:
            seen.add(sid)
            order.append(sid)

    with open(events_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "node_id", "event_time"]:
            raise DataFormatError(f"events CSV header must be subject_id,node_id,event_time, got {reader.fieldnames}")
        for row in reader:
            sid = _parse_value(row["subject_id"])
            note(sid)
            t = float(row["event_time"])
            if not (0.0 < t <= float(horizon)):
                raise DataFormatError(f"event time {t} outside (0, {horizon}]")
            events.setdefault(row["node_id"], {}).setdefault(sid, []).append(t)
    if baseline_path is not None:
        with open(baseline_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["subject_id", "node_id", "value"]:
                raise DataFormatError(f"baseline CSV header must be subject_id,node_id,value, got {reader.fieldnames}")
            for row in reader:
                sid = _parse_value(row["subject_id"])
                note(sid)
                baseline.setdefault(row["node_id"], {})[sid] = _parse_value(row["value"])
    nodes = set(events) | set(process_nodes) | set(meta.get("process_nodes", []))
    if censoring:
        nodes.add(censoring)
    paths = []
    for sid in order:
        jumps = {node: tuple(sorted(events.get(node, {}).get(sid, ()))) for node in nodes}
        base = {node: vals[sid] for node, vals in baseline.items() if sid in vals}
        paths.append(SubjectPath(sid, base, jumps))
    meta.pop("subject_ids", None)
    return EventDataset.from_paths(paths, horizon, censoring, meta, nodes=nodes)
