"""Command-line interface.

Exit codes: 0 success, 1 negative verdict (invalid graph, separation or
identifiability fails), 2 input error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import examples as fixtures
from .data import DataFormatError, EventDataset, read_dataset, write_dataset
from .estimation import (
    EstimationError, bootstrap_bands, curves_to_svg, reweighted_incidence_analysis, weighted_kaplan_meier,
    cumulative_incidence, write_band_csv, write_curve_csv,
)
from .graph import GraphFormatError, GraphValidationError, LocalIndependenceGraph, UnknownNodeError, graph_from_dict
from .separation import HeuristicInconclusive, InvalidQuery, LimitExceeded, MissingRole, check_theorem1, run_query
from .simulation import (
    IntensityModel, InvalidGamma, InvalidParams, InvalidSpec, SimulationError, SystemSpec, load_spec, simulate_system,
    spec_from_dict,
)
from .weighting import (
    EmptyGroup, NegativeRho, NonPositiveBandwidth, RatioProcess, RhoBoundExceeded, TrajectoryWeights,
    dataset_exact_weights, estimate_weights_ahw, weight_diagnostics, write_weights_csv,
)

log = logging.getLogger("eventcausal")

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_ESTIMATION = 0, 1, 2, 3

INPUT_ERRORS = (OSError, json.JSONDecodeError, GraphFormatError, GraphValidationError, UnknownNodeError, DataFormatError,
                InvalidSpec, InvalidParams, InvalidGamma, MissingRole, InvalidQuery, KeyError, TypeError, ValueError)
ESTIMATION_ERRORS = (EstimationError, SimulationError, EmptyGroup, NonPositiveBandwidth, NegativeRho, RhoBoundExceeded,
                     LimitExceeded, HeuristicInconclusive)


class InputError(Exception):
    pass


def _dump(obj, path: Optional[Path] = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _read_json_arg(text_or_path: str):
    p = Path(text_or_path)
    if p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    return json.loads(text_or_path)


def load_graph_arg(ref) -> LocalIndependenceGraph:
    """A graph JSON file, an inline mapping, or the name of a bundled example graph."""
    if isinstance(ref, dict):
        return graph_from_dict(ref)
    if ref in fixtures.GRAPHS and not Path(ref).exists():
        return fixtures.GRAPHS[ref]()
    try:
        data = json.loads(Path(ref).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{ref}: {exc}") from None
    return graph_from_dict(data)


def _parse_roles(items: Sequence[str]) -> dict:
    roles: dict = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"role assignment {item!r} must look like node=role")
        node, role = item.split("=", 1)
        roles.setdefault(node, []).append(role)
    return roles


def _parse_value(text):
    for conv in (int, float):
        try:
            return conv(text)
        except (TypeError, ValueError):
            pass
    return text


# -- commands ------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        data = json.loads(Path(args.graph).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        _dump({"valid": False, "error": f"malformed JSON: {exc}"})
        return EXIT_INPUT
    try:
        graph = graph_from_dict(data)
    except GraphValidationError as exc:
        _dump({"valid": False, "violations": [{"rule": v.rule, "detail": v.detail} for v in exc.violations]})
        return EXIT_NEGATIVE
    _dump({"valid": True, "nodes": len(graph.nodes), "edges": len(graph.edges)})
    return EXIT_OK


def cmd_query(args) -> int:
    graph = load_graph_arg(args.graph)
    query = _read_json_arg(args.query)
    result = run_query(graph, query)
    _dump(result)
    verdict = next((result[k] for k in ("separated", "eliminable", "independent", "overall") if k in result), True)
    return EXIT_OK if verdict else EXIT_NEGATIVE


def cmd_identify(args) -> int:
    graph = load_graph_arg(args.graph)
    roles = _read_json_arg(args.roles) if args.roles else {}
    roles.update(_parse_roles(args.role))
    report = check_theorem1(graph, roles or None)
    _dump(report.to_dict())
    return EXIT_OK if report.overall else EXIT_NEGATIVE


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(seed) -> int:
    if seed is None:
        raise InputError("a seed is required (--seed or 'seed' in the config)")
    return int(seed)


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    if args.n < 1:
        raise InputError("n must be at least 1")
    seed = _require_seed(args.seed)
    ds = simulate_system(spec, args.n, seed, threads=args.threads)
    paths = write_dataset(ds, _out_dir(args))
    _dump({"n": ds.n, "spec_hash": ds.metadata["spec_hash"], "files": paths})
    return EXIT_OK


def _load_data(args) -> EventDataset:
    meta = args.metadata
    if meta is None and Path(args.events).with_name("metadata.json").exists():
        meta = str(Path(args.events).with_name("metadata.json"))
    return read_dataset(args.events, args.baseline, horizon=args.horizon, censoring=args.censoring,
                        metadata_path=meta)


def _group_arg(text: Optional[str]):
    if text is None:
        return None
    if "=" not in text:
        raise InputError(f"group {text!r} must look like node=value")
    node, value = text.split("=", 1)
    return {node: _parse_value(value)}


def _exact_weights(spec: SystemSpec, ds: EventDataset, treatment: str, group_node: str, reference_value, grid,
                   rho_bound: float = 100.0):
    """Exact weights imposing the reference group's treatment intensity on everybody."""
    old = spec.intensities[treatment]

    def new_eval(t, baseline, history):
        return old.evaluator(t, {**baseline, group_node: reference_value}, history)

    new = IntensityModel(treatment, new_eval, old.dependencies, old.bound, old.max_jumps, old.piecewise_constant,
                         old.breakpoints)
    return dataset_exact_weights(ds, old, RatioProcess.ratio(new, old, rho_bound), grid)


def cmd_weights(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    grid = np.array(args.times) if args.times else np.linspace(0, ds.horizon, 11)
    if args.spec:
        weights = _exact_weights(load_spec(args.spec), ds, args.treatment, args.group_node,
                                 _parse_value(args.reference), grid)
    else:
        weights = estimate_weights_ahw(ds, {args.group_node: _parse_value(args.target)},
                                       {args.group_node: _parse_value(args.reference)}, args.treatment, args.bandwidth)
    write_weights_csv(weights, out / "weights.csv", grid)
    _dump(weight_diagnostics(weights, grid), out / "weights_diagnostics.json")
    _dump({"files": [str(out / "weights.csv"), str(out / "weights_diagnostics.json")]})
    return EXIT_OK


def _weights_from_csv(path, ds: EventDataset):
    """Step weights read from ``subject_id,time,weight,flag`` rows."""
    import csv
    from .weighting import WeightTrajectory

    rows: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["subject_id", "time", "weight", "flag"]:
            raise DataFormatError("weights CSV header must be subject_id,time,weight,flag")
        for r in reader:
            rows.setdefault(_parse_value(r["subject_id"]), []).append((float(r["time"]), float(r["weight"])))
    trajs = []
    for sid in ds.ids.tolist():
        pts = sorted(rows.get(sid, []))
        if not pts or pts[0][0] != 0.0:
            pts = [(0.0, 1.0)] + pts
        t = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        left = np.concatenate([[1.0], v[:-1]])
        trajs.append(WeightTrajectory(t, v, left, "step", sid))
    return TrajectoryWeights(trajs, ds.ids)


def cmd_estimate(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    weights = _weights_from_csv(args.weights, ds) if args.weights else None
    curve = weighted_kaplan_meier(ds, weights, args.outcome, _group_arg(args.group))
    if args.incidence:
        curve = cumulative_incidence(curve)
    write_curve_csv(curve, out / "curve.csv")
    _dump({"file": str(out / "curve.csv"), **{k: v for k, v in curve.meta.items()}})
    return EXIT_OK


@dataclass
class AnalysisConfig:
    """Settings of the one-shot analysis; relative paths resolve against ``base``."""

    graph: object
    seed: int
    out: Path
    data: Optional[dict] = None
    simulate: Optional[dict] = None
    roles: dict = field(default_factory=dict)
    group_node: Optional[str] = None
    target_value: object = 1
    reference_value: object = 0
    bandwidth: Optional[float] = None
    replicates: int = 400
    level: float = 0.95
    weights: str = "ahw"
    times: list = field(default_factory=list)
    svg: bool = True

    @classmethod
    def from_dict(cls, obj: dict, base: Path, seed=None, out=None) -> "AnalysisConfig":
        obj = dict(obj)
        known = {"graph", "seed", "out", "data", "simulate", "roles", "group_node", "target_value", "reference_value",
                 "bandwidth", "bootstrap", "weights", "times", "svg"}
        unknown = set(obj) - known
        if unknown:
            raise InputError(f"unknown config keys {sorted(unknown)}")
        if "graph" not in obj:
            raise InputError("config needs a 'graph'")
        seed = obj.get("seed") if seed is None else seed
        if seed is None:
            raise InputError("config needs a 'seed' (no default seed is used)")
        if (obj.get("data") is None) == (obj.get("simulate") is None):
            raise InputError("config needs exactly one of 'data' or 'simulate'")
        graph = obj["graph"]
        if isinstance(graph, str) and graph not in fixtures.GRAPHS:
            graph = str((base / graph))
        data = obj.get("data")
        if data is not None:
            data = {k: (str(base / v) if k in ("events", "baseline", "metadata") and v else v) for k, v in data.items()}
            if not Path(data["events"]).exists():
                raise InputError(f"events file {data['events']} does not exist")
        sim = obj.get("simulate")
        if sim is not None and isinstance(sim.get("spec"), str):
            sim = dict(sim, spec=str(base / sim["spec"]))
        boot = obj.get("bootstrap", {}) or {}
        weights = obj.get("weights", "ahw")
        if weights not in ("ahw", "exact", "none"):
            raise InputError("weights must be 'ahw', 'exact' or 'none'")
        return cls(graph=graph, seed=int(seed), out=Path(out or obj.get("out") or "analysis_out"), data=data,
                   simulate=sim, roles=obj.get("roles") or {}, group_node=obj.get("group_node"),
                   target_value=obj.get("target_value", 1), reference_value=obj.get("reference_value", 0),
                   bandwidth=obj.get("bandwidth"), replicates=int(boot.get("replicates", 400)),
                   level=float(boot.get("level", 0.95)), weights=weights, times=list(obj.get("times", [])),
                   svg=bool(obj.get("svg", True)))


def _canonical_order(ds: EventDataset) -> EventDataset:
    order = sorted(range(ds.n), key=lambda i: (str(type(ds.ids[i].item()).__name__), ds.ids[i].item()))
    return ds.take(np.array(order, dtype=np.int64))


def run_analysis(cfg: AnalysisConfig, *, force: bool = False, threads: int = 1) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    graph = load_graph_arg(cfg.graph)
    report = check_theorem1(graph, cfg.roles or None)
    _dump(report.to_dict(), out / "identification.json")
    if not report.overall and not force:
        _dump(report.to_dict())
        return EXIT_NEGATIVE
    if not report.overall:
        print("WARNING: identifiability conditions fail; estimates are reported only because --force was given",
              file=sys.stderr)
    roles = report.roles
    treatment = roles["treatment"]
    outcomes = roles["outcomes"]
    if len(outcomes) != 1:
        raise InputError("the analysis needs exactly one outcome process")
    outcome = outcomes[0]
    spec = None
    if cfg.simulate is not None:
        spec_ref = cfg.simulate["spec"]
        spec = spec_from_dict(spec_ref) if isinstance(spec_ref, dict) else load_spec(spec_ref)
        ds = simulate_system(spec, int(cfg.simulate.get("n", 1736)), cfg.seed, threads=threads)
        write_dataset(ds, out / "data")
    else:
        d = cfg.data
        ds = read_dataset(d["events"], d.get("baseline"), horizon=d.get("horizon"), censoring=d.get("censoring"),
                          metadata_path=d.get("metadata"))
        if d.get("spec"):
            spec = load_spec(d["spec"])
    ds = _canonical_order(ds)
    if ds.censoring is None:
        ds.censoring = roles["censoring"]
    group_node = cfg.group_node
    if group_node is None:
        # kept baseline nodes fixed by entry selection cannot define groups
        varying = [k for k in roles["baseline_keep"] if k in ds.baseline and len(np.unique(ds.baseline[k])) > 1]
        if len(varying) != 1:
            raise InputError(f"set 'group_node'; candidates that vary in the data: {varying}")
        group_node = varying[0]

    grid = np.linspace(0, ds.horizon, 11)
    tgt, ref = cfg.target_value, cfg.reference_value
    if cfg.weights == "exact":
        if spec is None:
            raise InputError("exact weights need a simulation spec")
        full = _exact_weights(spec, ds, treatment, group_node, ref, grid)
        by_id = {sid: traj for sid, traj in zip(ds.ids.tolist(), full.trajectories)}

        def make_weights(d):
            return TrajectoryWeights([by_id[s] for s in d.ids.tolist()], d.ids)
    elif cfg.weights == "none":
        from .weighting import UnitWeights

        def make_weights(d):
            return UnitWeights(d.n, d.ids)
    else:
        def make_weights(d):
            return estimate_weights_ahw(d, {group_node: tgt}, {group_node: ref}, treatment, cfg.bandwidth)

    def pipeline(d):
        return reweighted_incidence_analysis(d, treatment, outcome, group_node, tgt, ref, weights=make_weights(d))

    res = pipeline(ds)
    band_times = sorted(set(cfg.times) | {ds.horizon / 2})
    band = bootstrap_bands(lambda d: pipeline(d)["contrast"], ds, cfg.replicates, cfg.level, cfg.seed,
                           times=band_times, threads=threads)
    names = ("observed_target", "reweighted_target", "reference", "contrast")
    for name in names:
        write_curve_csv(res[name], out / f"{name}.csv")
    write_band_csv(band, out / "contrast_band.csv")
    weights = res["weights"]
    diag = {
        "forced": bool(force and not report.overall),
        "identified": report.overall,
        "n": ds.n,
        "treatment": treatment,
        "outcome": outcome,
        "group_node": group_node,
        "target_value": tgt,
        "reference_value": ref,
        "weights_method": cfg.weights,
        "seed": cfg.seed,
        "spec_hash": spec.spec_hash() if spec is not None else None,
        "curves": {name: dict(res[name].meta) for name in names[:3]},
        "bootstrap": {"replicates": band.replicates, "level": band.level, "degenerate": band.degenerate, **band.meta},
        "band_at": {f"{t!r}": {"lower": float(band.lower[np.searchsorted(band.times, t, side='right') - 1]),
                               "upper": float(band.upper[np.searchsorted(band.times, t, side='right') - 1])}
                    for t in band_times},
        "weights": weight_diagnostics(weights, grid),
    }
    _dump(diag, out / "diagnostics.json")
    if cfg.svg:
        curves_to_svg({"target, observed": res["observed_target"], "target, reweighted": res["reweighted_target"],
                       "reference": res["reference"]}, out / "incidence.svg", horizon=ds.horizon,
                      title="Cumulative incidence")
        curves_to_svg({"contrast": res["contrast"]}, out / "contrast.svg", horizon=ds.horizon, band=band,
                      title="Reweighted target minus reference")
    _dump({"out": str(out), "identified": report.overall, "forced": diag["forced"]})
    return EXIT_OK


def cmd_analyze(args) -> int:
    path = Path(args.config)
    cfg = AnalysisConfig.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent, args.seed,
                                   args.out if args.out_given else None)
    return run_analysis(cfg, force=args.force, threads=args.threads)


# -- parser ------------------------------------------------------------------------------


def _data_args(p):
    p.add_argument("--events", required=True, help="events CSV (subject_id,node_id,event_time)")
    p.add_argument("--baseline", help="baseline CSV (subject_id,node_id,value)")
    p.add_argument("--metadata", help="metadata JSON written by 'simulate'")
    p.add_argument("--horizon", type=float)
    p.add_argument("--censoring", help="censoring node id")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventcausal", description="Causal validity checks and reweighting for event histories")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check the structural rules of a graph file")
    p.add_argument("graph")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("query", help="evaluate a separation, eliminability, censoring or identifiability query")
    p.add_argument("graph", help="graph JSON file or bundled example name")
    p.add_argument("query", help="query JSON (file or inline)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("identify", help="check the identifiability conditions")
    p.add_argument("graph")
    p.add_argument("--roles", help="JSON mapping node -> role(s), file or inline")
    p.add_argument("--role", action="append", default=[], metavar="NODE=ROLE")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="simulate a dataset from a spec file")
    p.add_argument("spec")
    p.add_argument("-n", "--n", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", help="compute weights imposing the reference group's treatment intensity")
    _data_args(p)
    p.add_argument("--treatment", required=True)
    p.add_argument("--group-node", required=True)
    p.add_argument("--target", default="1")
    p.add_argument("--reference", default="0")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--spec", help="spec file; gives exact weights instead of estimated ones")
    p.add_argument("--times", type=float, nargs="*")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("estimate", help="weighted Kaplan-Meier curve")
    _data_args(p)
    p.add_argument("--outcome", required=True)
    p.add_argument("--weights", help="weights CSV")
    p.add_argument("--group", help="node=value restriction")
    p.add_argument("--incidence", action="store_true", help="report one minus survival")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze", help="identify, reweight, estimate and bootstrap in one go")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="estimate even if identification fails")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    args.out_given = any(a == "--out" or a.startswith("--out=") for a in argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ESTIMATION_ERRORS as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
