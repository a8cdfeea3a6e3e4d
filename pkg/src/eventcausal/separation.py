"""δ-separation, eliminability of latent sets, independent censoring and the
combined identifiability verdict for local independence graphs.

Two δ-separation engines are provided.  ``method="trails"`` enumerates allowed
trails and applies the blocking rules literally; it is the reference.
``method="reachability"`` runs a linear-time search over (node, arrival
orientation) states in the style of Bayes-ball and is the default.  The
search never passes through the target node, so it decides existence of an
open *allowed* trail: any open walk can be shortened to an open trail with the
same endpoints and final edge.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .graph import LocalIndependenceGraph, UnknownNodeError

log = logging.getLogger(__name__)

__all__ = [
    "Trail",
    "LimitExceeded",
    "InvalidQuery",
    "HeuristicInconclusive",
    "NoCensoringNode",
    "MissingRole",
    "SeparationResult",
    "EliminabilityWitness",
    "IdentifiabilityReport",
    "iter_allowed_trails",
    "enumerate_allowed_trails",
    "is_blocked",
    "delta_separated",
    "check_ordering",
    "eliminable",
    "check_independent_censoring",
    "resolve_roles",
    "check_theorem1",
    "search_sufficient_covariates",
    "run_query",
]

DEFAULT_TRAIL_LIMIT = 10**6
EXHAUSTIVE_LIMIT = 6


class LimitExceeded(RuntimeError):
    pass


class InvalidQuery(ValueError):
    pass


class HeuristicInconclusive(RuntimeError):
    """The singleton-ordering search failed on a large latent set.

    This is not a proof that the set is not eliminable.
    """


class NoCensoringNode(ValueError):
    pass


class MissingRole(ValueError):
    pass


@dataclass(frozen=True)
class Trail:
    vertices: tuple
    edges: tuple  # ((from, to), ...), edge j joins vertices[j] and vertices[j+1]

    def __post_init__(self):
        if len(self.vertices) < 2 or len(self.edges) != len(self.vertices) - 1:
            raise ValueError("a trail needs at least one edge")
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError(f"trail vertices repeat: {self.vertices}")
        for j, (u, v) in enumerate(self.edges):
            if {u, v} != {self.vertices[j], self.vertices[j + 1]}:
                raise ValueError(f"edge {u}->{v} does not join trail vertices {j}, {j + 1}")

    @property
    def start(self) -> str:
        return self.vertices[0]

    @property
    def end(self) -> str:
        return self.vertices[-1]

    @property
    def is_allowed(self) -> bool:
        return self.edges[-1] == (self.vertices[-2], self.vertices[-1])

    def colliders(self) -> list:
        """Interior vertices with both adjacent trail edges pointing into them."""
        out = []
        for j in range(1, len(self.vertices) - 1):
            v = self.vertices[j]
            if self.edges[j - 1][1] == v and self.edges[j][1] == v:
                out.append(v)
        return out

    def __str__(self) -> str:
        parts = [self.vertices[0]]
        for j, (u, _) in enumerate(self.edges):
            parts.append("->" if u == self.vertices[j] else "<-")
            parts.append(self.vertices[j + 1])
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [list(e) for e in self.edges],
            "text": str(self),
        }


def iter_allowed_trails(graph: LocalIndependenceGraph, b: str, a: str, max_len: int | None = None) -> Iterator[Trail]:
    """Yield allowed trails from ``b`` to process ``a`` in lexicographic order.

    Order is by vertex sequence; between the same pair of processes the edge
    leaving the earlier vertex comes first.
    """
    graph.node(b)
    if not graph.is_process(a):
        raise InvalidQuery(f"target {a!r} is not a process node")
    if a == b:
        raise InvalidQuery("source and target coincide")
    path = [b]
    edges: list = []
    on_path = {b}

    def dfs(v):
        if max_len is not None and len(edges) >= max_len:
            return
        for w, e in graph.incident(v):
            if w in on_path:
                continue
            if w == a:
                if e == (v, a):
                    yield Trail(tuple(path) + (a,), tuple(edges) + (e,))
                continue
            path.append(w)
            edges.append(e)
            on_path.add(w)
            yield from dfs(w)
            on_path.discard(w)
            edges.pop()
            path.pop()

    yield from dfs(b)


def enumerate_allowed_trails(graph, b, a, max_len=None, limit=DEFAULT_TRAIL_LIMIT) -> list:
    out = []
    for trail in iter_allowed_trails(graph, b, a, max_len):
        out.append(trail)
        if len(out) > limit:
            raise LimitExceeded(f"more than {limit} allowed trails from {b} to {a}")
    return out


def is_blocked(graph: LocalIndependenceGraph, trail: Trail, C: Iterable[str]) -> bool:
    C = frozenset(C)
    for j in range(1, len(trail.vertices) - 1):
        v = trail.vertices[j]
        collider = trail.edges[j - 1][1] == v and trail.edges[j][1] == v
        if collider:
            if v not in C and not (graph.descendants(v) & C):
                return True
        elif v in C:
            return True
    return False


@dataclass(frozen=True)
class SeparationResult:
    separated: bool
    witness: Trail | None = None
    target: str | None = None
    conditioning: tuple = ()

    def __bool__(self) -> bool:
        return self.separated

    def to_dict(self) -> dict:
        out = {"separated": self.separated}
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
            out["target"] = self.target
            out["blocking_set"] = list(self.conditioning)
        return out


def _check_query(graph, B, A, C):
    for v in (*B, *A, *C):
        graph.node(v)
    if not A:
        raise InvalidQuery("target set A must be nonempty")
    for a in A:
        if not graph.is_process(a):
            raise InvalidQuery(f"target {a!r} is not a process node")
    if B & A or B & C or A & C:
        raise InvalidQuery("B, A and C must be pairwise disjoint")


def _open_trail_exists(graph: LocalIndependenceGraph, sources: frozenset, a: str, S: frozenset) -> bool:
    # BFS over (node, arrived_with_arrowhead) states; `a` only as the terminal.
    an_s = graph.ancestral_closure(S)
    seen = set()
    queue = deque()
    for b in sorted(sources):
        for w, e in graph.incident(b):
            if w == a:
                if e[1] == a:
                    return True
                continue
            state = (w, e[1] == w)
            if state not in seen:
                seen.add(state)
                queue.append(state)
    while queue:
        v, head_in = queue.popleft()
        for w, e in graph.incident(v):
            collider = head_in and e[1] == v
            if collider:
                if v not in an_s:
                    continue
            elif v in S:
                continue
            if w == a:
                if e[1] == a:
                    return True
                continue
            state = (w, e[1] == w)
            if state not in seen:
                seen.add(state)
                queue.append(state)
    return False


def _first_open_trail(graph, B, a, S, limit):
    count = 0
    for b in sorted(B):
        for trail in iter_allowed_trails(graph, b, a):
            count += 1
            if count > limit:
                raise LimitExceeded(f"more than {limit} allowed trails into {a}")
            if not is_blocked(graph, trail, S):
                return trail
    return None


def delta_separated(
    graph: LocalIndependenceGraph,
    B: Iterable[str],
    A: Iterable[str],
    C: Iterable[str] = (),
    *,
    method: str = "reachability",
    witness: bool = True,
    limit: int = DEFAULT_TRAIL_LIMIT,
) -> SeparationResult:
    """Decide whether ``B`` is δ-separated from the processes ``A`` by ``A ∪ C``.

    Every allowed trail from any ``b`` in ``B`` to any ``a`` in ``A`` must be
    blocked by ``(A ∪ C) \\ {a}``.  On failure the first open allowed trail
    in canonical order (targets sorted, then sources sorted, then trails
    lexicographically) is returned as the witness.
    """
    B, A, C = frozenset(B), frozenset(A), frozenset(C)
    _check_query(graph, B, A, C)
    for a in sorted(A):
        S = (A | C) - {a}
        if method == "trails":
            trail = _first_open_trail(graph, B, a, S, limit)
            if trail is not None:
                return SeparationResult(False, trail if witness else None, a, tuple(sorted(S)))
        elif method == "reachability":
            if _open_trail_exists(graph, B, a, S):
                trail = _first_open_trail(graph, B, a, S, limit) if witness else None
                return SeparationResult(False, trail, a, tuple(sorted(S)))
        else:
            raise ValueError(f"unknown method {method!r}")
    return SeparationResult(True)


# -- eliminability -----------------------------------------------------------

OUTCOME_SIDE = "outcome_side"
TREATMENT_SIDE = "treatment_side"


@dataclass(frozen=True)
class EliminabilityWitness:
    blocks: tuple  # tuple of sorted tuples
    tags: tuple  # OUTCOME_SIDE / TREATMENT_SIDE per block
    heuristic: bool = False

    def __post_init__(self):
        seen: set = set()
        for blk in self.blocks:
            if not blk or seen & set(blk):
                raise ValueError("blocks must be nonempty and disjoint")
            seen |= set(blk)

    def to_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "tags": list(self.tags),
            "heuristic": self.heuristic,
        }


def _block_condition(graph, block, x, v0, outcomes, later, method):
    """Return the tag of the first condition that holds for ``block``, else None."""
    cond = v0 | later
    if not outcomes or delta_separated(graph, block, outcomes, cond - outcomes, method=method, witness=False):
        return OUTCOME_SIDE
    if delta_separated(graph, block, {x}, cond - {x}, method=method, witness=False):
        return TREATMENT_SIDE
    return None


def _elim_setup(graph, U, x, V0_rest):
    U, V0_rest = frozenset(U), frozenset(V0_rest)
    for v in (*U, x, *V0_rest):
        graph.node(v)
    if not graph.is_process(x):
        raise InvalidQuery(f"treatment {x!r} is not a process node")
    if x in U or x in V0_rest or U & V0_rest:
        raise InvalidQuery("U, {x} and V0_rest must be pairwise disjoint")
    v0 = V0_rest | {x}
    outcomes = frozenset(v for v in V0_rest if graph.is_process(v))
    return U, v0, outcomes


def check_ordering(graph, blocks, x, V0_rest, *, method="reachability") -> list | None:
    """Check one ordered partition; return per-block tags, or None if a block fails."""
    blocks = [frozenset(b) for b in blocks]
    U, v0, outcomes = _elim_setup(graph, frozenset().union(*blocks) if blocks else (), x, V0_rest)
    if sum(len(b) for b in blocks) != len(U) or any(not b for b in blocks):
        raise InvalidQuery("blocks must be nonempty and disjoint")
    tags = []
    for k, block in enumerate(blocks):
        later = frozenset().union(*blocks[k + 1:]) if k + 1 < len(blocks) else frozenset()
        tag = _block_condition(graph, block, x, v0, outcomes, later, method)
        if tag is None:
            return None
        tags.append(tag)
    return tags


def _candidate_blocks(remaining: frozenset, singletons_only: bool):
    items = sorted(remaining)
    sizes = [1] if singletons_only else range(len(items), 0, -1)
    for size in sizes:
        for combo in itertools.combinations(items, size):
            yield frozenset(combo)


def eliminable(
    graph: LocalIndependenceGraph,
    U: Iterable[str],
    x: str,
    V0_rest: Iterable[str],
    *,
    exhaustive_limit: int = EXHAUSTIVE_LIMIT,
    method: str = "reachability",
) -> EliminabilityWitness | None:
    """Search for an ordered partition of ``U`` witnessing eliminability.

    Blocks are chosen front to back; block ``k`` is conditioned on ``V0`` and
    the union of all blocks after it, i.e. on everything not yet placed.  For
    ``|U| <= exhaustive_limit`` every ordered partition is covered (failed
    remainders are memoised), trying larger blocks first and lexicographic
    order within a size.  Larger sets are searched over singleton orderings
    only; a witness found that way is flagged ``heuristic`` and a failure
    raises :class:`HeuristicInconclusive`.
    """
    U, v0, outcomes = _elim_setup(graph, U, x, V0_rest)
    if not U:
        return EliminabilityWitness((), ())
    heuristic = len(U) > exhaustive_limit
    cache: dict = {}
    failed: set = set()

    def cond(block, later):
        key = (block, later)
        if key not in cache:
            cache[key] = _block_condition(graph, block, x, v0, outcomes, later, method)
        return cache[key]

    def solve(remaining):
        if not remaining:
            return []
        if remaining in failed:
            return None
        for block in _candidate_blocks(remaining, heuristic):
            rest = remaining - block
            tag = cond(block, rest)
            if tag is None:
                continue
            tail = solve(rest)
            if tail is not None:
                return [(block, tag)] + tail
        failed.add(remaining)
        return None

    found = solve(U)
    if found is None:
        if heuristic:
            raise HeuristicInconclusive(
                f"no singleton ordering of {len(U)} latent nodes works; larger blocks were not searched"
            )
        return None
    return EliminabilityWitness(
        tuple(tuple(sorted(b)) for b, _ in found), tuple(t for _, t in found), heuristic
    )


# -- censoring -----------------------------------------------------------------


def _censoring_node(graph, censoring=None):
    if censoring is not None:
        graph.node(censoring)
        return censoring
    tagged = graph.with_role("censoring")
    if not tagged:
        raise NoCensoringNode("graph has no node tagged 'censoring'")
    return tagged[0]


def check_independent_censoring(graph, A=(), B=(), scope="whole_model", *, censoring=None, method="reachability") -> bool:
    """Graphical independent-censoring check.

    ``whole_model``: the censoring node is childless.  ``submodel``: the model
    induced by ``A ∪ B ∪ {N^c}`` has independent censoring, i.e. ``N^c`` is
    δ-separated from the processes in ``A ∪ B`` by ``A ∪ B``.
    ``conditional``: censoring is independent for ``A`` given ``B``.
    """
    nc = _censoring_node(graph, censoring)
    if scope == "whole_model":
        return not graph.children(nc)
    A, B = frozenset(A) - {nc}, frozenset(B) - {nc}
    if scope == "submodel":
        both = A | B
        targets = frozenset(v for v in both if graph.is_process(v))
        if not targets:
            return True
        return bool(delta_separated(graph, {nc}, targets, both - targets, method=method, witness=False))
    if scope == "conditional":
        return bool(delta_separated(graph, {nc}, A, B - A, method=method, witness=False))
    raise ValueError(f"unknown scope {scope!r}")


# -- combined identifiability check --------------------------------------------


@dataclass(frozen=True)
class Roles:
    treatment: str
    censoring: str
    outcomes: frozenset
    baseline_keep: frozenset
    marginalize: frozenset
    latent: frozenset

    @property
    def v0(self) -> frozenset:
        return self.outcomes | self.baseline_keep | {self.treatment}


def resolve_roles(graph: LocalIndependenceGraph, roles: Mapping | None = None) -> Roles:
    """Read role assignments from node tags, optionally overridden by ``roles``.

    ``roles`` maps a node id to a role name or list of role names.  Nodes with
    no role are latent.
    """
    tags = {n.id: set(n.roles) for n in graph.nodes}
    for node, r in (roles or {}).items():
        graph.node(node)
        tags[node] = {r} if isinstance(r, str) else set(r)
    by_role: dict = {}
    for node, rs in tags.items():
        for r in rs:
            r = "baseline_keep" if r == "covariate" else r
            by_role.setdefault(r, set()).add(node)
    missing = [r for r in ("treatment", "censoring") if len(by_role.get(r, ())) != 1]
    if missing:
        raise MissingRole(f"exactly one node must be tagged {missing}")
    (x,) = by_role["treatment"]
    (nc,) = by_role["censoring"]
    if not graph.is_process(x) or not graph.is_process(nc):
        raise MissingRole("treatment and censoring must be process nodes")
    outcomes = frozenset(by_role.get("outcome", ()))
    if not outcomes:
        raise MissingRole("no node tagged 'outcome'")
    for v in outcomes:
        if not graph.is_process(v):
            raise MissingRole(f"outcome {v!r} is not a process node")
    keep = frozenset(by_role.get("baseline_keep", ()))
    marg = frozenset(by_role.get("marginalize", ()))
    assigned = {x, nc} | outcomes | keep | marg
    overlap = [v for v, rs in tags.items() if len({"baseline_keep" if r == "covariate" else r for r in rs} - {"latent"}) > 1]
    if overlap:
        raise MissingRole(f"nodes with conflicting roles: {sorted(overlap)}")
    latent = frozenset(graph.node_ids) - assigned
    return Roles(x, nc, outcomes, keep, marg, latent)


@dataclass(frozen=True)
class IdentifiabilityReport:
    censoring_independent_full_model: bool
    condition_i: bool
    condition_ii: bool
    overall: bool
    condition_i_witness: Trail | None = None
    condition_ii_witness: EliminabilityWitness | None = None
    condition_ii_note: str = ""
    roles: dict = field(default_factory=dict)
    required_weight_filtrations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "censoring_independent_full_model": self.censoring_independent_full_model,
            "condition_i": {
                "holds": self.condition_i,
                "witness": self.condition_i_witness.to_dict() if self.condition_i_witness else None,
            },
            "condition_ii": {
                "holds": self.condition_ii,
                "witness": self.condition_ii_witness.to_dict() if self.condition_ii_witness else None,
                "note": self.condition_ii_note,
            },
            "roles": self.roles,
            "required_weight_filtrations": self.required_weight_filtrations,
        }


def check_theorem1(graph: LocalIndependenceGraph, roles: Mapping | None = None, *, method="reachability") -> IdentifiabilityReport:
    """Check the graphical conditions under which re-weighting by the combined
    censoring and treatment weights identifies the interventional law on V0.

    Conditions: (a) the censoring node is childless; (i) ``N^c`` is δ-separated
    from the processes of ``V0 ∪ L`` given ``V0 ∪ L``; (ii) the latent set is
    eliminable with respect to the treatment and ``L ∪ V0 \\ {x}``.
    """
    r = resolve_roles(graph, roles)
    v0, L = r.v0, r.marginalize
    full = check_independent_censoring(graph, scope="whole_model", censoring=r.censoring)

    targets = frozenset(v for v in v0 | L if graph.is_process(v))
    sep = delta_separated(graph, {r.censoring}, targets, (v0 | L) - targets, method=method)
    cond_i = sep.separated

    note = ""
    witness = None
    try:
        witness = eliminable(graph, r.latent, r.treatment, (v0 | L) - {r.treatment}, method=method)
        cond_ii = witness is not None
        if not cond_ii:
            note = "no ordered partition of the latent set satisfies either block condition"
        elif witness.heuristic:
            note = "witness found by singleton-ordering heuristic"
    except HeuristicInconclusive as exc:
        cond_ii = False
        note = f"inconclusive: {exc}"

    role_dict = {
        "treatment": r.treatment,
        "censoring": r.censoring,
        "outcomes": sorted(r.outcomes),
        "baseline_keep": sorted(r.baseline_keep),
        "marginalize": sorted(L),
        "latent": sorted(r.latent),
    }
    observed = sorted(v0 | L | {r.censoring})
    filtrations = {
        "censoring_intensity": observed,
        "treatment_intensity": observed,
        "censoring_intervention": sorted(v0 | {r.censoring}),
        "treatment_intervention": sorted(v0),
    }
    return IdentifiabilityReport(
        censoring_independent_full_model=full,
        condition_i=cond_i,
        condition_ii=cond_ii,
        overall=full and cond_i and cond_ii,
        condition_i_witness=sep.witness,
        condition_ii_witness=witness,
        condition_ii_note=note,
        roles=role_dict,
        required_weight_filtrations=filtrations,
    )


def search_sufficient_covariates(graph, candidates, roles=None, *, max_candidates=12, minimal_only=True) -> list:
    """Experimental: brute-force search for subsets L of ``candidates`` that,
    when measured and marginalised (the rest latent), pass :func:`check_theorem1`.

    Subsets are tried by increasing size; with ``minimal_only`` supersets of a
    passing set are skipped.
    """
    candidates = sorted(set(candidates))
    if len(candidates) > max_candidates:
        raise LimitExceeded(f"{len(candidates)} candidates exceeds the cap of {max_candidates}")
    base = dict(roles or {})
    found: list = []
    for size in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, size):
            chosen = frozenset(combo)
            if minimal_only and any(f <= chosen for f in found):
                continue
            trial = dict(base)
            for v in candidates:
                trial[v] = "marginalize" if v in chosen else "latent"
            if check_theorem1(graph, trial).overall:
                found.append(chosen)
    return [sorted(f) for f in found]


def run_query(graph: LocalIndependenceGraph, query: Mapping) -> dict:
    """Evaluate a JSON query object (``type`` = delta_sep, eliminable,
    independent_censoring or theorem1)."""
    qtype = query.get("type")
    if qtype == "delta_sep":
        res = delta_separated(
            graph, query.get("B", []), query.get("A", []), query.get("C", []),
            method=query.get("method", "reachability"),
        )
        return {"type": qtype, **res.to_dict()}
    if qtype == "eliminable":
        try:
            w = eliminable(graph, query.get("U", []), query["x"], query.get("V0_rest", []))
        except HeuristicInconclusive as exc:
            return {"type": qtype, "eliminable": False, "inconclusive": True, "note": str(exc)}
        return {"type": qtype, "eliminable": w is not None, "witness": w.to_dict() if w else None}
    if qtype == "independent_censoring":
        ok = check_independent_censoring(
            graph, query.get("A", []), query.get("B", []), query.get("scope", "whole_model"),
            censoring=query.get("censoring"),
        )
        return {"type": qtype, "independent": ok}
    if qtype == "theorem1":
        return {"type": qtype, **check_theorem1(graph, query.get("roles")).to_dict()}
    raise InvalidQuery(f"unknown query type {qtype!r}")


__all__ += ["Roles", "OUTCOME_SIDE", "TREATMENT_SIDE", "UnknownNodeError"]
