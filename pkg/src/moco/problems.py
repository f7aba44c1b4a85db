"""Problem definitions for the three supported combinatorial families.

motsp   minimize m Euclidean tour lengths; node j carries one 2-D coordinate
        per objective, all sampled uniformly in the unit square.
mocvrp  two objectives, minimize (total route length, longest route length);
        customers carry normalized demands, the vehicle capacity is 1 after
        normalization and split delivery is not allowed.
mokp    maximize m value totals under a single weight capacity.

Every instance and solution is immutable after construction, so all
operations here are reentrant and safe to call from parallel workers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import BudgetExceededError, ConfigurationError, InfeasibleSolutionError
from .metrics import ParetoArchive, nondominated_indices

KINDS = ("motsp", "mocvrp", "mokp")

# Vehicle capacities before normalization, interpolated between the published
# anchor sizes (20, 30), (50, 40), (100, 50) and clamped outside.
_CVRP_ANCHORS = ((20, 30.0), (50, 40.0), (100, 50.0))


def cvrp_capacity(n: int) -> float:
    if n <= _CVRP_ANCHORS[0][0]:
        return _CVRP_ANCHORS[0][1]
    for (n0, d0), (n1, d1) in zip(_CVRP_ANCHORS, _CVRP_ANCHORS[1:]):
        if n <= n1:
            return round(d0 + (d1 - d0) * (n - n0) / (n1 - n0))
    return _CVRP_ANCHORS[-1][1]


def mokp_capacity(n: int) -> float:
    """Knapsack capacity: n/4 capped at 25 (12.5 at n=50, 25 at n>=100)."""
    return min(25.0, n / 4.0)


@dataclass(frozen=True)
class ProblemInstance:
    kind: str
    n: int
    m: int
    coords: np.ndarray | None = None    # motsp (n, 2m) / mocvrp (n, 2)
    depot: np.ndarray | None = None     # mocvrp (2,)
    demands: np.ndarray | None = None   # mocvrp (n,), normalized by capacity
    values: np.ndarray | None = None    # mokp (n, m)
    weights: np.ndarray | None = None   # mokp (n,)
    capacity: float | None = None       # mocvrp: 1.0 / mokp: W
    seed: int | None = None

    @property
    def maximize(self) -> bool:
        return self.kind == "mokp"

    def model_inputs(self) -> np.ndarray:
        """Per-node feature rows fed to the encoder (depot row first for cvrp)."""
        if self.kind == "motsp":
            return self.coords
        if self.kind == "mocvrp":
            depot = np.concatenate([self.depot, [0.0]])
            nodes = np.column_stack([self.coords, self.demands])
            return np.vstack([depot, nodes])
        return np.column_stack([self.values, self.weights])


@dataclass(frozen=True)
class Solution:
    kind: str
    objectives: np.ndarray
    tour: tuple[int, ...] | None = None
    routes: tuple[tuple[int, ...], ...] | None = None
    items: tuple[int, ...] | None = None

    def flat(self) -> list:
        if self.kind == "motsp":
            return list(self.tour)
        if self.kind == "mocvrp":
            return [list(r) for r in self.routes]
        return list(self.items)


def canonical_tour(tour: Sequence[int]) -> tuple[int, ...]:
    """Rotate to start at node 0, orient so the second node is the smaller neighbor."""
    tour = list(tour)
    i = tour.index(0)
    rotated = tour[i:] + tour[:i]
    if len(rotated) > 2 and rotated[1] > rotated[-1]:
        rotated = [rotated[0]] + rotated[1:][::-1]
    return tuple(rotated)


# ---------------------------------------------------------------------------
# sampling


def sample_instance(kind: str, n: int, m: int, seed: int) -> ProblemInstance:
    """Draw one random instance; deterministic per (kind, n, m, seed)."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown problem kind {kind!r}")
    if n < 2 or m < 2:
        raise ConfigurationError(f"need n >= 2 and m >= 2, got n={n}, m={m}")
    if kind == "mocvrp" and m != 2:
        raise ConfigurationError("mocvrp supports exactly m=2 (total length, longest route)")
    rng = np.random.default_rng(np.random.SeedSequence((_kind_tag(kind), n, m, seed)))

    if kind == "motsp":
        coords = rng.uniform(size=(n, 2 * m))
        return ProblemInstance(kind, n, m, coords=coords, seed=seed)

    if kind == "mocvrp":
        depot = rng.uniform(size=2)
        coords = rng.uniform(size=(n, 2))
        raw = rng.integers(1, 10, size=n).astype(np.float64)
        cap = cvrp_capacity(n)
        return ProblemInstance(kind, n, m, coords=coords, depot=depot,
                               demands=raw / cap, capacity=1.0, seed=seed)

    values = rng.uniform(size=(n, m))
    weights = rng.uniform(size=n)
    W = mokp_capacity(n)
    return ProblemInstance(kind, n, m, values=values, weights=weights, capacity=W, seed=seed)


def _kind_tag(kind: str) -> int:
    return KINDS.index(kind)


def sample_clustered_motsp(n: int, m: int, seed: int, blobs: int = 3, spread: float = 0.06) -> ProblemInstance:
    """Out-of-distribution MOTSP: nodes drawn from Gaussian blobs per objective."""
    rng = np.random.default_rng(np.random.SeedSequence((97, n, m, seed)))
    cols = []
    for _ in range(m):
        centers = rng.uniform(0.15, 0.85, size=(blobs, 2))
        assign = rng.integers(0, blobs, size=n)
        pts = np.clip(centers[assign] + rng.normal(scale=spread, size=(n, 2)), 0.0, 1.0)
        cols.append(pts)
    return ProblemInstance("motsp", n, m, coords=np.hstack(cols), seed=seed)


# ---------------------------------------------------------------------------
# evaluation


def _tsp_distance_matrices(inst: ProblemInstance) -> np.ndarray:
    """(m, n, n) Euclidean distances, one matrix per objective."""
    mats = []
    for i in range(inst.m):
        xy = inst.coords[:, 2 * i:2 * i + 2].astype(np.float64)
        diff = xy[:, None, :] - xy[None, :, :]
        mats.append(np.sqrt((diff ** 2).sum(axis=2)))
    return np.stack(mats)


def _route_length(inst: ProblemInstance, route: Sequence[int]) -> float:
    pts = np.vstack([inst.depot, inst.coords[list(route)], inst.depot]).astype(np.float64)
    return float(np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1)).sum())


def evaluate(inst: ProblemInstance, solution) -> np.ndarray:
    """Objective vector of a structurally valid solution (64-bit arithmetic)."""
    if inst.kind == "motsp":
        tour = solution.tour if isinstance(solution, Solution) else tuple(solution)
        if sorted(tour) != list(range(inst.n)):
            raise InfeasibleSolutionError(f"tour is not a permutation of 0..{inst.n - 1}")
        D = _tsp_distance_matrices(inst)
        idx = np.array(tour)
        nxt = np.roll(idx, -1)
        return D[:, idx, nxt].sum(axis=1)

    if inst.kind == "mocvrp":
        routes = solution.routes if isinstance(solution, Solution) else tuple(map(tuple, solution))
        seen = [c for r in routes for c in r]
        if sorted(seen) != list(range(inst.n)):
            raise InfeasibleSolutionError("routes must cover every customer exactly once")
        for r in routes:
            load = inst.demands[list(r)].sum()
            if load > 1.0 + 1e-9:
                raise InfeasibleSolutionError(f"route {list(r)} demand {load:.6f} exceeds capacity 1")
        lengths = np.array([_route_length(inst, r) for r in routes])
        return np.array([lengths.sum(), lengths.max()])

    items = solution.items if isinstance(solution, Solution) else tuple(solution)
    if len(set(items)) != len(items):
        raise InfeasibleSolutionError("duplicate items selected")
    sel = list(items)
    if sel and inst.weights[sel].sum() > inst.capacity + 1e-9:
        raise InfeasibleSolutionError(
            f"selected weight {inst.weights[sel].sum():.6f} exceeds capacity {inst.capacity}")
    if not sel:
        return np.zeros(inst.m)
    return inst.values[sel].sum(axis=0).astype(np.float64)


def make_solution(inst: ProblemInstance, structure) -> Solution:
    """Bundle a raw structure with its objective vector."""
    obj = evaluate(inst, structure)
    if inst.kind == "motsp":
        return Solution(inst.kind, obj, tour=canonical_tour(structure))
    if inst.kind == "mocvrp":
        return Solution(inst.kind, obj, routes=tuple(tuple(r) for r in structure))
    return Solution(inst.kind, obj, items=tuple(sorted(structure)))


# ---------------------------------------------------------------------------
# construction state and masking


@dataclass
class ConstructionState:
    """Mutable per-rollout state while a solution is being built."""
    inst: ProblemInstance
    visited: np.ndarray = field(default=None)
    order: list[int] = field(default_factory=list)
    routes: list[list[int]] = field(default_factory=list)
    remaining: float = 1.0
    position: int = -1          # -1 = depot / no selection yet
    done: bool = False

    def __post_init__(self):
        if self.visited is None:
            self.visited = np.zeros(self.inst.n, dtype=bool)
        if self.inst.kind == "mokp":
            self.remaining = float(self.inst.capacity)
        if self.inst.kind == "mocvrp":
            self.routes = [[]]


def feasible_mask(inst: ProblemInstance, state: ConstructionState) -> np.ndarray:
    """Admissible next actions; all-false signals depot return (cvrp) / stop (mokp)."""
    if inst.kind == "motsp":
        return ~state.visited
    if inst.kind == "mocvrp":
        return ~state.visited & (inst.demands <= state.remaining + 1e-12)
    return ~state.visited & (inst.weights <= state.remaining + 1e-12)


def reset_vehicle(state: ConstructionState) -> None:
    """Implicit depot return: capacity refills, a new route opens."""
    if state.routes and state.routes[-1]:
        state.routes.append([])
    state.remaining = 1.0
    state.position = -1


def apply_action(state: ConstructionState, action: int) -> None:
    inst = state.inst
    if state.visited[action]:
        raise InfeasibleSolutionError(f"action {action} already taken")
    state.visited[action] = True
    state.order.append(action)
    state.position = action
    if inst.kind == "mocvrp":
        state.remaining -= float(inst.demands[action])
        state.routes[-1].append(action)
        if state.visited.all():
            state.done = True
    elif inst.kind == "mokp":
        state.remaining -= float(inst.weights[action])
        if not feasible_mask(inst, state).any():
            state.done = True
    else:
        if state.visited.all():
            state.done = True


def finish_solution(state: ConstructionState) -> Solution:
    inst = state.inst
    if inst.kind == "motsp":
        return make_solution(inst, state.order)
    if inst.kind == "mocvrp":
        return make_solution(inst, [r for r in state.routes if r])
    return make_solution(inst, state.order)


def random_rollout(inst: ProblemInstance, rng: np.random.Generator) -> Solution:
    """Uniformly sample admissible actions until completion (policy-free)."""
    state = ConstructionState(inst)
    while not state.done:
        mask = feasible_mask(inst, state)
        if not mask.any():
            if inst.kind == "mocvrp" and not state.visited.all():
                reset_vehicle(state)
                continue
            break
        action = int(rng.choice(np.flatnonzero(mask)))
        apply_action(state, action)
    return finish_solution(state)


# ---------------------------------------------------------------------------
# instance augmentation


_FLIPS = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (x, 1 - y),
    lambda x, y: (y, 1 - x),
    lambda x, y: (1 - x, y),
    lambda x, y: (1 - y, x),
    lambda x, y: (1 - x, 1 - y),
    lambda x, y: (1 - y, 1 - x),
)


def apply_transform(points: np.ndarray, t: int) -> np.ndarray:
    x, y = _FLIPS[t](points[..., 0], points[..., 1])
    return np.stack([x, y], axis=-1)


def augment(inst: ProblemInstance) -> list[ProblemInstance]:
    """Distance-preserving coordinate transforms: 8^m variants for motsp,
    8 for mocvrp, none for mokp (its objectives carry no geometry)."""
    if inst.kind == "mokp":
        return []
    if inst.kind == "mocvrp":
        out = []
        for t in range(8):
            out.append(replace(
                inst,
                coords=apply_transform(inst.coords, t),
                depot=apply_transform(inst.depot[None, :], t)[0],
            ))
        return out
    out = []
    for combo in itertools.product(range(8), repeat=inst.m):
        cols = [apply_transform(inst.coords[:, 2 * i:2 * i + 2], t) for i, t in enumerate(combo)]
        out.append(replace(inst, coords=np.hstack(cols)))
    return out


# ---------------------------------------------------------------------------
# exact enumeration (tiny sizes)


def search_space_size(inst: ProblemInstance) -> float:
    if inst.kind == "motsp":
        return math.factorial(inst.n - 1) / 2 if inst.n > 2 else 1
    if inst.kind == "mokp":
        return 2.0 ** inst.n
    # Bell number upper bound for route partitions
    bell = [1]
    for _ in range(inst.n):
        row = [bell[-1]]
        for v in bell:
            row.append(row[-1] + v)
        bell = row
    return float(bell[0])


def enumerate_exact(inst: ProblemInstance, limit: float = 2e6) -> ParetoArchive:
    """Exact Pareto front by exhaustive search.

    Refuses with the estimated candidate count when the search space exceeds
    `limit` (and for mocvrp above n=8, where partition enumeration explodes).
    """
    size = search_space_size(inst)
    if size > limit or (inst.kind == "mocvrp" and inst.n > 8):
        raise BudgetExceededError(
            f"search space of ~{size:.3g} candidates exceeds the limit of {limit:.3g}")
    if inst.kind == "motsp":
        return _enumerate_motsp(inst)
    if inst.kind == "mokp":
        return _enumerate_mokp(inst)
    return _enumerate_mocvrp(inst)


def _enumerate_motsp(inst: ProblemInstance) -> ParetoArchive:
    D = _tsp_distance_matrices(inst)
    n = inst.n
    tours = []
    for perm in itertools.permutations(range(1, n)):
        if n > 2 and perm[0] > perm[-1]:
            continue  # mirror of an already-seen tour
        tours.append((0,) + perm)
    tour_arr = np.array(tours)
    nxt = np.roll(tour_arr, -1, axis=1)
    objs = D[:, tour_arr, nxt].sum(axis=2).T  # (n_tours, m)
    return _front_archive(objs, [Solution("motsp", objs[i], tour=tours[i]) for i in range(len(tours))],
                          sense="min")


def _enumerate_mokp(inst: ProblemInstance) -> ParetoArchive:
    n = inst.n
    bits = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)
    feasible = bits @ inst.weights <= inst.capacity + 1e-12
    bits = bits[feasible]
    objs = bits @ inst.values
    keep = nondominated_indices(objs, sense="max")
    front = objs[keep]
    arch = ParetoArchive(sense="max")
    for row, j in zip(front, keep):
        items = tuple(np.flatnonzero(bits[j] > 0.5).tolist())
        arch.offer(row, solution=Solution("mokp", row, items=items))
    return arch


def _set_partitions(items: list[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _best_route_length(inst: ProblemInstance, block: tuple[int, ...], cache: dict) -> float:
    key = frozenset(block)
    if key not in cache:
        best = np.inf
        items = list(block)
        for perm in itertools.permutations(items):
            if len(perm) > 1 and perm[0] > perm[-1]:
                continue
            best = min(best, _route_length(inst, perm))
        cache[key] = best
    return cache[key]


def _enumerate_mocvrp(inst: ProblemInstance) -> ParetoArchive:
    cache: dict = {}
    objs, sols = [], []
    for part in _set_partitions(list(range(inst.n))):
        if any(inst.demands[b].sum() > 1.0 + 1e-9 for b in part):
            continue
        lengths = [_best_route_length(inst, tuple(b), cache) for b in part]
        objs.append((sum(lengths), max(lengths)))
        sols.append(tuple(tuple(b) for b in part))
    objs = np.array(objs)
    return _front_archive(objs, [Solution("mocvrp", objs[i], routes=sols[i]) for i in range(len(sols))],
                          sense="min")


def _front_archive(objs: np.ndarray, solutions: list[Solution], sense: str) -> ParetoArchive:
    arch = ParetoArchive(sense=sense)
    for j in nondominated_indices(objs, sense=sense):
        arch.offer(objs[j], solution=solutions[j])
    return arch


# ---------------------------------------------------------------------------
# JSON-lines persistence


def instance_to_dict(inst: ProblemInstance) -> dict:
    rec: dict = {"kind": inst.kind, "m": inst.m, "n": inst.n}
    if inst.seed is not None:
        rec["seed"] = inst.seed
    if inst.kind == "motsp":
        rec["coords"] = inst.coords.tolist()
    elif inst.kind == "mocvrp":
        rec.update(coords=inst.coords.tolist(), depot=inst.depot.tolist(),
                   demands=inst.demands.tolist(), capacity=inst.capacity)
    else:
        rec.update(values=inst.values.tolist(), weights=inst.weights.tolist(),
                   capacity=inst.capacity)
    return rec


def instance_from_dict(rec: dict) -> ProblemInstance:
    kind = rec["kind"]
    if kind not in KINDS:
        raise ConfigurationError(f"unknown problem kind {kind!r}")
    common = dict(kind=kind, n=int(rec["n"]), m=int(rec["m"]), seed=rec.get("seed"))
    if kind == "motsp":
        return ProblemInstance(**common, coords=np.asarray(rec["coords"], dtype=np.float64))
    if kind == "mocvrp":
        return ProblemInstance(**common,
                               coords=np.asarray(rec["coords"], dtype=np.float64),
                               depot=np.asarray(rec["depot"], dtype=np.float64),
                               demands=np.asarray(rec["demands"], dtype=np.float64),
                               capacity=float(rec.get("capacity", 1.0)))
    return ProblemInstance(**common,
                           values=np.asarray(rec["values"], dtype=np.float64),
                           weights=np.asarray(rec["weights"], dtype=np.float64),
                           capacity=float(rec["capacity"]))


def save_instances(path, instances: Iterable[ProblemInstance]) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst)) + "\n")


def load_instances(path) -> list[ProblemInstance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(instance_from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: malformed instance line: {exc}") from exc
    return out


def solution_record(instance_id, lam, solution: Solution) -> dict:
    return {
        "instance_id": instance_id,
        "lambda": list(map(float, lam)) if lam is not None else None,
        "solution": solution.flat(),
        "objectives": solution.objectives.tolist(),
    }
