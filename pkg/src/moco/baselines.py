"""Classical weight-sum decomposition baselines.

Each solver minimizes (or maximizes) the lambda-weighted single objective and
the sweep harness unions the per-weight solutions into a Pareto archive.
Subproblems across weights are independent and safe to run in parallel.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BudgetExceededError, ConfigurationError
from .metrics import ParetoArchive, metric_report, nondominated_indices
from .problems import ProblemInstance, Solution, _tsp_distance_matrices, make_solution

SOLVERS = ("tsp_nn_2opt", "kp_greedy", "kp_dp", "cvrp_sweep_2opt")

DP_WEIGHT_SCALE = 10_000  # item weights are rounded onto this integer grid


@dataclass(frozen=True)
class BaselineSpec:
    solver: str
    weights: np.ndarray               # one preference per row
    budget: int = 1_000_000           # per-subproblem improvement-move cap

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if len(self.weights) == 0:
            raise ConfigurationError("weight set must be nonempty")
        if self.budget <= 0:
            raise ConfigurationError("budget must be positive")


# ---------------------------------------------------------------------------
# TSP: nearest neighbor + first-improvement 2-opt


def _weighted_tsp_matrix(inst: ProblemInstance, lam) -> np.ndarray:
    D = _tsp_distance_matrices(inst)
    return np.tensordot(np.asarray(lam, dtype=np.float64), D, axes=1)


def nearest_neighbor_tour(W: np.ndarray, start: int = 0) -> list[int]:
    n = W.shape[0]
    unvisited = np.ones(n, dtype=bool)
    unvisited[start] = False
    tour = [start]
    for _ in range(n - 1):
        row = W[tour[-1]].copy()
        row[~unvisited] = np.inf
        nxt = int(np.argmin(row))
        unvisited[nxt] = False
        tour.append(nxt)
    return tour


def two_opt(tour: list[int], W: np.ndarray, budget: int = 1_000_000) -> tuple[list[int], int]:
    """First-improvement 2-opt until local optimum or the move budget runs out."""
    n = len(tour)
    tour = list(tour)
    moves = 0
    improved = True
    while improved and moves < budget:
        improved = False
        for i in range(n - 1):
            a, b = tour[i], tour[(i + 1) % n]
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue  # would only reverse the whole tour
                c, d = tour[j], tour[(j + 1) % n]
                delta = W[a, c] + W[b, d] - W[a, b] - W[c, d]
                if delta < -1e-12:
                    tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                    moves += 1
                    improved = True
                    break
            if improved:
                break
    return tour, moves


def weighted_tour_cost(tour: Sequence[int], W: np.ndarray) -> float:
    idx = np.asarray(tour)
    return float(W[idx, np.roll(idx, -1)].sum())


def solve_weightsum_tsp(inst: ProblemInstance, lam, budget: int = 1_000_000) -> Solution:
    if inst.kind != "motsp":
        raise ConfigurationError("solve_weightsum_tsp expects a motsp instance")
    W = _weighted_tsp_matrix(inst, lam)
    seed_tour = nearest_neighbor_tour(W)
    improved, _ = two_opt(seed_tour, W, budget=budget)
    return make_solution(inst, improved)


# ---------------------------------------------------------------------------
# knapsack: ratio greedy and capacity-grid dynamic program


def solve_weightsum_kp(inst: ProblemInstance, lam, method: str = "greedy") -> Solution:
    if inst.kind != "mokp":
        raise ConfigurationError("solve_weightsum_kp expects a mokp instance")
    lam = np.asarray(lam, dtype=np.float64)
    merged = inst.values @ lam
    if method == "greedy":
        order = np.argsort(-(merged / inst.weights), kind="stable")
        cap = inst.capacity
        chosen = []
        for j in order:
            if inst.weights[j] <= cap + 1e-12:
                chosen.append(int(j))
                cap -= inst.weights[j]
        return make_solution(inst, chosen)
    if method != "dp":
        raise ConfigurationError(f"unknown knapsack method {method!r}")

    wi = np.round(inst.weights * DP_WEIGHT_SCALE).astype(np.int64)
    cap = int(np.round(inst.capacity * DP_WEIGHT_SCALE))
    if cap > 50_000_000:
        raise BudgetExceededError(
            f"dp table needs {cap} cells at scale {DP_WEIGHT_SCALE}; reduce the scale")
    dp = np.zeros(cap + 1)
    take = np.zeros((inst.n, cap + 1), dtype=bool)
    for j in range(inst.n):
        w = int(wi[j])
        if w > cap:
            continue
        cand = dp[:cap + 1 - w] + merged[j]
        better = cand > dp[w:] + 1e-15
        take[j, w:] = better
        dp[w:] = np.where(better, cand, dp[w:])
    # trace back the winning subset
    chosen = []
    c = cap
    for j in range(inst.n - 1, -1, -1):
        if take[j, c]:
            chosen.append(j)
            c -= int(wi[j])
    true_weight = inst.weights[chosen].sum() if chosen else 0.0
    if true_weight > inst.capacity:  # integer rounding pushed it over; drop cheapest
        chosen.sort(key=lambda j: merged[j])
        while chosen and inst.weights[chosen].sum() > inst.capacity:
            chosen.pop(0)
    return make_solution(inst, sorted(chosen))


# ---------------------------------------------------------------------------
# CVRP: angular sweep construction + intra-route 2-opt


def _route_cost_matrix(inst: ProblemInstance) -> np.ndarray:
    """(n+1, n+1) distances with the depot as row/col 0."""
    pts = np.vstack([inst.depot, inst.coords]).astype(np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def _sweep_partition(inst: ProblemInstance, offset: int, order: np.ndarray) -> list[list[int]]:
    rotated = np.roll(order, -offset)
    routes, load, current = [], 0.0, []
    for c in rotated:
        d = inst.demands[c]
        if load + d > 1.0 + 1e-12:
            routes.append(current)
            current, load = [], 0.0
        current.append(int(c))
        load += d
    if current:
        routes.append(current)
    return routes


def _improve_route(route: list[int], D: np.ndarray, budget: int) -> list[int]:
    if len(route) < 3:
        return route
    path = [0] + [c + 1 for c in route] + [0]
    moves = 0
    improved = True
    while improved and moves < budget:
        improved = False
        for i in range(len(path) - 2):
            for j in range(i + 2, len(path) - 1):
                a, b, c, d = path[i], path[i + 1], path[j], path[j + 1]
                delta = D[a, c] + D[b, d] - D[a, b] - D[c, d]
                if delta < -1e-12:
                    path[i + 1:j + 1] = path[i + 1:j + 1][::-1]
                    improved = True
                    moves += 1
                    break
            if improved:
                break
    return [p - 1 for p in path[1:-1]]


def solve_weightsum_cvrp(inst: ProblemInstance, lam, budget: int = 1_000_000) -> Solution:
    """Sweep construction over all angular offsets, 2-opt per route, best by lam.

    The weight-sum of (total length, longest route) is a heuristic scalarization
    only; this stand-in is labeled as such in reports.
    """
    if inst.kind != "mocvrp":
        raise ConfigurationError("solve_weightsum_cvrp expects a mocvrp instance")
    lam = np.asarray(lam, dtype=np.float64)
    D = _route_cost_matrix(inst)
    rel = inst.coords - inst.depot
    order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]))
    best, best_score = None, np.inf
    for offset in range(inst.n):
        routes = [_improve_route(r, D, budget) for r in _sweep_partition(inst, offset, order)]
        sol = make_solution(inst, routes)
        score = float(sol.objectives @ lam)
        if score < best_score:
            best, best_score = sol, score
    return best


# ---------------------------------------------------------------------------
# sweep harness


def solve_weightsum(inst: ProblemInstance, lam, spec: BaselineSpec) -> Solution:
    if spec.solver == "tsp_nn_2opt":
        return solve_weightsum_tsp(inst, lam, budget=spec.budget)
    if spec.solver == "kp_greedy":
        return solve_weightsum_kp(inst, lam, method="greedy")
    if spec.solver == "kp_dp":
        return solve_weightsum_kp(inst, lam, method="dp")
    return solve_weightsum_cvrp(inst, lam, budget=spec.budget)


def build_baseline_front(inst: ProblemInstance, spec: BaselineSpec) -> tuple[ParetoArchive, dict]:
    """Non-dominated union of per-weight solutions plus a timing report."""
    t0 = time.perf_counter()
    arch = ParetoArchive(sense="max" if inst.maximize else "min")
    for lam in spec.weights:
        sol = solve_weightsum(inst, lam, spec)
        arch.offer(sol.objectives, preference=np.asarray(lam, dtype=np.float64), solution=sol)
    elapsed = time.perf_counter() - t0
    pts = arch._min_sense_points()
    ref = pts.max(axis=0)
    report = metric_report(f"weight-sum {spec.solver} ({len(spec.weights)} weights)",
                           pts, ref, runtime_s=elapsed)
    report["n_weights"] = len(spec.weights)
    report["dp_weight_scale"] = DP_WEIGHT_SCALE if spec.solver == "kp_dp" else None
    return arch, report


def convex_hull_vertices(points: np.ndarray, sense: str = "max") -> np.ndarray:
    """Extreme points attainable by weight-sum scalarization (2-D objective space).

    For maximization these are the strict-turn vertices of the upper-right hull,
    i.e. exactly the points optimal for some nonnegative, nonzero weight.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[1] != 2:
        raise ConfigurationError("hull extraction implemented for two objectives")
    front = pts[nondominated_indices(pts, sense=sense)]
    sign = -1.0 if sense == "max" else 1.0
    work = sign * front
    work = work[np.lexsort((work[:, 1], work[:, 0]))]
    hull: list[np.ndarray] = []
    for p in work:  # lower hull via monotone chain, strict left turns only
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
            if cross <= 1e-12:
                hull.pop()
            else:
                break
        hull.append(p)
    return sign * np.array(hull)
