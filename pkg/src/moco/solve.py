"""Shared inference driver: preference sweeps, augmentation, front assembly."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .metrics import ParetoArchive, filtered_hypervolume
from .model import ModelConfig, decoder_params, encode_batch, rollout_batch
from .problems import ProblemInstance, Solution, augment, make_solution
from .scalarize import (ScalarizationSpec, fractional_knapsack_bound, grouped_costs,
                        resolve_spec, scalarize)


@dataclass
class PreferenceResult:
    lam: np.ndarray
    solution: Solution
    scalarized_cost: float


@dataclass
class SolveResult:
    """Per-instance sweep output: best solution per preference plus the
    archive of every candidate encountered (all starts, all transforms)."""
    archive: ParetoArchive
    per_preference: list[PreferenceResult] = field(default_factory=list)
    runtime_s: float = 0.0


def check_kind(meta: dict, instance: ProblemInstance) -> None:
    if meta.get("kind") != instance.kind or int(meta.get("m", instance.m)) != instance.m:
        raise ConfigurationError(
            f"checkpoint is for {meta.get('kind')}/m={meta.get('m')}, "
            f"instance is {instance.kind}/m={instance.m}")


def solve_instance(instance: ProblemInstance, params: dict[str, T.Array], cfg: ModelConfig,
                   prefs: np.ndarray, spec: ScalarizationSpec,
                   use_aug: bool = False, mode: str = "greedy",
                   starts: int | None = None, samples: int | None = None,
                   rng: np.random.Generator | None = None) -> SolveResult:
    """Sweep `prefs`; keep the scalarized-best candidate per preference.

    With augmentation every transformed copy is rolled out and candidates are
    evaluated against the original instance (transforms preserve objectives).
    """
    t0 = time.perf_counter()
    variants = augment(instance) if use_aug else [instance]
    if use_aug:
        variants[0] = instance  # the identity transform is the instance itself
    if samples is not None:
        mode, n_roll = "sample", samples
        if rng is None:
            rng = np.random.default_rng(0)
    else:
        n_roll = starts if starts is not None else instance.n

    enc = encode_batch(variants, params, cfg)  # transforms share kind and size
    archive = ParetoArchive(sense="max" if instance.maximize else "min")
    result = SolveResult(archive=archive)

    for lam in prefs:
        bundle = decoder_params(lam, params, cfg)
        routs, _ = rollout_batch(variants, enc, bundle, params, cfg,
                                 mode=mode, starts=min(n_roll, instance.n), rng=rng)
        candidates = [r.solution if len(variants) == 1 else _reevaluate(instance, r.solution)
                      for r in routs]
        objs = np.stack([s.objectives for s in candidates])
        costs = grouped_costs(spec, instance.kind, [instance], objs, lam, len(candidates))
        best = int(np.argmin(costs))
        result.per_preference.append(PreferenceResult(
            lam=np.asarray(lam, dtype=np.float64), solution=candidates[best],
            scalarized_cost=float(costs[best])))
        for sol in candidates:
            archive.offer(sol.objectives, preference=lam, solution=sol)
    result.runtime_s = time.perf_counter() - t0
    return result


def _reevaluate(instance: ProblemInstance, sol: Solution) -> Solution:
    if instance.kind == "motsp":
        return make_solution(instance, sol.tour)
    if instance.kind == "mocvrp":
        return make_solution(instance, sol.routes)
    return make_solution(instance, sol.items)


def scalarized_cost_of(instance: ProblemInstance, spec: ScalarizationSpec, lam,
                       objectives) -> float:
    full = resolve_spec(spec, instance.kind, instance,
                        np.asarray(objectives, dtype=np.float64)[None, :])
    return scalarize(objectives, lam, full)


def front_metrics(instance: ProblemInstance, archive: ParetoArchive) -> dict:
    """Per-instance hypervolume summary with a reference from the archive itself.

    Maximization objectives are shifted into nonnegative regrets
    (upper bound - value) so the normalized value stays in [0, 1].
    """
    pts = archive.objectives_array()
    if len(pts) == 0:
        return {"hv": 0.0, "normalized_hv": None, "reference_point": None, "n_front": 0}
    if instance.maximize:
        bound = fractional_knapsack_bound(instance)
        work = bound[None, :] - pts
    else:
        work = pts
    ref = work.max(axis=0)
    hv = filtered_hypervolume(work, ref)
    denom = float(np.prod(ref)) if bool(np.all(ref > 0)) else None
    return {
        "hv": hv,
        "normalized_hv": hv / denom if denom else None,
        "reference_point": ref.tolist(),
        "n_front": len(pts),
    }
