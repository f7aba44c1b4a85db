"""Aggregation functions, preference sampling and structured weight lattices.

All aggregations reduce an m-objective vector to a scalar to *minimize*.
Maximization problems are negated internally; the `ideal` / `nadir` fields of
a `ScalarizationSpec` are always given in the problem's natural sense.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import BudgetExceededError, ConfigurationError, ContractViolation, DomainError, StateError

METHODS = ("ws", "tch", "mtch", "pbi", "ipbi")

PREF_SUM_TOL = 1e-9


def as_preference(lam, m: int | None = None) -> np.ndarray:
    """Validate and return a preference vector on the simplex."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1:
        raise DomainError(f"preference must be a vector, got shape {lam.shape}")
    if m is not None and lam.shape[0] != m:
        raise DomainError(f"preference has {lam.shape[0]} entries, expected {m}")
    if (lam < 0).any():
        raise DomainError(f"preference entries must be nonnegative: {lam.tolist()}")
    if abs(lam.sum() - 1.0) > 1e-6:
        raise DomainError(f"preference entries must sum to 1, got {lam.sum():.9f}")
    return lam


@dataclass(frozen=True)
class ScalarizationSpec:
    method: str = "tch"
    ideal: float | Sequence[float] = 0.0      # z*, natural sense
    utopia_offset: float = 0.1                # epsilon in z* - epsilon
    pbi_theta: float = 5.0
    nadir: Sequence[float] | None = None      # ipbi only, natural sense
    sense: str = "min"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown aggregation {self.method!r}")
        if self.pbi_theta < 0:
            raise ConfigurationError("pbi_theta must be nonnegative")
        if self.sense not in ("min", "max"):
            raise ConfigurationError(f"sense must be min/max, got {self.sense!r}")

    def to_dict(self) -> dict:
        ideal = self.ideal.tolist() if isinstance(self.ideal, np.ndarray) else self.ideal
        nadir = None if self.nadir is None else list(map(float, self.nadir))
        return {"method": self.method, "ideal": ideal, "utopia_offset": self.utopia_offset,
                "pbi_theta": self.pbi_theta, "nadir": nadir, "sense": self.sense}

    @classmethod
    def from_dict(cls, rec: dict) -> "ScalarizationSpec":
        return cls(method=rec["method"], ideal=rec["ideal"], utopia_offset=rec["utopia_offset"],
                   pbi_theta=rec["pbi_theta"], nadir=rec["nadir"], sense=rec["sense"])


def default_spec(kind: str, m: int, ideal=None, nadir=None) -> ScalarizationSpec:
    """tch for two objectives, ipbi above, maximize sense for knapsacks."""
    method = "tch" if m == 2 else "ipbi"
    sense = "max" if kind == "mokp" else "min"
    return ScalarizationSpec(method=method, ideal=0.0 if ideal is None else ideal,
                             nadir=nadir, sense=sense)


def _oriented(F: np.ndarray, spec: ScalarizationSpec):
    """Map objectives, ideal and nadir into minimization coordinates."""
    ideal = np.broadcast_to(np.asarray(spec.ideal, dtype=np.float64), F.shape[-1:]).copy()
    nadir = None if spec.nadir is None else np.asarray(spec.nadir, dtype=np.float64)
    if spec.sense == "max":
        F = -F
        ideal = -ideal
        nadir = None if nadir is None else -nadir
    return F, ideal, nadir


def scalarize_batch(F, lam, spec: ScalarizationSpec) -> np.ndarray:
    """Aggregate rows of objective vectors; returns one scalar per row."""
    F = np.asarray(F, dtype=np.float64)
    squeeze = F.ndim == 1
    if squeeze:
        F = F[None, :]
    lam = np.asarray(lam, dtype=np.float64)
    if not np.isfinite(F).all():
        raise ContractViolation("objective vectors must be finite")
    F, ideal, nadir = _oriented(F, spec)

    if spec.method == "ws":
        out = F @ lam
    elif spec.method == "tch":
        utopia = ideal - spec.utopia_offset
        out = np.max(lam * np.abs(F - utopia), axis=-1)
    elif spec.method == "mtch":
        if (lam <= 0).any():
            raise DomainError("modified Tchebycheff needs strictly positive weights")
        out = np.max(np.abs(F - ideal) / lam, axis=-1)
    elif spec.method == "pbi":
        norm = np.linalg.norm(lam)
        d1 = np.abs((F - ideal) @ lam) / norm
        proj = d1[:, None] * (lam / norm)
        d2 = np.linalg.norm(F - ideal - proj, axis=-1)
        out = d1 + spec.pbi_theta * d2
    else:  # ipbi
        if nadir is None:
            raise StateError("ipbi needs a nadir point")
        norm = np.linalg.norm(lam)
        d1 = np.abs((nadir - F) @ lam) / norm
        proj = d1[:, None] * (lam / norm)
        d2 = np.linalg.norm(nadir - F - proj, axis=-1)
        out = -d1 + spec.pbi_theta * d2
    if not np.isfinite(out).all():
        raise ContractViolation("scalarization produced a non-finite value")
    return out[0] if squeeze else out


def scalarize(F, lam, spec: ScalarizationSpec) -> float:
    return float(scalarize_batch(np.asarray(F, dtype=np.float64), lam, spec))


def sample_preference(m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the (m-1)-simplex via normalized exponentials."""
    if m < 2:
        raise ConfigurationError("need at least two objectives")
    e = rng.exponential(1.0, size=m)
    return e / e.sum()


def preference_grid(k: int) -> np.ndarray:
    """Two-objective inference grid {i/(k-1)} including both endpoints."""
    if k < 2:
        raise ConfigurationError("grid needs at least two preferences")
    w = np.linspace(0.0, 1.0, k)
    return np.column_stack([w, 1.0 - w])


def das_dennis_count(m: int, p: int) -> int:
    return math.comb(m + p - 1, p)


def das_dennis_weights(m: int, p: int, max_count: int = 2_000_000) -> np.ndarray:
    """All simplex lattice points k/p with sum(k) = p, lexicographically ordered."""
    if p < 1:
        raise ConfigurationError("lattice parameter p must be >= 1")
    count = das_dennis_count(m, p)
    if count > max_count:
        raise BudgetExceededError(f"lattice would hold {count} weights (cap {max_count})")
    out = np.empty((count, m), dtype=np.float64)
    row = 0

    def rec(prefix: list[int], left: int, depth: int):
        nonlocal row
        if depth == m - 1:
            ks = prefix + [left]
            out[row] = np.array(ks, dtype=np.float64) / p
            row += 1
            return
        for k in range(left + 1):
            rec(prefix + [k], left - k, depth + 1)

    rec([], p, 0)
    assert row == count
    return out


def export_weights_csv(path, weights: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for lam in weights:
            writer.writerow([repr(float(v)) for v in lam])


def ideal_nadir(instance=None, mode: str = "fixed_zero", archive=None, m: int | None = None):
    """Ideal / nadir estimates.

    fixed_zero    z* = 0 (valid lower bound for nonnegative lengths), no nadir
    greedy_bound  mokp only: per-objective fractional-knapsack upper bound
    from_archive  componentwise best / worst over an archive's entries
    """
    if mode == "fixed_zero":
        mm = m if m is not None else instance.m
        return np.zeros(mm), None
    if mode == "greedy_bound":
        if instance is None or instance.kind != "mokp":
            raise ConfigurationError("greedy_bound applies to mokp instances")
        return fractional_knapsack_bound(instance), None
    if mode == "from_archive":
        if archive is None or len(archive) == 0:
            raise StateError("from_archive needs a nonempty archive")
        pts = archive.objectives_array()
        if archive.sense == "max":
            return pts.max(axis=0), pts.min(axis=0)
        return pts.min(axis=0), pts.max(axis=0)
    raise ConfigurationError(f"unknown ideal/nadir mode {mode!r}")


def fractional_knapsack_bound(instance) -> np.ndarray:
    """Upper bound per objective: fill by value/weight ratio, last item fractional."""
    bounds = np.empty(instance.m)
    for i in range(instance.m):
        ratio = instance.values[:, i] / instance.weights
        order = np.argsort(-ratio)
        cap = instance.capacity
        total = 0.0
        for j in order:
            w = instance.weights[j]
            if w <= cap:
                total += instance.values[j, i]
                cap -= w
            else:
                total += instance.values[j, i] * (cap / w)
                break
        bounds[i] = total
    return bounds


def resolve_spec(spec: ScalarizationSpec, kind: str, instance=None,
                 objectives: np.ndarray | None = None) -> ScalarizationSpec:
    """Fill instance-dependent gaps: knapsack ideal bounds and ipbi nadirs."""
    if spec.method == "ipbi" and spec.nadir is None:
        if objectives is None:
            raise StateError("ipbi needs sampled objectives to estimate a nadir")
        worst = objectives.min(axis=0) if spec.sense == "max" else objectives.max(axis=0)
        spec = replace(spec, nadir=tuple(worst))
    if (kind == "mokp" and spec.method in ("tch", "mtch")
            and np.isscalar(spec.ideal) and spec.ideal == 0.0 and instance is not None):
        spec = replace(spec, ideal=fractional_knapsack_bound(instance))
    return spec


def grouped_costs(spec: ScalarizationSpec, kind: str, instances, objectives: np.ndarray,
                  lam, group: int) -> np.ndarray:
    """Scalarized cost per rollout row, `group` consecutive rows per instance."""
    costs = np.empty(len(objectives))
    for i, inst in enumerate(instances):
        sl = slice(i * group, (i + 1) * group)
        costs[sl] = scalarize_batch(objectives[sl], lam, resolve_spec(spec, kind, inst, objectives[sl]))
    return costs


def training_spec(kind: str, m: int, instance=None) -> ScalarizationSpec:
    """The spec used for rollout costs during training.

    motsp / mocvrp use tch with z* = 0 and a fixed utopia offset; mokp uses
    tch on negated rewards with the fractional greedy bound as ideal.  For
    three or more objectives ipbi is used with a per-batch nadir filled in by
    the trainer.
    """
    if m >= 3:
        return ScalarizationSpec(method="ipbi", ideal=0.0, nadir=None,
                                 sense="max" if kind == "mokp" else "min")
    if kind == "mokp":
        ideal = fractional_knapsack_bound(instance) if instance is not None else 0.0
        return ScalarizationSpec(method="tch", ideal=ideal, sense="max")
    return ScalarizationSpec(method="tch", ideal=0.0, sense="min")
