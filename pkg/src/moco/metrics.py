"""Pareto dominance predicates, non-dominated archives and set-quality metrics.

All metric functions assume minimization internally; maximization inputs are
negated at the archive boundary and un-negated for reporting.  Hypervolume is
exact for two and three objectives and Monte-Carlo estimated above that.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import ContractViolation, DomainError

MC_SAMPLES = 10**6
MC_SEED = 20240 + 817  # fixed documented seed for reproducible estimates


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def dominates(a, b, sense: str = "min") -> bool:
    """True iff `a` is no worse than `b` everywhere and strictly better once."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"objective vectors differ in length: {a.shape} vs {b.shape}")
    if sense == "max":
        a, b = -a, -b
    return bool(np.all(a <= b) and np.any(a < b))


def weakly_dominates(a, b, sense: str = "min") -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if sense == "max":
        a, b = -a, -b
    return bool(np.all(a <= b))


def eps_dominates(a, b, eps: float) -> bool:
    """Multiplicative epsilon-dominance for nonnegative minimization objectives."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if eps < 0:
        raise DomainError(f"epsilon must be nonnegative, got {eps}")
    if (a < 0).any() or (b < 0).any():
        raise DomainError("multiplicative epsilon-dominance needs nonnegative objectives")
    return bool(np.all(a <= (1.0 + eps) * b))


def is_eps_approx_set(candidates, reference, eps: float):
    """Does every reference point have an eps-dominating candidate?

    Returns (ok, witness): on failure the witness is a reference point that no
    candidate eps-dominates.
    """
    ref = _as_points(reference)
    cand = _as_points(candidates) if len(candidates) else np.empty((0, ref.shape[1]))
    for x in ref:
        if not any(eps_dominates(p, x, eps) for p in cand):
            return False, x
    return True, None


def min_eps_approx(candidates, reference) -> float:
    """Smallest eps for which `candidates` is an eps-approximate set of `reference`."""
    ref = _as_points(reference)
    cand = _as_points(candidates)
    if len(cand) == 0:
        return np.inf
    worst = 0.0
    for x in ref:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(x > 0, cand / x, np.where(cand <= 0, 1.0, np.inf))
        best = float(np.min(np.max(ratios, axis=1)))
        worst = max(worst, best - 1.0)
    return max(worst, 0.0)


def nondominated_indices(points, sense: str = "min") -> list[int]:
    """Indices of the non-dominated, deduplicated subset, first occurrence first."""
    pts = _as_points(points)
    if sense == "max":
        pts = -pts
    n, m = pts.shape
    if n == 0:
        return []

    first_seen: dict[bytes, int] = {}
    for i, row in enumerate(pts):
        first_seen.setdefault(row.tobytes(), i)
    uniq = sorted(first_seen.items(), key=lambda kv: kv[1])
    upts = np.array([np.frombuffer(k, dtype=np.float64) for k, _ in uniq])
    uidx = [i for _, i in uniq]

    if m == 2:
        keep = _front2_mask(upts)
    else:
        keep = _front_mask_general(upts)
    return [uidx[j] for j in range(len(uidx)) if keep[j]]


def _front2_mask(pts: np.ndarray) -> np.ndarray:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    keep = np.zeros(len(pts), dtype=bool)
    best2 = np.inf
    for j in order:
        if pts[j, 1] < best2:
            keep[j] = True
            best2 = pts[j, 1]
    return keep

def _front_mask_general(pts: np.ndarray) -> np.ndarray:
    order = np.argsort(pts.sum(axis=1), kind="stable")
    kept: list[int] = []
    keep = np.zeros(len(pts), dtype=bool)
    for j in order:
        p = pts[j]
        if kept:
            K = pts[kept]
            dominated = np.any(np.all(K <= p, axis=1) & np.any(K < p, axis=1))
            if dominated:
                continue
        kept.append(j)
        keep[j] = True
    return keep


def nondominated_filter(points, sense: str = "min") -> np.ndarray:
    pts = _as_points(points)
    return pts[nondominated_indices(pts, sense=sense)]


# ---------------------------------------------------------------------------
# hypervolume


def _check_ref(pts: np.ndarray, ref: np.ndarray) -> None:
    bad = np.where(np.any(pts > ref, axis=1))[0]
    if bad.size:
        raise ContractViolation(
            f"point {pts[bad[0]].tolist()} does not dominate the reference point {ref.tolist()}"
        )


def _hv2(pts: np.ndarray, ref: np.ndarray) -> float:
    front = pts[nondominated_indices(pts)]
    order = np.lexsort((front[:, 1], front[:, 0]))
    front = front[order]
    vol = 0.0
    prev_y = ref[1]
    for x, y in front:
        vol += (ref[0] - x) * (prev_y - y)
        prev_y = y
    return vol


def _hv3(pts: np.ndarray, ref: np.ndarray) -> float:
    """Dimension sweep over the sorted third axis with incremental 2-D fronts."""
    front = pts[nondominated_indices(pts)]
    order = np.argsort(front[:, 2], kind="stable")
    front = front[order]
    vol = 0.0
    area = 0.0
    seen: list[np.ndarray] = []
    z_prev = None
    i = 0
    while i < len(front):
        z = front[i, 2]
        if z_prev is not None:
            vol += area * (z - z_prev)
        while i < len(front) and front[i, 2] == z:
            seen.append(front[i, :2])
            i += 1
        area = _hv2(np.array(seen), ref[:2])
        z_prev = z
    vol += area * (ref[2] - z_prev)
    return vol


def hypervolume_mc(points, ref, samples: int = MC_SAMPLES, seed: int = MC_SEED) -> tuple[float, float]:
    """Monte-Carlo hypervolume estimate and its standard error."""
    pts = _as_points(points)
    ref = np.asarray(ref, dtype=np.float64)
    _check_ref(pts, ref)
    front = pts[nondominated_indices(pts)]
    lo = front.min(axis=0)
    box = float(np.prod(ref - lo))
    if box == 0.0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 50_000
    remaining = samples
    while remaining > 0:
        k = min(chunk, remaining)
        draws = rng.uniform(lo, ref, size=(k, len(ref)))
        covered = np.zeros(k, dtype=bool)
        for p in front:
            covered |= np.all(draws >= p, axis=1)
        hits += int(covered.sum())
        remaining -= k
    frac = hits / samples
    se = box * np.sqrt(max(frac * (1.0 - frac), 0.0) / samples)
    return box * frac, se


def hypervolume(points, ref) -> float:
    """Region dominated by `points` up to `ref` (minimization).

    Exact sweep for 2 and 3 objectives; Monte-Carlo (with the documented fixed
    seed) above that — use `hypervolume_mc` directly when the standard error is
    needed.
    """
    pts = _as_points(points)
    ref = np.asarray(ref, dtype=np.float64)
    if pts.shape[1] != ref.shape[0]:
        raise ContractViolation(f"points have {pts.shape[1]} objectives but reference has {ref.shape[0]}")
    _check_ref(pts, ref)
    if pts.shape[1] == 2:
        return _hv2(pts, ref)
    if pts.shape[1] == 3:
        return _hv3(pts, ref)
    return hypervolume_mc(pts, ref)[0]


def filtered_hypervolume(points, ref) -> float:
    """Hypervolume of the subset of points inside the reference box.

    Points that fail to dominate `ref` contribute nothing instead of raising;
    used for archive curves with a frozen reference point.
    """
    pts = _as_points(points)
    ref = np.asarray(ref, dtype=np.float64)
    inside = pts[np.all(pts <= ref, axis=1)]
    if len(inside) == 0:
        return 0.0
    return hypervolume(inside, ref)


def normalized_hv(points, ref) -> float:
    """Hypervolume divided by the reference-box volume from the origin."""
    ref = np.asarray(ref, dtype=np.float64)
    if (ref <= 0).any():
        raise DomainError(f"normalized hypervolume needs a positive reference point, got {ref.tolist()}")
    pts = _as_points(points)
    if (pts < 0).any():
        raise DomainError("normalized hypervolume assumes nonnegative objectives")
    return hypervolume(pts, ref) / float(np.prod(ref))


def igd(approx, exact) -> float:
    """Mean distance from each exact-front point to its nearest approximation."""
    exact = _as_points(exact)
    if len(exact) == 0:
        raise ContractViolation("IGD needs a nonempty exact front")
    if len(approx) == 0:
        return np.inf
    approx = _as_points(approx)
    d = np.sqrt(((exact[:, None, :] - approx[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean())


def reference_point(*sets, sense: str = "min") -> np.ndarray:
    """Componentwise worst over the union of objective sets (shared by methods)."""
    stacks = [_as_points(s) for s in sets if len(s)]
    if not stacks:
        raise ContractViolation("reference_point needs at least one nonempty set")
    allpts = np.vstack(stacks)
    return allpts.max(axis=0) if sense == "min" else allpts.min(axis=0)


# ---------------------------------------------------------------------------
# archive


@dataclass
class ArchiveEntry:
    objectives: np.ndarray
    preference: np.ndarray | None = None
    solution: object = None


class ParetoArchive:
    """Mutable non-dominated set of (preference, solution, objectives).

    Mutation requires exclusive access; concurrent readers are safe between
    mutations.  Equal objective vectors are stored once.
    """

    def __init__(self, sense: str = "min"):
        if sense not in ("min", "max"):
            raise ContractViolation(f"sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.entries: list[ArchiveEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def objectives_array(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, 0))
        return np.vstack([e.objectives for e in self.entries])

    def offer(self, objectives, preference=None, solution=None) -> bool:
        """Insert if non-dominated; evict entries the newcomer dominates."""
        obj = np.asarray(objectives, dtype=np.float64).copy()
        for e in self.entries:
            if np.array_equal(e.objectives, obj) or dominates(e.objectives, obj, self.sense):
                return False
        self.entries = [e for e in self.entries if not dominates(obj, e.objectives, self.sense)]
        pref = None if preference is None else np.asarray(preference, dtype=np.float64).copy()
        self.entries.append(ArchiveEntry(objectives=obj, preference=pref, solution=solution))
        return True

    def offer_all(self, objective_rows, preferences=None, solutions=None) -> int:
        added = 0
        for i, row in enumerate(objective_rows):
            pref = None if preferences is None else preferences[i]
            sol = None if solutions is None else solutions[i]
            added += self.offer(row, pref, sol)
        return added

    def _min_sense_points(self) -> np.ndarray:
        pts = self.objectives_array()
        return -pts if self.sense == "max" else pts

    def hypervolume(self, ref) -> float:
        """Filtered hypervolume against `ref` given in min-sense coordinates."""
        if not self.entries:
            return 0.0
        return filtered_hypervolume(self._min_sense_points(), ref)


def metric_report(method: str, points, ref, sense: str = "min", exact=None,
                  runtime_s: float | None = None, reference_hv: float | None = None,
                  normalize: bool = True) -> dict:
    """JSON-ready summary mirroring the HV / Gap / Time reporting convention."""
    pts = _as_points(points)
    if sense == "max":
        pts = -pts
        ref = -np.asarray(ref, dtype=np.float64)
    hv = filtered_hypervolume(pts, ref)
    report: dict = {"method": method, "hv": hv}
    if normalize:
        report["normalized_hv"] = hv / float(np.prod(np.asarray(ref, dtype=np.float64)))
    if pts.shape[1] > 3:
        _, se = hypervolume_mc(pts[np.all(pts <= ref, axis=1)], ref)
        report["hv_standard_error"] = se
    if reference_hv is not None and reference_hv > 0:
        key = "normalized_hv" if normalize else "hv"
        report["gap_vs_reference"] = (reference_hv - report[key]) / reference_hv
    if exact is not None:
        ex = _as_points(exact)
        report["igd"] = igd(pts, -ex if sense == "max" else ex)
    if runtime_s is not None:
        report["runtime_s"] = runtime_s
    return report
