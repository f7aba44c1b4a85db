"""Command-line entry points: train / solve / eval / enumerate / adapt / serve."""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .adapt import AdaptConfig, adapt, curve_rows
from .errors import ConfigurationError
from .metrics import igd, metric_report, reference_point
from .model import PRESETS, ModelConfig, load_checkpoint, save_checkpoint
from .problems import (enumerate_exact, load_instances, sample_instance,
                       save_instances, solution_record)
from .scalarize import (ScalarizationSpec, das_dennis_weights, preference_grid,
                        training_spec)
from .solve import check_kind, front_metrics, solve_instance
from .training import TrainConfig, train


def write_manifest(out_dir: str, command: str, config: dict, artifacts: list[str],
                   wall_s: float, seeds: dict | None = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": seeds or {},
        "versions": {"package": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "artifacts": artifacts,
        "wall_clock_s": wall_s,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _preferences(args, m: int) -> np.ndarray:
    chosen = [x for x in (args.pref_grid, args.pref_dasdennis, getattr(args, "lam", None)) if x]
    if len(chosen) > 1:
        raise ConfigurationError("choose one of --pref-grid / --pref-dasdennis / --lambda")
    if args.pref_grid:
        if m != 2:
            raise ConfigurationError("--pref-grid is the two-objective uniform grid; use --pref-dasdennis")
        return preference_grid(args.pref_grid)
    if args.pref_dasdennis:
        return das_dennis_weights(m, args.pref_dasdennis)
    if getattr(args, "lam", None):
        lam = np.array([float(v) for v in args.lam.split(",")])
        return lam[None, :]
    return preference_grid(101) if m == 2 else das_dennis_weights(m, 13)


def _load_model(path):
    params, meta = load_checkpoint(path)
    params = {k: v for k, v in params.items() if not k.startswith("adam.")}
    cfg = ModelConfig.from_dict(meta["model_config"])
    spec = ScalarizationSpec.from_dict(meta["scalarization"]) if meta.get("scalarization") \
        else training_spec(meta["kind"], int(meta["m"]))
    return params, meta, cfg, spec


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    model_cfg = PRESETS[args.preset]
    config = TrainConfig(kind=args.problem, n=args.nodes, m=args.objectives,
                         epochs=args.epochs, steps_per_epoch=args.steps_per_epoch,
                         k_prefs=args.k_prefs, batch=args.batch, rollouts=args.rollouts,
                         lr=args.lr, weight_decay=args.weight_decay, seed=args.seed)
    result = train(config, model_cfg, out_dir=args.out, resume=not args.fresh,
                   log_every=args.log_every)
    artifacts = [os.path.basename(p) for p in result.checkpoints] + ["curve.csv"]
    write_manifest(args.out, "train", {**config.to_dict(), "preset": args.preset,
                                       "model": model_cfg.to_dict()},
                   artifacts, time.perf_counter() - t0, seeds={"train": args.seed})
    print(f"trained {len(result.curve)} steps; checkpoints in {args.out}")
    return 0


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    params, meta, cfg, spec = _load_model(args.ckpt)
    instances = load_instances(args.instances)
    os.makedirs(args.out, exist_ok=True)
    prefs = _preferences(args, int(meta["m"]))
    rng = np.random.default_rng(args.seed)

    dump_path = os.path.join(args.out, "solutions.jsonl")
    report_path = os.path.join(args.out, "metrics.json")
    reports = []
    with open(dump_path, "w") as dump:
        for idx, inst in enumerate(instances):
            check_kind(meta, inst)
            res = solve_instance(inst, params, cfg, prefs, spec, use_aug=args.aug,
                                 samples=args.sample, starts=args.starts, rng=rng)
            for pr in res.per_preference:
                dump.write(json.dumps(solution_record(idx, pr.lam, pr.solution)
                                      | {"scalarized_cost": pr.scalarized_cost,
                                         "manifest": "./manifest.json"}) + "\n")
            rep = front_metrics(inst, res.archive)
            rep["method"] = f"policy ({len(prefs)} pref.{', aug' if args.aug else ''})"
            rep["runtime_s"] = res.runtime_s
            rep["instance_id"] = idx
            reports.append(rep)
    hvs = [r["normalized_hv"] for r in reports if r["normalized_hv"] is not None]
    summary = {"method": reports[0]["method"] if reports else "policy",
               "mean_normalized_hv": float(np.mean(hvs)) if hvs else None,
               "per_instance": reports, "manifest": "./manifest.json"}
    with open(report_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    write_manifest(args.out, "solve",
                   {"ckpt": args.ckpt, "instances": args.instances, "aug": args.aug,
                    "prefs": len(prefs), "sample": args.sample, "starts": args.starts},
                   ["solutions.jsonl", "metrics.json"], time.perf_counter() - t0,
                   seeds={"sample": args.seed})
    print(f"solved {len(instances)} instances x {len(prefs)} preferences -> {dump_path}")
    print(f"mean normalized HV: {summary['mean_normalized_hv']:.4f}")
    return 0


def _load_front_file(path) -> dict[int, np.ndarray]:
    """Accepts solution dumps (one row per solution) or enumerate outputs."""
    fronts: dict[int, list] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rid = int(rec.get("instance_id", 0))
            obj = rec["objectives"]
            rows = obj if obj and isinstance(obj[0], list) else [obj]
            fronts.setdefault(rid, []).extend(rows)
    return {k: np.asarray(v, dtype=np.float64) for k, v in fronts.items()}


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    fronts = [_load_front_file(p) for p in args.fronts]
    exact = _load_front_file(args.exact) if args.exact else None
    sense = args.sense
    ids = sorted(set().union(*[f.keys() for f in fronts]))
    per_method = [[] for _ in args.fronts]
    for rid in ids:
        sets = [f.get(rid, np.empty((0, 2))) for f in fronts]
        pools = [s if sense == "min" else -s for s in sets if len(s)]
        if exact is not None and rid in exact:
            pools.append(exact[rid] if sense == "min" else -exact[rid])
        ref = reference_point(*pools)
        for j, s in enumerate(sets):
            if not len(s):
                continue
            pts = s if sense == "min" else -s
            rep = metric_report(args.fronts[j], pts, ref, normalize=False)
            if exact is not None and rid in exact:
                ex = exact[rid] if sense == "min" else -exact[rid]
                rep["igd"] = igd(pts, ex)
                rep["hv_exact"] = metric_report("exact", ex, ref, normalize=False)["hv"]
            rep["instance_id"] = rid
            per_method[j].append(rep)
    out = {"fronts": args.fronts, "sense": sense, "per_method": {}}
    base_hv = None
    for j, path in enumerate(args.fronts):
        hvs = [r["hv"] for r in per_method[j]]
        mean_hv = float(np.mean(hvs)) if hvs else 0.0
        entry = {"mean_hv": mean_hv, "per_instance": per_method[j]}
        if j == 0:
            base_hv = mean_hv
        elif base_hv:
            entry["gap_vs_reference"] = (base_hv - mean_hv) / base_hv
        if exact is not None:
            igs = [r["igd"] for r in per_method[j] if "igd" in r]
            if igs:
                entry["mean_igd"] = float(np.mean(igs))
        out["per_method"][path] = entry
    text = json.dumps(out, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.json"), "w") as fh:
            fh.write(text)
        write_manifest(args.out, "eval", {"fronts": args.fronts, "exact": args.exact},
                       ["eval.json"], time.perf_counter() - t0)
    else:
        print(text)
    return 0


def cmd_enumerate(args) -> int:
    t0 = time.perf_counter()
    instances = load_instances(args.instances)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "exact_fronts.jsonl")
    with open(path, "w") as fh:
        for idx, inst in enumerate(instances):
            arch = enumerate_exact(inst, limit=args.limit)
            fh.write(json.dumps({
                "instance_id": idx,
                "objectives": [e.objectives.tolist() for e in arch.entries],
                "solutions": [e.solution.flat() if e.solution else None for e in arch.entries],
            }) + "\n")
    write_manifest(args.out, "enumerate", {"instances": args.instances, "limit": args.limit},
                   ["exact_fronts.jsonl"], time.perf_counter() - t0)
    print(f"enumerated {len(instances)} instances -> {path}")
    return 0


def cmd_adapt(args) -> int:
    t0 = time.perf_counter()
    params, meta, cfg, spec = _load_model(args.ckpt)
    instances = load_instances(args.instance)
    inst = instances[args.index]
    check_kind(meta, inst)
    config = AdaptConfig(steps=args.steps, lr=args.lr, seed=args.seed,
                         front_prefs=args.front_prefs,
                         time_budget_s=args.time_budget)
    result = adapt(params, inst, config, cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "adapted.ckpt")
    save_checkpoint(ckpt_path, result.params, meta | {"adapted_steps": args.steps,
                                                      "adapt_lr": args.lr})
    curve_path = os.path.join(args.out, "adapt_curve.csv")
    with open(curve_path, "w") as fh:
        fh.write("step,hypervolume,mean_cost\n")
        for step, hv, cost in curve_rows(result):
            fh.write(f"{step},{hv!r},{cost!r}\n")
    write_manifest(args.out, "adapt",
                   {"ckpt": args.ckpt, "instance": args.instance, "steps": args.steps,
                    "lr": args.lr}, ["adapted.ckpt", "adapt_curve.csv"],
                   time.perf_counter() - t0, seeds={"adapt": args.seed})
    print(f"zero-shot HV {result.zero_shot_hv:.6f} -> adapted HV {result.curve[-1].hypervolume:.6f}")
    return 0


def cmd_serve(args) -> int:
    from .service import run_server
    run_server(args.ckpt, args.port, static_dir=args.static)
    return 0


def cmd_sample(args) -> int:
    instances = [sample_instance(args.problem, args.nodes, args.objectives, seed=s)
                 for s in range(args.seed, args.seed + args.count)]
    save_instances(args.out, instances)
    print(f"wrote {len(instances)} {args.problem} instances to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moco", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a preference-conditioned policy")
    t.add_argument("--problem", choices=["motsp", "mocvrp", "mokp"], required=True)
    t.add_argument("--nodes", type=int, required=True)
    t.add_argument("--objectives", type=int, default=2)
    t.add_argument("--preset", choices=list(PRESETS), default="desk")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--steps-per-epoch", type=int, default=1000)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--k-prefs", type=int, default=1)
    t.add_argument("--rollouts", type=int, default=None)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=1e-6)
    t.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("solve", help="sweep preferences over instances with a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--instances", required=True)
    s.add_argument("--pref-grid", type=int, default=None)
    s.add_argument("--pref-dasdennis", type=int, default=None)
    s.add_argument("--lambda", dest="lam", default=None, help='single preference "0.3,0.7"')
    s.add_argument("--aug", action="store_true", help="best-of-augmentation per preference")
    s.add_argument("--sample", type=int, default=None, help="sampled rollouts per preference")
    s.add_argument("--starts", type=int, default=None, help="greedy multi-start count")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_solve)

    e = sub.add_parser("eval", help="compare solution fronts under a shared reference point")
    e.add_argument("--fronts", nargs="+", required=True,
                   help="solution dumps; the first is the reference method")
    e.add_argument("--exact", default=None, help="exact fronts from `moco enumerate`")
    e.add_argument("--sense", choices=["min", "max"], default="min")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    n = sub.add_parser("enumerate", help="exact Pareto fronts by exhaustive search")
    n.add_argument("--instances", required=True)
    n.add_argument("--limit", type=float, default=2e6)
    n.add_argument("--out", required=True)
    n.set_defaults(fn=cmd_enumerate)

    a = sub.add_parser("adapt", help="instance-level active adaptation")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--instance", required=True, help="instance file (JSON-lines)")
    a.add_argument("--index", type=int, default=0)
    a.add_argument("--steps", type=int, default=200)
    a.add_argument("--lr", type=float, default=1e-4)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--front-prefs", type=int, default=101)
    a.add_argument("--time-budget", type=float, default=None)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_adapt)

    v = sub.add_parser("serve", help="HTTP inference service")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--port", type=int, default=8080)
    v.add_argument("--static", default=None, help="directory of UI assets to serve at /")
    v.set_defaults(fn=cmd_serve)

    g = sub.add_parser("sample", help="generate random instances to a JSON-lines file")
    g.add_argument("--problem", choices=["motsp", "mocvrp", "mokp"], required=True)
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--objectives", type=int, default=2)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_sample)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
