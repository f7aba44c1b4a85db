"""Multiobjective REINFORCE with a shared multi-start baseline.

Each step samples K preferences and B instances, draws N rollouts per
(preference, instance) pair, subtracts the group-mean scalarized cost as the
baseline and follows the resulting policy gradient with decoupled-decay Adam.
Rollout generation may parallelize across pairs; gradient accumulation uses a
fixed reduction order so equal seeds give bit-identical trajectories.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .model import (ModelConfig, decoder_params, encode_batch, init_params,
                    load_checkpoint, rollout_batch, save_checkpoint)
from .problems import ProblemInstance, sample_instance
from .scalarize import (ScalarizationSpec, grouped_costs, sample_preference,
                        training_spec)


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "motsp"
    n: int = 20
    m: int = 2
    epochs: int = 1
    steps_per_epoch: int = 1000
    k_prefs: int = 1                     # K
    batch: int = 64                      # B
    rollouts: int | None = None          # N; defaults to the problem size
    lr: float = 1e-4
    weight_decay: float = 1e-6
    seed: int = 0
    scalarization: ScalarizationSpec | None = None
    normalize_advantage: bool = False
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError("learning rate must be nonnegative")
        if (self.rollouts or self.n) < 2:
            raise ConfigurationError("shared baseline needs at least two rollouts per pair")

    @property
    def n_rollouts(self) -> int:
        return self.rollouts if self.rollouts is not None else self.n

    @property
    def instances_per_epoch(self) -> int:
        return self.steps_per_epoch * self.batch

    def to_dict(self) -> dict:
        rec = {k: getattr(self, k) for k in
               ("kind", "n", "m", "epochs", "steps_per_epoch", "k_prefs", "batch",
                "rollouts", "lr", "weight_decay", "seed", "normalize_advantage", "grad_clip")}
        rec["scalarization"] = None if self.scalarization is None else self.scalarization.to_dict()
        return rec


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, T.Array]) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_update(params: dict[str, T.Array], grads: dict[str, np.ndarray], state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                weight_decay: float = 0.0) -> None:
    """One in-place Adam step; weight decay is applied decoupled from the moments."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k].astype(p.data.dtype, copy=False)
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)
        if weight_decay:
            p.data -= (lr * weight_decay) * p.data


# ---------------------------------------------------------------------------
# one REINFORCE step


@dataclass
class TrainState:
    params: dict[str, T.Array]
    adam: AdamState
    step: int = 0


@dataclass
class StepDiagnostics:
    step: int
    mean_cost: float
    mean_advantage: float
    grad_norm: float
    wall_s: float


def scalarized_costs(config: TrainConfig, instances, objectives: np.ndarray, lam,
                     n_rollouts: int) -> np.ndarray:
    """Per-rollout costs, grouped N at a time per instance (per-group nadir/ideal)."""
    spec = config.scalarization or training_spec(config.kind, config.m)
    return grouped_costs(spec, config.kind, instances, objectives, lam, n_rollouts)


def train_step(state: TrainState, config: TrainConfig, model_cfg: ModelConfig,
               instances: list[ProblemInstance] | None = None) -> StepDiagnostics:
    """One Algorithm-style update: sample prefs and instances, rollout, REINFORCE.

    On a non-finite loss or gradient the step aborts with parameters unchanged
    and a ContractViolation carrying the diagnostics.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1_000_003 + state.step)))
    K, B, N = config.k_prefs, config.batch, config.n_rollouts
    if instances is None:
        instances = [sample_instance(config.kind, config.n, config.m,
                                     seed=int(rng.integers(2 ** 62)))
                     for _ in range(B)]
    else:
        B = len(instances)

    lams = [sample_preference(config.m, rng) for _ in range(K)]
    all_costs, all_advs = [], []

    with T.Tape() as tape:
        enc = encode_batch(instances, state.params, model_cfg)
        loss_terms = []
        for lam in lams:
            bundle = decoder_params(lam, state.params, model_cfg)
            routs, logp = rollout_batch(instances, enc, bundle, state.params, model_cfg,
                                        mode="sample", starts=N, rng=rng)
            objs = np.stack([r.solution.objectives for r in routs])
            costs = scalarized_costs(config, instances, objs, lam, N)
            groups = costs.reshape(B, N)
            baseline = groups.mean(axis=1, keepdims=True)   # shared baseline per pair
            adv = (groups - baseline).reshape(-1)
            if config.normalize_advantage:
                adv = adv / (adv.std() + 1e-8)
            all_costs.append(costs)
            all_advs.append(adv)
            weights = (adv / (K * B * N)).astype(np.float32)
            loss_terms.append(T.asum(T.mul(logp, weights)))
        loss = reduce(T.add, loss_terms)

    if not np.isfinite(loss.data).all():
        raise ContractViolation(f"non-finite loss at step {state.step}")
    grads = T.backward(tape, loss, state.params)
    sq = 0.0
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise ContractViolation(f"non-finite gradient for {k} at step {state.step}")
        sq += float((g.astype(np.float64) ** 2).sum())
    grad_norm = float(np.sqrt(sq))
    if config.grad_clip is not None and grad_norm > config.grad_clip:
        scale = config.grad_clip / grad_norm
        grads = {k: g * scale for k, g in grads.items()}

    adam_update(state.params, grads, state.adam, lr=config.lr,
                weight_decay=config.weight_decay)
    state.step += 1
    return StepDiagnostics(
        step=state.step,
        mean_cost=float(np.mean(np.concatenate(all_costs))),
        mean_advantage=float(np.mean(np.concatenate(all_advs))),
        grad_norm=grad_norm,
        wall_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# outer loop with per-epoch checkpoints and resume


def _trainer_blob(state: TrainState) -> dict[str, T.Array]:
    blob = dict(state.params)
    for k in state.params:
        blob[f"adam.m.{k}"] = T.Array(state.adam.m[k])
        blob[f"adam.v.{k}"] = T.Array(state.adam.v[k])
    return blob


def save_train_checkpoint(path, state: TrainState, config: TrainConfig,
                          model_cfg: ModelConfig, extra: dict | None = None) -> None:
    meta = {"kind": config.kind, "m": config.m, "n": config.n,
            "model_config": model_cfg.to_dict(), "train_config": config.to_dict(),
            "scalarization": (config.scalarization or training_spec(config.kind, config.m)).to_dict(),
            "seed": config.seed, "step": state.step, "adam_t": state.adam.t}
    if extra:
        meta.update(extra)
    save_checkpoint(path, _trainer_blob(state), meta)


def load_train_checkpoint(path) -> tuple[TrainState, dict]:
    blob, meta = load_checkpoint(path)
    params = {k: v for k, v in blob.items() if not k.startswith("adam.")}
    adam = AdamState(
        m={k: blob[f"adam.m.{k}"].data for k in params},
        v={k: blob[f"adam.v.{k}"].data for k in params},
        t=int(meta.get("adam_t", 0)),
    )
    return TrainState(params=params, adam=adam, step=int(meta.get("step", 0))), meta


@dataclass
class TrainResult:
    state: TrainState
    curve: list[StepDiagnostics] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)


def train(config: TrainConfig, model_cfg: ModelConfig, out_dir: str | None = None,
          params: dict[str, T.Array] | None = None, resume: bool = True,
          log_every: int = 0, on_step: Callable[[StepDiagnostics], None] | None = None) -> TrainResult:
    """Full training loop; writes one checkpoint and a curve CSV per epoch.

    With `resume` and an output directory containing earlier epoch checkpoints,
    continues bit-identically from the latest one.
    """
    start_epoch = 0
    state = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if resume:
            done = sorted(f for f in os.listdir(out_dir)
                          if f.startswith("epoch_") and f.endswith(".ckpt"))
            if done:
                state, _ = load_train_checkpoint(os.path.join(out_dir, done[-1]))
                start_epoch = int(done[-1].split("_")[1].split(".")[0])
    if state is None:
        if params is None:
            params = init_params(config.kind, config.m, model_cfg, seed=config.seed)
        state = TrainState(params=params, adam=AdamState.zeros_like(params))

    result = TrainResult(state=state)
    curve_path = os.path.join(out_dir, "curve.csv") if out_dir else None
    curve_mode = "a" if start_epoch and curve_path and os.path.exists(curve_path) else "w"
    curve_fh = open(curve_path, curve_mode, newline="") if curve_path else None
    writer = csv.writer(curve_fh) if curve_fh else None
    if writer and curve_mode == "w":
        writer.writerow(["step", "epoch", "mean_cost", "mean_advantage", "wall_s"])

    try:
        for epoch in range(start_epoch, config.epochs):
            for _ in range(config.steps_per_epoch):
                diag = train_step(state, config, model_cfg)
                result.curve.append(diag)
                if writer:
                    writer.writerow([diag.step, epoch, diag.mean_cost,
                                     diag.mean_advantage, f"{diag.wall_s:.4f}"])
                if log_every and diag.step % log_every == 0:
                    print(f"step {diag.step}: cost {diag.mean_cost:.4f} "
                          f"grad {diag.grad_norm:.3f} ({diag.wall_s:.2f}s)")
                if on_step:
                    on_step(diag)
            if out_dir:
                path = os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt")
                save_train_checkpoint(path, state, config, model_cfg)
                result.checkpoints.append(path)
    finally:
        if curve_fh:
            curve_fh.close()
    return result
