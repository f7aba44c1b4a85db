"""Preference-conditioned constructive policy.

A preference-agnostic attention encoder embeds the instance once; an MLP
hypernetwork maps the preference vector to the decoder's four projection
matrices (query, key, value, output) through a compressed linear layer; the
masked autoregressive decoder then builds solutions node by node.

Parameters are immutable during inference: `encode` and `rollout` are
reentrant over a shared parameter snapshot, while training owns an exclusive
mutable copy.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .problems import (ConstructionState, ProblemInstance, Solution, apply_action,
                       feasible_mask, finish_solution, reset_vehicle)
from .scalarize import as_preference


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    ff_dim: int = 256
    hyper_hidden: tuple[int, ...] = (64, 64)
    hyper_embed: int = 32
    logit_clip: float = 10.0

    def __post_init__(self):
        if self.embed_dim != self.n_heads * self.head_dim:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} != n_heads*head_dim = {self.n_heads * self.head_dim}")
        if self.logit_clip <= 0:
            raise ConfigurationError("logit_clip must be positive")

    def to_dict(self) -> dict:
        return {"embed_dim": self.embed_dim, "n_layers": self.n_layers,
                "n_heads": self.n_heads, "head_dim": self.head_dim, "ff_dim": self.ff_dim,
                "hyper_hidden": list(self.hyper_hidden), "hyper_embed": self.hyper_embed,
                "logit_clip": self.logit_clip}

    @classmethod
    def from_dict(cls, rec: dict) -> "ModelConfig":
        rec = dict(rec)
        rec["hyper_hidden"] = tuple(rec["hyper_hidden"])
        return cls(**rec)


# Full-size preset mirrors the published architecture; the desk preset is a
# scaled-down twin that trains in minutes on a CPU.
PRESETS = {
    "paper": ModelConfig(embed_dim=128, n_layers=6, n_heads=8, head_dim=16, ff_dim=512,
                         hyper_hidden=(128, 128), hyper_embed=2),
    "desk": ModelConfig(embed_dim=64, n_layers=2, n_heads=4, head_dim=16, ff_dim=256,
                        hyper_hidden=(64, 64), hyper_embed=32),
}


def decoder_param_size(cfg: ModelConfig) -> int:
    d = cfg.embed_dim
    return 2 * d * d + 3 * d * d  # [W_Q(2d,d), W_K(d,d), W_V(d,d), W_MHA(d,d)]


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(kind: str, m: int, cfg: ModelConfig, seed: int = 0) -> dict[str, T.Array]:
    """Fresh float32 parameter dict; the iteration order is the checkpoint order."""
    rng = np.random.default_rng(np.random.SeedSequence((11, seed)))
    d = cfg.embed_dim
    p: dict[str, np.ndarray] = {}

    if kind == "motsp":
        p["embed.w"] = _uniform(rng, 2 * m, (2 * m, d))
        p["embed.b"] = _uniform(rng, 2 * m, (d,))
    elif kind == "mocvrp":
        p["embed_depot.w"] = _uniform(rng, 2, (2, d))
        p["embed_depot.b"] = _uniform(rng, 2, (d,))
        p["embed.w"] = _uniform(rng, 3, (3, d))
        p["embed.b"] = _uniform(rng, 3, (d,))
    elif kind == "mokp":
        p["embed.w"] = _uniform(rng, m + 1, (m + 1, d))
        p["embed.b"] = _uniform(rng, m + 1, (d,))
    else:
        raise ConfigurationError(f"unknown kind {kind!r}")

    for i in range(cfg.n_layers):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"enc{i}.{name}"] = _uniform(rng, d, (d, d))
        p[f"enc{i}.ff1.w"] = _uniform(rng, d, (d, cfg.ff_dim))
        p[f"enc{i}.ff1.b"] = _uniform(rng, d, (cfg.ff_dim,))
        p[f"enc{i}.ff2.w"] = _uniform(rng, cfg.ff_dim, (cfg.ff_dim, d))
        p[f"enc{i}.ff2.b"] = _uniform(rng, cfg.ff_dim, (d,))
        p[f"enc{i}.norm1.g"] = np.ones(d, dtype=np.float32)
        p[f"enc{i}.norm1.b"] = np.zeros(d, dtype=np.float32)
        p[f"enc{i}.norm2.g"] = np.ones(d, dtype=np.float32)
        p[f"enc{i}.norm2.b"] = np.zeros(d, dtype=np.float32)

    p["ctx.first"] = _uniform(rng, d, (d,))
    p["ctx.last"] = _uniform(rng, d, (d,))
    if kind in ("mocvrp", "mokp"):
        p["ctx.cap.w"] = _uniform(rng, 1, (1, d))
        p["ctx.cap.b"] = np.zeros(d, dtype=np.float32)

    dims = (m,) + cfg.hyper_hidden
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        p[f"hyper.l{i}.w"] = _uniform(rng, a, (a, b))
        p[f"hyper.l{i}.b"] = _uniform(rng, a, (b,))
    p["hyper.out.w"] = _uniform(rng, dims[-1], (dims[-1], cfg.hyper_embed))
    p["hyper.out.b"] = _uniform(rng, dims[-1], (cfg.hyper_embed,))
    p["hyper.W"] = _uniform(rng, cfg.hyper_embed, (cfg.hyper_embed, decoder_param_size(cfg)))
    p["hyper.bias"] = _uniform(rng, d, (decoder_param_size(cfg),))

    return {name: T.Array(arr, requires_grad=True, name=name) for name, arr in p.items()}


def clone_params(params: dict[str, T.Array]) -> dict[str, T.Array]:
    return {k: T.Array(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


# ---------------------------------------------------------------------------
# encoder


@dataclass
class EncodedInstance:
    """Preference-independent node embeddings plus their mean summary."""
    kind: str
    n: int                      # number of actionable nodes / items
    embeddings: T.Array         # (B, rows, d); cvrp has the depot as row 0
    mean: T.Array               # (B, d)
    instances: list[ProblemInstance] = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.embeddings.shape[0]


def _split_heads(x: T.Array, heads: int) -> T.Array:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: T.Array) -> T.Array:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _mha(h: T.Array, wq, wk, wv, wo, heads: int) -> T.Array:
    q = _split_heads(T.matmul(h, wq), heads)
    k = _split_heads(T.matmul(h, wk), heads)
    v = _split_heads(T.matmul(h, wv), heads)
    att = T.scaled_dot_attention(q, k, v)
    return T.matmul(_merge_heads(att), wo)


def encode_batch(instances: Sequence[ProblemInstance], params: dict[str, T.Array],
                 cfg: ModelConfig) -> EncodedInstance:
    """Single dense pass shared by every preference (instances must agree in n)."""
    kind = instances[0].kind
    if any(i.kind != kind or i.n != instances[0].n for i in instances):
        raise ConfigurationError("batched instances must share kind and size")
    feats = np.stack([inst.model_inputs() for inst in instances]).astype(np.float32)
    expected = params["embed.w"].shape[0]
    if feats.shape[-1] != expected:
        raise ConfigurationError(
            f"model was built for {expected}-wide {kind} inputs, instance provides {feats.shape[-1]}")

    x = T.Array(feats)
    if kind == "mocvrp":
        depot = T.linear(T.narrow(T.narrow(x, 1, 0, 1), 2, 0, 2), params["embed_depot.w"], params["embed_depot.b"])
        nodes = T.linear(T.narrow(x, 1, 1, x.shape[1] - 1), params["embed.w"], params["embed.b"])
        h = T.concat([depot, nodes], axis=1)
    else:
        h = T.linear(x, params["embed.w"], params["embed.b"])

    for i in range(cfg.n_layers):
        attn = _mha(h, params[f"enc{i}.wq"], params[f"enc{i}.wk"], params[f"enc{i}.wv"],
                    params[f"enc{i}.wo"], cfg.n_heads)
        h = T.normalize_rows(T.add(h, attn), params[f"enc{i}.norm1.g"], params[f"enc{i}.norm1.b"])
        ff = T.linear(T.relu(T.linear(h, params[f"enc{i}.ff1.w"], params[f"enc{i}.ff1.b"])),
                      params[f"enc{i}.ff2.w"], params[f"enc{i}.ff2.b"])
        h = T.normalize_rows(T.add(h, ff), params[f"enc{i}.norm2.g"], params[f"enc{i}.norm2.b"])

    return EncodedInstance(kind=kind, n=instances[0].n, embeddings=h,
                           mean=T.amean(h, axis=1), instances=list(instances))


def encode(instance: ProblemInstance, params: dict[str, T.Array], cfg: ModelConfig) -> EncodedInstance:
    return encode_batch([instance], params, cfg)


# ---------------------------------------------------------------------------
# hypernetwork -> decoder parameters


@dataclass
class DecoderBundle:
    wq: T.Array     # (2d, d)
    wk: T.Array     # (d, d)
    wv: T.Array     # (d, d)
    wmha: T.Array   # (d, d)

    def flat_vector(self) -> np.ndarray:
        return np.concatenate([self.wq.data.ravel(), self.wk.data.ravel(),
                               self.wv.data.ravel(), self.wmha.data.ravel()])


def decoder_params(lam, params: dict[str, T.Array], cfg: ModelConfig) -> DecoderBundle:
    """Emit the preference-conditioned decoder weights theta_dec = W e(lam) + b."""
    lam = as_preference(lam)
    d = cfg.embed_dim
    h = T.Array(lam.astype(np.float32).reshape(1, -1))
    for i in range(len(cfg.hyper_hidden)):
        h = T.relu(T.linear(h, params[f"hyper.l{i}.w"], params[f"hyper.l{i}.b"]))
    e = T.linear(h, params["hyper.out.w"], params["hyper.out.b"])
    flat = T.add(T.matmul(e, params["hyper.W"]), params["hyper.bias"])  # (1, P)

    sizes = [2 * d * d, d * d, d * d, d * d]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    pieces = [T.reshape(T.narrow(flat, 1, int(offsets[i]), sizes[i]),
                        (2 * d, d) if i == 0 else (d, d))
              for i in range(4)]
    return DecoderBundle(*pieces)


@dataclass
class DecoderCache:
    """Per-(instance, preference) projections reused across decode steps."""
    k: T.Array        # (B, H, rows, dh)
    v: T.Array        # (B, H, rows, dh)


def build_cache(enc: EncodedInstance, bundle: DecoderBundle, cfg: ModelConfig) -> DecoderCache:
    k = _split_heads(T.matmul(enc.embeddings, bundle.wk), cfg.n_heads)
    v = _split_heads(T.matmul(enc.embeddings, bundle.wv), cfg.n_heads)
    return DecoderCache(k=k, v=v)


# ---------------------------------------------------------------------------
# one decode step


def _context_rows(enc: EncodedInstance, params, first_idx, pos_rows, has_first) -> T.Array:
    """[first-selected, current-position] context, placeholders before t=1."""
    B, _, d = enc.embeddings.shape
    if not has_first:
        first = T.broadcast_to(params["ctx.first"], (B, d))
        last = T.broadcast_to(params["ctx.last"], (B, d))
    else:
        first = T.take_rows(enc.embeddings, first_idx)
        last = T.take_rows(enc.embeddings, pos_rows)
    return T.concat([first, last], axis=-1)


def decode_logits(enc: EncodedInstance, bundle: DecoderBundle, cache: DecoderCache,
                  params: dict[str, T.Array], cfg: ModelConfig,
                  action_mask: np.ndarray, first_idx: np.ndarray, pos_rows: np.ndarray,
                  has_first: bool, remaining: np.ndarray | None) -> T.Array:
    """Masked, clipped selection logits for every rollout row.

    `action_mask[r, a]` true means action `a` is admissible for row `r`.
    Visited / infeasible actions come out with probability exactly zero.
    """
    B, rows, d = enc.embeddings.shape
    n_act = action_mask.shape[1]
    offset = rows - n_act  # 1 when a depot row precedes the action rows

    ctx = _context_rows(enc, params, first_idx, pos_rows, has_first)
    q = T.matmul(ctx, bundle.wq)  # (B, d)
    if remaining is not None:
        cap = T.Array(np.asarray(remaining, dtype=np.float32).reshape(-1, 1))
        q = T.add(q, T.linear(cap, params["ctx.cap.w"], params["ctx.cap.b"]))

    qh = _split_heads(T.reshape(q, (B, 1, d)), cfg.n_heads)      # (B,H,1,dh)
    scores = T.mul(T.matmul(qh, T.swap_last(cache.k)), 1.0 / np.sqrt(cfg.head_dim))
    glimpse_mask = np.ones((B, 1, 1, rows), dtype=bool)
    glimpse_mask[..., offset:] = ~action_mask[:, None, None, :]
    glimpse_mask[..., :offset] = False  # depot row always attendable
    att = T.softmax(T.masked_fill(scores, glimpse_mask, -np.inf), axis=-1)
    glimpse = T.matmul(T.reshape(_merge_heads(T.matmul(att, cache.v)), (B, d)), bundle.wmha)

    keys = T.narrow(enc.embeddings, 1, offset, n_act)            # raw embeddings per Eq-7 style
    raw = T.mul(T.matmul(T.reshape(glimpse, (B, 1, d)), T.swap_last(keys)), 1.0 / np.sqrt(d))
    clipped = T.mul(T.tanh(T.reshape(raw, (B, n_act))), cfg.logit_clip)
    return T.masked_fill(clipped, ~action_mask, -np.inf)


def decode_step(enc: EncodedInstance, bundle: DecoderBundle, state: ConstructionState,
                params: dict[str, T.Array], cfg: ModelConfig,
                cache: DecoderCache | None = None) -> np.ndarray:
    """Action probabilities for a single construction state (sums to one)."""
    inst = state.inst
    mask = feasible_mask(inst, state)
    if not mask.any():
        raise ContractViolation("decode_step called with no admissible action")
    if cache is None:
        cache = build_cache(enc, bundle, cfg)
    offset = 1 if inst.kind == "mocvrp" else 0
    has_first = len(state.order) > 0
    first = np.array([state.order[0] + offset if has_first else 0])
    pos = np.array([state.position + offset if state.position >= 0 else 0])
    remaining = None
    if inst.kind == "mocvrp":
        remaining = np.array([state.remaining])
    elif inst.kind == "mokp":
        remaining = np.array([state.remaining / inst.capacity])
    logits = decode_logits(enc, bundle, cache, params, cfg, mask[None, :],
                           first, pos, has_first, remaining)
    probs = T.softmax(logits, axis=-1).data[0].astype(np.float64)
    return probs / probs.sum()


# ---------------------------------------------------------------------------
# rollout drivers


@dataclass
class Rollout:
    solution: Solution
    logp: float
    start: int
    actions: tuple[int, ...] = ()      # raw visit order (pre-canonicalization)


def _choose_starts(n: int, count: int, mode: str, rng) -> np.ndarray:
    if count > n:
        raise ConfigurationError(f"requested {count} starts but only {n} are available")
    if count == n or mode == "greedy" or rng is None:
        return np.arange(count)
    return rng.choice(n, size=count, replace=False)


def rollout_batch(instances: Sequence[ProblemInstance], enc: EncodedInstance,
                  bundle: DecoderBundle, params: dict[str, T.Array], cfg: ModelConfig,
                  mode: str = "greedy", starts: int | None = None,
                  rng: np.random.Generator | None = None,
                  forced_actions: np.ndarray | None = None) -> tuple[list[Rollout], T.Array | None]:
    """Construct `starts` solutions per instance, batched over rollout rows.

    The first action of each rollout is its start and contributes no
    log-probability (it is forced, not sampled).  Returns the rollouts plus a
    tracked (R,) log-prob vector when called under an active tape.
    """
    if mode not in ("greedy", "sample"):
        raise ConfigurationError(f"mode must be greedy|sample, got {mode!r}")
    B = len(instances)
    inst0 = instances[0]
    n = inst0.n
    S = starts if starts is not None else n
    start_ids = _choose_starts(n, S, mode, rng)

    # expand encodings from B instances to R = B*S rollout rows
    R = B * S
    d = cfg.embed_dim
    rows = enc.embeddings.shape[1]
    rep = np.repeat(np.arange(B), S)
    emb = T.take_batch(enc.embeddings, rep)
    enc_r = EncodedInstance(kind=enc.kind, n=n, embeddings=emb, mean=None)
    cache = build_cache(enc_r, bundle, cfg)

    states = [ConstructionState(instances[b]) for b in rep]
    offset = 1 if inst0.kind == "mocvrp" else 0
    starts_per_row = np.tile(start_ids, B)
    if forced_actions is not None:
        starts_per_row = forced_actions[:, 0]

    logp_terms: list[T.Array] = []
    step = 0
    while True:
        active = np.array([not st.done for st in states])
        if inst0.kind == "mocvrp":
            for st in states:
                if not st.done and not feasible_mask(st.inst, st).any():
                    reset_vehicle(st)
        if not active.any():
            break

        masks = np.zeros((R, n), dtype=bool)
        for r, st in enumerate(states):
            if active[r]:
                masks[r] = feasible_mask(st.inst, st)
            else:
                masks[r, 0] = True  # placeholder row, contribution masked out below

        if step == 0:
            actions = starts_per_row.copy()
        else:
            first_idx = np.array([st.order[0] + offset for st in states])
            pos_rows = np.array([st.position + offset if st.position >= 0 else 0 for st in states])
            remaining = None
            if inst0.kind == "mocvrp":
                remaining = np.array([st.remaining for st in states])
            elif inst0.kind == "mokp":
                remaining = np.array([st.remaining / st.inst.capacity for st in states])
            logits = decode_logits(enc_r, bundle, cache, params, cfg, masks,
                                   first_idx, pos_rows, True, remaining)
            logp = T.log_softmax(logits, axis=-1)
            if forced_actions is not None:
                actions = forced_actions[:, step].copy()
            elif mode == "greedy":
                actions = np.argmax(logp.data, axis=-1)
            else:
                probs = np.exp(logp.data.astype(np.float64))
                probs /= probs.sum(axis=1, keepdims=True)
                u = rng.random(R)
                actions = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
                actions = np.minimum(actions, n - 1)
                bad = ~masks[np.arange(R), actions]  # cumsum edge cases land on masked slots
                if bad.any():
                    actions[bad] = np.argmax(probs[bad], axis=1)
            chosen = T.gather_last(logp, actions)
            chosen = T.mul(chosen, active.astype(np.float32))  # inactive rows contribute 0
            logp_terms.append(chosen)

        for r, st in enumerate(states):
            if active[r]:
                apply_action(st, int(actions[r]))
        step += 1

    total_logp = reduce(T.add, logp_terms) if logp_terms else T.Array(np.zeros(R, dtype=np.float32))
    rollouts = []
    for r, st in enumerate(states):
        sol = finish_solution(st)
        rollouts.append(Rollout(solution=sol, logp=float(total_logp.data[r]),
                                start=int(starts_per_row[r]), actions=tuple(st.order)))
    return rollouts, total_logp


def rollout(instance: ProblemInstance, lam, params: dict[str, T.Array], cfg: ModelConfig,
            mode: str = "greedy", starts: int | None = None,
            rng: np.random.Generator | None = None,
            enc: EncodedInstance | None = None) -> list[Rollout]:
    """Encode (or reuse an encoding), condition on `lam`, construct solutions."""
    if enc is None:
        enc = encode(instance, params, cfg)
    bundle = decoder_params(lam, params, cfg)
    outs, _ = rollout_batch([instance], enc, bundle, params, cfg,
                            mode=mode, starts=starts, rng=rng)
    return outs


def score_rollout(instance: ProblemInstance, lam, params: dict[str, T.Array], cfg: ModelConfig,
                  start: int, actions: Sequence[int]) -> float:
    """Teacher-forced re-scoring: log-probability of a fixed action sequence."""
    enc = encode(instance, params, cfg)
    bundle = decoder_params(lam, params, cfg)
    forced = np.array([[start] + list(actions)])
    outs, _ = rollout_batch([instance], enc, bundle, params, cfg,
                            mode="greedy", starts=1, forced_actions=forced)
    return outs[0].logp


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, T.Array], meta: dict) -> None:
    """Header JSON + little-endian float32 payload + sha256 integrity checksum."""
    names = list(params.keys())
    payload = b"".join(np.ascontiguousarray(params[k].data, dtype="<f4").tobytes() for k in names)
    header = dict(meta)
    header["version"] = CHECKPOINT_VERSION
    header["params"] = [[k, list(params[k].shape)] for k in names]
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict[str, T.Array], dict]:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {header.get('version')}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ContractViolation("checkpoint payload failed its integrity checksum")
    params: dict[str, T.Array] = {}
    cursor = 0
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=cursor).reshape(shape)
        params[name] = T.Array(arr.copy(), requires_grad=True, name=name)
        cursor += count * 4
    meta = {k: v for k, v in header.items() if k not in ("params", "sha256", "version")}
    return params, meta
