import math

import numpy as np
import pytest

from moco import problems as P
from moco import tensor as T
from moco import training as TR
from moco.errors import ContractViolation
from moco.model import ModelConfig, decoder_params, encode, encode_batch, init_params, rollout_batch
from moco.training import (AdamState, TrainConfig, TrainState, adam_update,
                           load_train_checkpoint, save_train_checkpoint, train, train_step)

TINY = ModelConfig(embed_dim=16, n_layers=1, n_heads=2, head_dim=8, ff_dim=32,
                   hyper_hidden=(16,), hyper_embed=8)


def _fresh_state(kind="motsp", m=2, seed=0):
    params = init_params(kind, m, TINY, seed=seed)
    return TrainState(params=params, adam=AdamState.zeros_like(params))


# -- adam ---------------------------------------------------------------------

def test_adam_zero_gradient_no_decay_keeps_params():
    params = {"w": T.Array(np.ones(4, dtype=np.float32), requires_grad=True)}
    st = AdamState.zeros_like(params)
    adam_update(params, {"w": np.zeros(4)}, st, lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(params["w"].data, np.ones(4, dtype=np.float32))


def test_adam_first_step_is_signed_lr():
    g = np.array([0.5, -2.0, 1e-3], dtype=np.float64)
    params = {"w": T.Array(np.zeros(3, dtype=np.float64), requires_grad=True)}
    st = AdamState.zeros_like(params)
    adam_update(params, {"w": g}, st, lr=1e-2)
    np.testing.assert_allclose(params["w"].data, -1e-2 * np.sign(g), rtol=1e-4)


def test_adam_matches_scalar_recurrence_oracle():
    rng = np.random.default_rng(0)
    lr, b1, b2, eps, wd = 1e-3, 0.9, 0.999, 1e-8, 1e-2
    gs = rng.normal(size=(100, 5))
    params = {"w": T.Array(rng.normal(size=5).astype(np.float64), requires_grad=True)}
    start = params["w"].data.copy()
    st = AdamState.zeros_like(params)
    for g in gs:
        adam_update(params, {"w": g}, st, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)

    # independent scalar recurrence, one coordinate at a time
    for j in range(5):
        m = v = 0.0
        p = start[j]
        for t, g in enumerate(gs[:, j], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            p -= lr * wd * p
        assert abs(p - params["w"].data[j]) < 1e-6


# -- single steps ----------------------------------------------------------------

def test_step_advantage_mean_is_zero():
    state = _fresh_state()
    config = TrainConfig(kind="motsp", n=6, m=2, batch=4, lr=1e-3, seed=3)
    diag = train_step(state, config, TINY)
    assert abs(diag.mean_advantage) < 1e-5
    assert np.isfinite(diag.mean_cost)


def test_equal_seeds_give_identical_trajectories():
    def run():
        state = _fresh_state(seed=7)
        config = TrainConfig(kind="motsp", n=6, m=2, batch=4, lr=1e-3, seed=11)
        for _ in range(3):
            train_step(state, config, TINY)
        return {k: v.data.copy() for k, v in state.params.items()}

    a, b = run(), run()
    for k in a:
        assert np.array_equal(a[k], b[k]), k


def test_zero_steps_returns_params_unchanged(tmp_path):
    params = init_params("motsp", 2, TINY, seed=0)
    before = {k: v.data.copy() for k, v in params.items()}
    config = TrainConfig(kind="motsp", n=6, m=2, epochs=0, steps_per_epoch=5, batch=2, seed=0)
    result = train(config, TINY, out_dir=str(tmp_path), params=params)
    for k in before:
        assert np.array_equal(result.state.params[k].data, before[k])


def test_non_finite_loss_aborts_with_params_unchanged():
    state = _fresh_state()
    state.params["embed.w"].data[0, 0] = np.inf
    snapshot = {k: v.data.copy() for k, v in state.params.items()}
    config = TrainConfig(kind="motsp", n=5, m=2, batch=2, lr=1e-3, seed=0)
    with pytest.raises(ContractViolation):
        train_step(state, config, TINY)
    for k in snapshot:
        np.testing.assert_array_equal(state.params[k].data, snapshot[k])


@pytest.mark.parametrize("kind", ["mocvrp", "mokp"])
def test_step_runs_for_other_kinds(kind):
    state = _fresh_state(kind=kind)
    config = TrainConfig(kind=kind, n=6, m=2, batch=3, lr=1e-3, seed=5)
    diag = train_step(state, config, TINY)
    assert np.isfinite(diag.mean_cost) and np.isfinite(diag.grad_norm)


def test_multiple_preferences_per_step():
    for K in (2, 4):
        state = _fresh_state()
        config = TrainConfig(kind="motsp", n=5, m=2, k_prefs=K, batch=2, lr=1e-3, seed=2)
        diag = train_step(state, config, TINY)
        assert abs(diag.mean_advantage) < 1e-5


def test_three_objective_ipbi_step():
    params = init_params("motsp", 3, TINY, seed=0)
    state = TrainState(params=params, adam=AdamState.zeros_like(params))
    config = TrainConfig(kind="motsp", n=5, m=3, batch=2, lr=1e-3, seed=9)
    diag = train_step(state, config, TINY)
    assert np.isfinite(diag.mean_cost)


# -- training loop -----------------------------------------------------------------

def test_smoke_training_cost_drops_twenty_percent():
    """motsp n=9: 500 steps cut the mean scalarized cost by at least 20%."""
    state = _fresh_state(seed=0)
    config = TrainConfig(kind="motsp", n=9, m=2, batch=8, lr=3e-3, seed=0)
    costs = [train_step(state, config, TINY).mean_cost for _ in range(500)]
    early = np.mean(costs[:50])
    late = np.mean(costs[-50:])
    assert late < 0.8 * early, f"drop only {1 - late / early:.1%}"


@pytest.mark.parametrize("kind,min_drop", [("mocvrp", 0.04), ("mokp", 0.10)])
def test_other_kinds_learn(kind, min_drop):
    state = _fresh_state(kind=kind)
    config = TrainConfig(kind=kind, n=8, m=2, batch=8, lr=3e-3, seed=0)
    costs = [train_step(state, config, TINY).mean_cost for _ in range(300)]
    drop = 1 - np.mean(costs[-50:]) / np.mean(costs[:50])
    assert drop > min_drop, f"{kind} cost drop only {drop:.1%}"


def test_no_parameter_goes_non_finite_during_smoke():
    state = _fresh_state(seed=1)
    config = TrainConfig(kind="motsp", n=6, m=2, batch=4, lr=1e-3, seed=1)
    for _ in range(50):
        train_step(state, config, TINY)
        for k, p in state.params.items():
            assert np.isfinite(p.data).all(), k


def test_checkpoint_resume_bitwise(tmp_path):
    config = TrainConfig(kind="motsp", n=5, m=2, epochs=2, steps_per_epoch=3,
                         batch=2, lr=1e-3, seed=4)
    full = train(config, TINY, out_dir=str(tmp_path / "full"), resume=False)

    half_dir = tmp_path / "half"
    one = TrainConfig(**{**config.to_dict(), "epochs": 1, "scalarization": None})
    train(one, TINY, out_dir=str(half_dir), resume=False)
    resumed = train(config, TINY, out_dir=str(half_dir), resume=True)

    for k in full.state.params:
        assert np.array_equal(full.state.params[k].data, resumed.state.params[k].data), k


def test_curve_csv_written(tmp_path):
    config = TrainConfig(kind="motsp", n=5, m=2, epochs=1, steps_per_epoch=4,
                         batch=2, lr=1e-3, seed=0)
    train(config, TINY, out_dir=str(tmp_path))
    lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
    assert lines[0].split(",") == ["step", "epoch", "mean_cost", "mean_advantage", "wall_s"]
    assert len(lines) == 5
    assert (tmp_path / "epoch_0001.ckpt").exists()


def test_train_checkpoint_roundtrip(tmp_path):
    state = _fresh_state(seed=6)
    config = TrainConfig(kind="motsp", n=5, m=2, batch=2, lr=1e-3, seed=6)
    train_step(state, config, TINY)
    path = tmp_path / "state.ckpt"
    save_train_checkpoint(path, state, config, TINY)
    restored, meta = load_train_checkpoint(path)
    assert restored.step == state.step and restored.adam.t == state.adam.t
    for k in state.params:
        assert np.array_equal(restored.params[k].data, state.params[k].data)
        assert np.array_equal(restored.adam.m[k], state.adam.m[k])


# -- policy-gradient sanity ------------------------------------------------------------

def _bandit_instance():
    # city 1 is close to city 0, city 2 is far (objective 1); objective 2 mirrored
    coords = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.2, 0.0, 0.8, 0.0],
        [0.8, 0.0, 0.2, 0.0],
    ])
    return P.ProblemInstance("motsp", 3, 2, coords=coords)


def test_bandit_policy_concentrates_on_cheapest_action():
    inst = _bandit_instance()
    lam = np.array([1.0, 0.0])
    params = init_params("motsp", 2, TINY, seed=3)
    adam = AdamState.zeros_like(params)
    rng = np.random.default_rng(0)
    N = 4

    for step in range(2000):
        with T.Tape() as tape:
            enc = encode(inst, params, TINY)
            bundle = decoder_params(lam, params, TINY)
            # N independent sampled rollouts, all forced to start at city 0
            routs, lp = rollout_batch([inst] * N, enc_dup(enc, N), bundle, params, TINY,
                                      mode="sample", starts=1, rng=rng)
            first_choice = np.array([r.actions[1] for r in routs])
            frag_cost = np.where(first_choice == 1, 0.2, 0.8)
            adv = frag_cost - frag_cost.mean()
            loss = T.asum(T.mul(lp, (adv / N).astype(np.float32)))
        grads = T.backward(tape, loss, params)
        adam_update(params, grads, adam, lr=3e-3)
        if step % 200 == 0 and step > 0:
            probs = _first_step_probs(inst, lam, params)
            if probs[1] >= 0.95:
                break
    probs = _first_step_probs(inst, lam, params)
    assert probs[1] >= 0.95, f"policy probability on cheapest action: {probs[1]:.3f}"


def enc_dup(enc, times):
    from moco.model import EncodedInstance
    emb = T.take_batch(enc.embeddings, np.zeros(times, dtype=np.int64))
    return EncodedInstance(kind=enc.kind, n=enc.n, embeddings=emb, mean=None)


def _first_step_probs(inst, lam, params):
    from moco.model import build_cache, decode_step
    enc = encode(inst, params, TINY)
    bundle = decoder_params(lam, params, TINY)
    state = P.ConstructionState(inst)
    P.apply_action(state, 0)
    return decode_step(enc, bundle, state, params, TINY)


def test_shared_baseline_reduces_gradient_variance():
    inst_a = P.sample_instance("motsp", 6, 2, seed=0)
    inst_b = P.sample_instance("motsp", 6, 2, seed=1)
    instances = [inst_a, inst_b]
    lam = np.array([0.5, 0.5])
    params = init_params("motsp", 2, TINY, seed=0)
    N = 4

    def grad_sample(seed, use_baseline):
        rng = np.random.default_rng(seed)
        with T.Tape() as tape:
            enc = encode_batch(instances, params, TINY)
            bundle = decoder_params(lam, params, TINY)
            routs, lp = rollout_batch(instances, enc, bundle, params, TINY,
                                      mode="sample", starts=N, rng=rng)
            objs = np.stack([r.solution.objectives for r in routs])
            costs = objs @ lam
            groups = costs.reshape(len(instances), N)
            adv = groups - groups.mean(axis=1, keepdims=True) if use_baseline else groups
            loss = T.asum(T.mul(lp, (adv.reshape(-1) / costs.size).astype(np.float32)))
        grads = T.backward(tape, loss, params)
        return np.concatenate([grads["hyper.bias"].ravel(), grads["embed.w"].ravel()])

    with_b = np.stack([grad_sample(s, True) for s in range(100)])
    without = np.stack([grad_sample(s, False) for s in range(100)])
    assert with_b.var(axis=0).sum() < without.var(axis=0).sum()
