import math

import numpy as np
import pytest

from nairs.dataset import UserHistory, build_user_histories
from nairs.errors import TrainingDivergedError
from nairs.model import Hyperparams, ModelParams, init_params, predict, predict_fism, sigmoid
from nairs.training import (
    LOG_CLAMP,
    TrainingInstance,
    batch_gradients,
    batch_loss,
    fit,
    sgd_step,
)

from conftest import random_histories, random_params


# ---------------------------------------------------------------------------
# Independent oracles. The finite-difference oracle only calls batch_loss
# (the forward pass); the analytic backward path never enters it.
# ---------------------------------------------------------------------------

TENSOR_NAMES = ("P", "Q", "user_bias", "item_bias", "W", "V", "b")


def tensors_of(params):
    return {
        "P": params.P, "Q": params.Q,
        "user_bias": params.user_bias, "item_bias": params.item_bias,
        "W": params.attn.W, "V": params.attn.V, "b": params.attn.b,
    }


def grad_tensors(grads):
    return {
        "P": grads.dP, "Q": grads.dQ,
        "user_bias": grads.db_u, "item_bias": grads.db_i,
        "W": grads.dW, "V": grads.dV, "b": grads.db,
    }


def numerical_gradients(params, batch, histories, hp, step=1e-4):
    """Central finite differences of batch_loss over every coordinate."""
    out = {}
    for name, arr in tensors_of(params).items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = batch_loss(params, batch, histories, hp)
            flat[i] = orig - step
            lm = batch_loss(params, batch, histories, hp)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * step)
        out[name] = g
    return out


def naive_batch_loss(params, batch, histories, hp):
    """Reference loss built from the public predict functions."""
    ce = 0.0
    for inst in batch:
        hist = histories.get(inst.user, UserHistory(inst.user, []))
        if hp.variant == "fism":
            r = predict_fism(params, inst.user, hist, inst.target, hp.fism_alpha)
        else:
            r = predict(params, inst.user, hist, inst.target, hp)
        p = sigmoid(r)
        ce += -math.log(max(p, LOG_CLAMP)) if inst.label == 1 else \
            -math.log(max(1.0 - p, LOG_CLAMP))
    reg = np.sum(params.P ** 2) + np.sum(params.Q ** 2)
    if hp.variant != "fism":
        reg += np.sum(params.attn.W ** 2) + np.sum(params.attn.V ** 2)
    return ce / len(batch) + hp.lam * float(reg)


def reachable_rows(batch, histories):
    """Recompute touched P/Q rows from first principles (sets, no numpy)."""
    touched_p, touched_q = set(), set()
    for inst in batch:
        hist = histories.get(inst.user)
        items = hist.items if hist else []
        included = [j for j in items if j != inst.target]
        touched_p.update(included)
        if included:
            touched_q.add(inst.target)
    return touched_p, touched_q


def min_preactivation_margin(params, batch, histories):
    """Smallest |W p_j + b| over history rows the batch can reach."""
    margin = np.inf
    for inst in batch:
        hist = histories.get(inst.user)
        if not hist or not hist.items:
            continue
        Z = params.P[hist.items] @ params.attn.W.T + params.attn.b
        margin = min(margin, float(np.min(np.abs(Z))))
    return margin


def random_config(rng, relu_margin=2e-3):
    """Random (params, batch, histories, hp); rejects ReLU-kink-adjacent draws."""
    while True:
        num_users, num_items = 3, 5
        d, a = 4, 3
        hp = Hyperparams(
            d=d, a=a,
            beta=float(rng.choice([0.0, 0.3, 0.5, 1.0])),
            fism_alpha=float(rng.choice([0.0, 0.5, 1.0])),
            lam=float(rng.choice([0.0, 1e-3, 1e-2])),
            activation=str(rng.choice(["relu", "tanh"])),
            variant=str(rng.choice(["nairs", "nairs", "nairs", "fism"])),
        )
        params = random_params(rng, num_users, num_items, d, a)
        histories = random_histories(rng, num_users, num_items)
        size = int(rng.integers(1, 7))
        batch = []
        for _ in range(size):
            u = int(rng.integers(0, num_users))
            hist = histories.get(u)
            if hist and rng.random() < 0.4:
                t = int(rng.choice(hist.items))  # force self-exclusion paths
            else:
                t = int(rng.integers(0, num_items))
            batch.append(TrainingInstance(u, t, int(rng.integers(0, 2))))
        if hp.variant != "fism" and hp.activation == "relu":
            if min_preactivation_margin(params, batch, histories) < relu_margin:
                continue  # finite differences straddle the kink; redraw
        return params, batch, histories, hp


def check_gradients(params, batch, histories, hp, step=1e-4, tol=1e-4):
    """Max relative error between analytic and FD gradients.

    Coordinates below 1e-3 in magnitude are compared absolutely at the same
    tolerance scale. When lam > 0, unreachable P/Q rows are asserted to be
    exactly zero and skipped in the FD comparison (the sparse-regularizer
    contract), since the full-tensor loss penalizes them.
    """
    analytic = grad_tensors(batch_gradients(params, batch, histories, hp))
    numeric = numerical_gradients(params, batch, histories, hp, step=step)
    touched_p, touched_q = reachable_rows(batch, histories)
    worst = 0.0
    for name in TENSOR_NAMES:
        a_mat, n_mat = analytic[name], numeric[name]
        mask = np.ones_like(a_mat, dtype=bool)
        if name == "P":
            skip = [r for r in range(a_mat.shape[0]) if r not in touched_p]
            assert np.all(a_mat[skip] == 0.0)
            if hp.lam > 0:
                mask[skip] = False
        if name == "Q":
            skip = [r for r in range(a_mat.shape[0]) if r not in touched_q]
            assert np.all(a_mat[skip] == 0.0)
            if hp.lam > 0:
                mask[skip] = False
        diff = np.abs(a_mat - n_mat)[mask]
        denom = np.maximum(np.maximum(np.abs(a_mat), np.abs(n_mat))[mask], 1e-3)
        if diff.size:
            worst = max(worst, float(np.max(diff / denom)))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e}"
    return worst


# ---------------------------------------------------------------------------
# Loss contract
# ---------------------------------------------------------------------------

def zero_params(num_users=2, num_items=4, d=3, a=2):
    hp = Hyperparams(d=d, a=a, lam=0.0)
    params = init_params(num_users, num_items, hp)
    for arr in tensors_of(params).values():
        arr[:] = 0.0
    return params, hp


def test_single_positive_at_zero_score_gives_ln2():
    params, hp = zero_params()
    histories = {0: UserHistory(0, [1, 2])}
    loss = batch_loss(params, [TrainingInstance(0, 3, 1)], histories, hp)
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_single_negative_at_zero_score_gives_ln2():
    params, hp = zero_params()
    histories = {0: UserHistory(0, [1, 2])}
    loss = batch_loss(params, [TrainingInstance(0, 3, 0)], histories, hp)
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_regularizer_adds_lambda_theta_squared():
    params, hp = zero_params()
    hp.lam = 1.0
    params.P[2, 1] = 2.0
    histories = {0: UserHistory(0, [1])}
    loss = batch_loss(params, [TrainingInstance(0, 3, 1)], histories, hp)
    # q is zero so the score is 0 regardless of P; CE stays ln 2
    assert loss == pytest.approx(math.log(2.0) + 4.0, abs=1e-12)


def test_batch_loss_matches_predict_based_reference():
    rng = np.random.default_rng(5)
    for _ in range(50):
        params, batch, histories, hp = random_config(rng)
        fast = batch_loss(params, batch, histories, hp)
        slow = naive_batch_loss(params, batch, histories, hp)
        assert fast == pytest.approx(slow, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# Gradient contract
# ---------------------------------------------------------------------------

def test_bias_gradient_at_zero_params():
    params, hp = zero_params()
    histories = {0: UserHistory(0, [1, 2])}
    g_pos = batch_gradients(params, [TrainingInstance(0, 3, 1)], histories, hp)
    g_neg = batch_gradients(params, [TrainingInstance(0, 3, 0)], histories, hp)
    assert g_pos.db_i[3] == pytest.approx(-0.5, abs=1e-15)
    assert g_neg.db_i[3] == pytest.approx(0.5, abs=1e-15)
    assert g_pos.db_u[0] == pytest.approx(-0.5, abs=1e-15)


def test_gradients_match_finite_differences_100_configs():
    rng = np.random.default_rng(42)
    for _ in range(100):
        params, batch, histories, hp = random_config(rng)
        check_gradients(params, batch, histories, hp)


def test_gradient_locality_untouched_rows_zero():
    rng = np.random.default_rng(9)
    params, batch, histories, hp = random_config(rng)
    hp.lam = 1e-2
    grads = batch_gradients(params, batch, histories, hp)
    touched_p, touched_q = reachable_rows(batch, histories)
    for r in range(params.num_items):
        if r not in touched_p:
            assert np.all(grads.dP[r] == 0.0)
        if r not in touched_q:
            assert np.all(grads.dQ[r] == 0.0)


def test_regularizer_gradient_is_2_lambda_theta():
    # Construct zero CE signal: label "equal" to sigmoid(r_hat) is impossible
    # with binary labels, so use paired instances (one positive, one negative
    # with identical scores at r_hat=0) whose CE gradients cancel exactly.
    rng = np.random.default_rng(17)
    hp = Hyperparams(d=4, a=3, beta=0.5, lam=1e-2)
    params = random_params(rng, 2, 4, 4, 3)
    params.user_bias[:] = 0.0
    params.item_bias[:] = 0.0
    params.Q[:] = 0.0  # scores are exactly 0 -> sigma = 1/2
    histories = {0: UserHistory(0, [0, 1])}
    batch = [TrainingInstance(0, 2, 1), TrainingInstance(0, 2, 0)]
    grads = batch_gradients(params, batch, histories, hp)
    assert np.allclose(grads.dW, 2 * hp.lam * params.attn.W, atol=1e-15)
    assert np.allclose(grads.dV, 2 * hp.lam * params.attn.V, atol=1e-15)
    assert np.allclose(grads.dP[[0, 1]], 2 * hp.lam * params.P[[0, 1]], atol=1e-15)
    # Q row 2 is touched (history non-empty): reg applies; CE part cancels.
    assert np.allclose(grads.dQ[2], 2 * hp.lam * params.Q[2], atol=1e-15)


def test_one_small_sgd_step_does_not_increase_loss():
    rng = np.random.default_rng(23)
    for _ in range(20):
        params, batch, histories, hp = random_config(rng)
        before = batch_loss(params, batch, histories, hp)
        grads = batch_gradients(params, batch, histories, hp)
        sgd_step(params, grads, lr=1e-3)
        after = batch_loss(params, batch, histories, hp)
        assert after <= before + 1e-9


# ---------------------------------------------------------------------------
# fit()
# ---------------------------------------------------------------------------

def toy_hp(**overrides):
    from nairs.benchmark import two_cluster_hyperparams

    hp = two_cluster_hyperparams()
    for key, value in overrides.items():
        setattr(hp, key, value)
    return hp


def test_fit_learns_two_cluster_structure(toy):
    from nairs.dataset import leave_one_out_split

    split = leave_one_out_split(toy)
    params, report = fit(split.train, toy_hp())
    assert report.rows[-1].loss < report.rows[0].loss

    histories = build_user_histories(split.train)
    hp = toy_hp()
    hits = 0
    for user, held_out in split.test:
        candidates = [i for i in range(toy.num_items)
                      if i not in set(histories[user].items)]
        scored = sorted(
            candidates,
            key=lambda i: (-predict(params, user, histories[user], i, hp), i),
        )
        if held_out in scored[:3]:
            hits += 1
    assert hits >= 4, f"only {hits}/5 held-out items in top-3"


def test_fit_epochs_zero_returns_initialization(toy):
    hp = toy_hp(epochs=0)
    params, report = fit(toy, hp)
    reference = init_params(toy.num_users, toy.num_items, hp)
    for name, arr in tensors_of(params).items():
        assert np.array_equal(arr, tensors_of(reference)[name])
    assert report.rows == []


def test_fit_is_deterministic_per_seed(toy):
    hp = toy_hp(epochs=5)
    p1, _ = fit(toy, hp)
    p2, _ = fit(toy, hp)
    for name in TENSOR_NAMES:
        assert np.array_equal(tensors_of(p1)[name], tensors_of(p2)[name])


def test_fit_aborts_on_divergence(toy):
    hp = toy_hp(epochs=3, optimizer="sgd", lr=1e160, lam=1e-2)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingDivergedError):
        fit(toy, hp)


def test_fit_calls_eval_hook_each_epoch(toy):
    seen = []

    def hook(epoch, params):
        seen.append(epoch)
        return 0.5, 0.25

    hp = toy_hp(epochs=3)
    _, report = fit(toy, hp, eval_hook=hook)
    assert seen == [0, 1, 2]
    assert all(row.hr == 0.5 and row.ndcg == 0.25 for row in report.rows)
