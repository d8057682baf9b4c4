"""Fitting the model: regularized log loss with sampled negatives.

Gradients are derived by hand through the prediction, the smoothed softmax,
and the alignment network, and are checked against a central finite-difference
oracle in the test suite. The loss over a batch is the mean binary
cross-entropy on sigmoid(score) plus lam * |theta|^2 over the embedding
matrices and (for the attentive variant) the alignment weights; biases are
unregularized.

Gradient semantics for embeddings are sparse: only rows reachable from the
batch (history items actually attended, targets of non-cold instances)
receive a gradient, including their share of the regularizer. Rows the batch
never touches are reported as exactly zero.

The batch pass is laid out flat: runs of consecutive same-user instances
share one copy of the user's history rows, and each instance's target
self-exclusion is applied by subtracting that one item's contribution from
the shared run sums, keeping per-instance work O(d).
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import InteractionSet, UserHistory, build_user_histories
from .errors import TrainingDivergedError
from .model import Hyperparams, ModelParams, init_params, sigmoid

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(*args, **kwargs):
        return contextlib.nullcontext()

LOG_CLAMP = 1e-12  # keeps the cross-entropy finite under saturation


@dataclass(frozen=True)
class TrainingInstance:
    user: int
    target: int
    label: int


@dataclass
class GradientSet:
    """Gradients mirroring ModelParams shape-for-shape."""

    dP: np.ndarray
    dQ: np.ndarray
    db_u: np.ndarray
    db_i: np.ndarray
    dW: np.ndarray
    dV: np.ndarray
    db: np.ndarray


@dataclass
class EpochRow:
    epoch: int
    loss: float
    hr: float | None
    ndcg: float | None
    seconds: float


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _scatter_rows(dest: np.ndarray, idx: np.ndarray, values: np.ndarray) -> None:
    """dest[idx] += values with repeated indices, via bincount."""
    if idx.size == 0:
        return
    n = dest.shape[0]
    if values.ndim == 1:
        dest += np.bincount(idx, weights=values, minlength=n)
        return
    d = values.shape[1]
    flat_idx = (idx[:, None] * d + np.arange(d)).ravel()
    dest += np.bincount(flat_idx, weights=values.ravel(), minlength=n * d).reshape(n, d)


def _build_layout(histories: dict[int, UserHistory]) -> dict:
    """Per-user history arrays and item->position maps, built once."""
    layout = {}
    for user, hist in histories.items():
        if hist.items:
            layout[user] = (
                np.asarray(hist.items, dtype=np.int64),
                {j: k for k, j in enumerate(hist.items)},
            )
    return layout


class _FlatBatch:
    """Flat history rows plus per-instance index arrays for one batch.

    ``excl_pos`` (optional) gives each instance's target position inside its
    user's history (-1 when absent), letting the training loop skip the
    per-instance dictionary lookups it has already done once per epoch.
    """

    __slots__ = ("hist_idx", "run_starts", "run_len", "inst_run", "excl_row",
                 "seg_starts", "seg_is_run", "T", "R")

    def __init__(self, users: np.ndarray, targets: np.ndarray, layout: dict,
                 excl_pos: np.ndarray | None = None):
        B = users.size
        if B == 0:
            raise ValueError("batch must be non-empty")
        boundaries = np.flatnonzero(users[1:] != users[:-1]) + 1
        seg_starts = np.concatenate(([0], boundaries)).astype(np.int64)
        seg_is_run = np.zeros(seg_starts.size, dtype=bool)

        parts: list[np.ndarray] = []
        run_starts: list[int] = []
        run_len: list[int] = []
        inst_run = np.full(B, -1, dtype=np.int64)
        run_offset = np.zeros(B, dtype=np.int64)
        excl_row = np.full(B, -1, dtype=np.int64)

        offset = 0
        for s, seg_lo in enumerate(seg_starts):
            seg_hi = seg_starts[s + 1] if s + 1 < seg_starts.size else B
            entry = layout.get(int(users[seg_lo]))
            if entry is None:
                continue
            items, pos_of = entry
            run_id = len(run_starts)
            seg_is_run[s] = True
            run_starts.append(offset)
            run_len.append(items.size)
            parts.append(items)
            inst_run[seg_lo:seg_hi] = run_id
            if excl_pos is None:
                for t in range(seg_lo, seg_hi):
                    x = pos_of.get(int(targets[t]))
                    if x is not None:
                        excl_row[t] = offset + x
            else:
                run_offset[seg_lo:seg_hi] = offset
            offset += items.size

        if excl_pos is not None:
            known = (excl_pos >= 0) & (inst_run >= 0)
            excl_row = np.where(known, run_offset + excl_pos, -1)

        self.hist_idx = np.concatenate(parts) if parts else np.zeros(0, np.int64)
        self.run_starts = np.asarray(run_starts, dtype=np.int64)
        self.run_len = np.asarray(run_len, dtype=np.int64)
        self.inst_run = inst_run
        self.excl_row = excl_row
        self.seg_starts = seg_starts
        self.seg_is_run = seg_is_run
        self.T = offset
        self.R = self.run_starts.size


def _forward_backward(params: ModelParams, users: np.ndarray, targets: np.ndarray,
                      labels: np.ndarray, flat: _FlatBatch, hp: Hyperparams,
                      want_grads: bool):
    """Shared vectorized pass. Returns (loss, GradientSet | None)."""
    B = users.size
    attn = params.attn
    attentive = hp.variant != "fism"
    T, R = flat.T, flat.R
    hist_idx = flat.hist_idx
    d = params.d

    if T:
        seg = np.repeat(np.arange(R), flat.run_len)
        Ph = params.P[hist_idx]  # (T, d)
        if attentive:
            Z = Ph @ attn.W.T
            Z += attn.b
            if hp.activation == "relu":
                Gp = Z > 0.0
                G = np.where(Gp, Z, 0.0)
            else:
                G = np.tanh(Z)
                Gp = 1.0 - G * G
            e = G @ attn.V  # (T,)
            m_run = np.maximum.reduceat(e, flat.run_starts)
            c = np.exp(e - m_run[seg])
            S_run = np.add.reduceat(c, flat.run_starts)
            C_run = np.add.reduceat(c[:, None] * Ph, flat.run_starts, axis=0)
        else:
            c = np.ones(T)
            S_run = flat.run_len.astype(float)
            C_run = np.add.reduceat(Ph, flat.run_starts, axis=0)

    has_run = flat.inst_run >= 0
    excluded = flat.excl_row >= 0
    safe_run = np.where(has_run, flat.inst_run, 0)
    safe_x = np.where(excluded, flat.excl_row, 0)

    if T:
        c_x = np.where(excluded, c[safe_x], 0.0)
        Ph_x = np.where(excluded[:, None], Ph[safe_x], 0.0)
        n_incl = np.where(has_run, flat.run_len[safe_run] - excluded, 0)
        warm = has_run & (n_incl > 0)
        S_t = np.where(warm, S_run[safe_run] - c_x, 1.0)
        S_t = np.where(S_t > 0.0, S_t, 1.0)  # guarded; warm instances keep S_t > 0
        if attentive:
            # alpha_j = gamma * c_j over included items, with
            # gamma = exp(m - beta * (m + log S_t))
            gamma = np.where(
                warm,
                np.exp((1.0 - hp.beta) * m_run[safe_run] - hp.beta * np.log(S_t)),
                0.0,
            )
        else:
            n_safe = np.where(warm, n_incl, 1).astype(float)
            gamma = np.where(warm, n_safe ** (-hp.fism_alpha), 0.0)
        X = gamma[:, None] * (C_run[safe_run] - c_x[:, None] * Ph_x)  # (B, d)
    else:
        warm = np.zeros(B, dtype=bool)
        X = np.zeros((B, d))

    user_ok = (users >= 0) & (users < params.user_bias.shape[0])
    base = np.where(user_ok, params.user_bias[np.where(user_ok, users, 0)], 0.0)
    base = base + params.item_bias[targets]
    Qt = params.Q[targets]  # (B, d)
    r_hat = base + np.einsum("bd,bd->b", X, Qt)

    p_hat = sigmoid(r_hat)
    correct = np.where(labels == 1.0, p_hat, 1.0 - p_hat)
    ce = -np.log(np.maximum(correct, LOG_CLAMP))
    # theta covers the parameters the active variant actually uses: the
    # alignment weights are only part of the model when attention is on.
    reg = float(np.sum(params.P ** 2) + np.sum(params.Q ** 2))
    if attentive:
        reg += float(np.sum(attn.W ** 2) + np.sum(attn.V ** 2))
    loss = float(np.mean(ce)) + hp.lam * reg
    if not want_grads:
        return loss, None

    grads = GradientSet(
        dP=np.zeros_like(params.P),
        dQ=np.zeros_like(params.Q),
        db_u=np.zeros_like(params.user_bias),
        db_i=np.zeros_like(params.item_bias),
        dW=np.zeros_like(attn.W),
        dV=np.zeros_like(attn.V),
        db=np.zeros_like(attn.b),
    )
    g0 = (p_hat - labels) / B
    _scatter_rows(grads.db_u, users[user_ok], g0[user_ok])
    _scatter_rows(grads.db_i, targets, g0)
    _scatter_rows(grads.dQ, targets[warm], (g0[:, None] * X)[warm])

    touched_q = np.zeros(params.num_items, dtype=bool)
    touched_q[targets[warm]] = True

    if T:
        dx = g0[:, None] * Qt  # (B, d)
        # A_t = dx . X is the softmax-Jacobian contraction sum_j dalpha_j alpha_j
        A = np.einsum("bd,bd->b", dx, X)
        V1 = gamma[:, None] * dx  # (B, d); per-instance correction vector
        k = np.where(warm, A / S_t, 0.0)

        # Per-run sums over instances; cold instances contribute zero rows,
        # and runs are consecutive instance segments, so reduceat applies.
        W1 = np.add.reduceat(V1, flat.seg_starts, axis=0)[flat.seg_is_run]
        K = np.add.reduceat(k, flat.seg_starts)[flat.seg_is_run]

        # Rows excluded by every instance of their run are unreachable.
        seg_sizes = np.diff(np.concatenate((flat.seg_starts, [B])))
        inst_per_run = seg_sizes[flat.seg_is_run]
        if excluded.any():
            excl_count = np.bincount(flat.excl_row[excluded], minlength=T)
            unreachable = excl_count >= inst_per_run[seg]
        else:
            unreachable = np.zeros(T, dtype=bool)

        # dP through the weighted sum: alpha_r^t = gamma_t c_r for included r.
        W1seg = W1[seg]
        dP_flat = c[:, None] * W1seg
        corr_mask = excluded & warm
        rows = flat.excl_row[corr_mask]
        if rows.size:
            _scatter_rows(dP_flat, rows, -(c_x[corr_mask, None] * V1[corr_mask]))

        if attentive:
            # de_r = sum over including instances t of
            #        alpha_r dalpha_r - beta (c_r / S_t) A_t
            de = c * (np.einsum("td,td->t", Ph, W1seg) - hp.beta * K[seg])
            if rows.size:
                corr = c_x[corr_mask] * (
                    np.einsum("bd,bd->b", Ph[rows], V1[corr_mask])
                    - hp.beta * k[corr_mask]
                )
                _scatter_rows(de, rows, -corr)
            de[unreachable] = 0.0
            grads.dV += G.T @ de
            dZ = de[:, None] * (attn.V[None, :] * Gp)
            grads.dW += dZ.T @ Ph
            grads.db += dZ.sum(axis=0)
            dP_flat += dZ @ attn.W

        dP_flat[unreachable] = 0.0
        _scatter_rows(grads.dP, hist_idx, dP_flat)

        touched_p = np.zeros(params.num_items, dtype=bool)
        touched_p[hist_idx[~unreachable]] = True
    else:
        touched_p = np.zeros(params.num_items, dtype=bool)

    if hp.lam > 0.0:
        grads.dP[touched_p] += 2.0 * hp.lam * params.P[touched_p]
        grads.dQ[touched_q] += 2.0 * hp.lam * params.Q[touched_q]
        if attentive:
            grads.dW += 2.0 * hp.lam * attn.W
            grads.dV += 2.0 * hp.lam * attn.V
    return loss, grads


def _batch_arrays(batch: list[TrainingInstance]):
    B = len(batch)
    users = np.fromiter((i.user for i in batch), dtype=np.int64, count=B)
    targets = np.fromiter((i.target for i in batch), dtype=np.int64, count=B)
    labels = np.fromiter((i.label for i in batch), dtype=np.float64, count=B)
    return users, targets, labels


def _batch_pass(params: ModelParams, batch: list[TrainingInstance],
                histories: dict[int, UserHistory], hp: Hyperparams,
                want_grads: bool):
    users, targets, labels = _batch_arrays(batch)
    layout = _build_layout(
        {u: histories[u] for u in set(int(x) for x in users) if u in histories}
    )
    flat = _FlatBatch(users, targets, layout)
    return _forward_backward(params, users, targets, labels, flat, hp, want_grads)


def batch_loss(params: ModelParams, batch: list[TrainingInstance],
               histories: dict[int, UserHistory], hp: Hyperparams) -> float:
    """Mean cross-entropy over the batch plus the L2 term on the model."""
    loss, _ = _batch_pass(params, batch, histories, hp, want_grads=False)
    return loss


def batch_gradients(params: ModelParams, batch: list[TrainingInstance],
                    histories: dict[int, UserHistory], hp: Hyperparams) -> GradientSet:
    """Analytic gradient of batch_loss for every parameter the batch touches."""
    _, grads = _batch_pass(params, batch, histories, hp, want_grads=True)
    return grads


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class AdamState:
    """Adam with bias correction; moments kept for every parameter tensor."""

    def __init__(self, params: ModelParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        slots = self._slots(params)
        self._m = {name: np.zeros_like(arr) for name, arr in slots.items()}
        self._v = {name: np.zeros_like(arr) for name, arr in slots.items()}
        self._scratch = {name: np.empty_like(arr) for name, arr in slots.items()}

    @staticmethod
    def _slots(params: ModelParams):
        return {
            "P": params.P, "Q": params.Q,
            "user_bias": params.user_bias, "item_bias": params.item_bias,
            "W": params.attn.W, "V": params.attn.V, "b": params.attn.b,
        }

    @staticmethod
    def _grad_slots(grads: GradientSet):
        return {
            "P": grads.dP, "Q": grads.dQ,
            "user_bias": grads.db_u, "item_bias": grads.db_i,
            "W": grads.dW, "V": grads.dV, "b": grads.db,
        }

    def step(self, params: ModelParams, grads: GradientSet) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        inv_sqrt_c2 = 1.0 / np.sqrt(1.0 - self.beta2 ** self.t)
        gmap = self._grad_slots(grads)
        for name, arr in self._slots(params).items():
            g = gmap[name]
            m = self._m[name]
            v = self._v[name]
            tmp = self._scratch[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.square(g, out=tmp)
            v *= self.beta2
            tmp *= 1.0 - self.beta2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp *= inv_sqrt_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            arr -= tmp


class SgdState:
    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: GradientSet) -> None:
        params.P -= self.lr * grads.dP
        params.Q -= self.lr * grads.dQ
        params.user_bias -= self.lr * grads.db_u
        params.item_bias -= self.lr * grads.db_i
        params.attn.W -= self.lr * grads.dW
        params.attn.V -= self.lr * grads.dV
        params.attn.b -= self.lr * grads.db


def sgd_step(params: ModelParams, grads: GradientSet, lr: float) -> None:
    """One plain gradient step, in place (used by descent sanity checks)."""
    SgdState(params, lr).step(params, grads)


# ---------------------------------------------------------------------------
# Epoch assembly
# ---------------------------------------------------------------------------

def _epoch_negatives(train: InteractionSet, neg_ratio: int,
                     rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Draw neg_ratio negatives per positive, vectorized per user.

    Users are visited in sorted order so the draw sequence is reproducible;
    the per-user arrays are consumed in interaction order.
    """
    counts: dict[int, int] = {}
    for it in train.interactions:
        counts[it.user] = counts.get(it.user, 0) + 1
    n = train.num_items
    queues: dict[int, np.ndarray] = {}
    for user in sorted(counts):
        need = counts[user] * neg_ratio
        positives = train.user_item_sets[user]
        if len(positives) >= n:
            raise TrainingDivergedError(0, 0, f"user {user} has no negative candidates")
        pos_arr = np.fromiter(positives, dtype=np.int64)
        out = np.empty(need, dtype=np.int64)
        filled = 0
        while filled < need:
            draw = rng.integers(0, n, size=(need - filled) * 2)
            ok = draw[~np.isin(draw, pos_arr)]
            take = min(ok.size, need - filled)
            out[filled:filled + take] = ok[:take]
            filled += take
        queues[user] = out
    return queues


def _epoch_arrays(train: InteractionSet, hp: Hyperparams,
                  rng: np.random.Generator, layout: dict):
    """Group-level arrays for one epoch: user, positive (and its position in
    the user's history), negatives per group."""
    num_groups = len(train.interactions)
    group_user = np.fromiter((it.user for it in train.interactions),
                             dtype=np.int64, count=num_groups)
    group_pos = np.fromiter((it.item for it in train.interactions),
                            dtype=np.int64, count=num_groups)
    group_pos_at = np.fromiter(
        (layout[it.user][1][it.item] for it in train.interactions),
        dtype=np.int64, count=num_groups,
    )
    queues = _epoch_negatives(train, hp.neg_ratio, rng)
    group_negs = np.empty((num_groups, hp.neg_ratio), dtype=np.int64)
    cursor: dict[int, int] = {u: 0 for u in queues}
    for g in range(num_groups):
        u = int(group_user[g])
        at = cursor[u]
        group_negs[g] = queues[u][at:at + hp.neg_ratio]
        cursor[u] = at + hp.neg_ratio
    return group_user, group_pos, group_pos_at, group_negs


def _epoch_batches(train: InteractionSet, hp: Hyperparams,
                   rng: np.random.Generator, layout: dict):
    """Yield (users, targets, labels, excl_pos) arrays: shuffled whole groups.

    Each positive travels with its freshly sampled negatives so a batch holds
    whole (positive + negatives) groups; batch_size counts instances. The
    sampled negatives are never in the history, so only the positive column
    carries an exclusion position.
    """
    group_user, group_pos, group_pos_at, group_negs = _epoch_arrays(
        train, hp, rng, layout)
    order = rng.permutation(group_user.size)
    width = 1 + hp.neg_ratio
    per_batch = max(1, hp.batch_size // width)
    label_row = np.zeros(width)
    label_row[0] = 1.0
    for lo in range(0, order.size, per_batch):
        idx = order[lo:lo + per_batch]
        chunk = idx.size
        targets = np.empty((chunk, width), dtype=np.int64)
        targets[:, 0] = group_pos[idx]
        targets[:, 1:] = group_negs[idx]
        excl_pos = np.full((chunk, width), -1, dtype=np.int64)
        excl_pos[:, 0] = group_pos_at[idx]
        users = np.repeat(group_user[idx], width)
        labels = np.tile(label_row, chunk)
        yield users, targets.reshape(-1), labels, excl_pos.reshape(-1)


def fit(train: InteractionSet, hp: Hyperparams, eval_hook=None,
        init_from: ModelParams | None = None):
    """Train the model; deterministic given the seed.

    Per epoch: resample negatives, shuffle, iterate mini-batches, apply the
    optimizer. ``eval_hook(epoch, params) -> (hr, ndcg) | None`` runs after
    each epoch when provided.

    ``init_from`` warm-starts the embeddings and biases from an existing
    model (attention parameters keep their fresh seeded init). Training the
    attentive model from scratch reliably loses to the uniform-weight
    baseline at short epoch budgets, so benchmark comparisons warm-start it
    from the trained baseline's embeddings.

    Returns (ModelParams, TrainReport).
    """
    hp.validate()
    t_start = time.perf_counter()
    params = init_params(train.num_users, train.num_items, hp)
    if init_from is not None:
        donor = {"P": init_from.P, "Q": init_from.Q,
                 "user_bias": init_from.user_bias, "item_bias": init_from.item_bias}
        mine = {"P": params.P, "Q": params.Q,
                "user_bias": params.user_bias, "item_bias": params.item_bias}
        for name, src in donor.items():
            if src.shape != mine[name].shape:
                raise ValueError(
                    f"init_from {name} has shape {src.shape}, expected {mine[name].shape}")
            mine[name][...] = src
    histories = build_user_histories(train)
    layout = _build_layout(histories)
    report = TrainReport(hyperparams=asdict(hp))

    opt = AdamState(params, hp.lr) if hp.optimizer == "adam" else SgdState(params, hp.lr)

    # One BLAS thread: the per-batch matmuls are too small to parallelize
    # profitably, and a fixed thread count keeps runs bit-reproducible.
    ctx = threadpool_limits(limits=1, user_api="blas")
    with ctx:
        _run_epochs(train, hp, params, histories, layout, opt, report, eval_hook)
    report.wall_time = time.perf_counter() - t_start
    return params, report


def _run_epochs(train, hp, params, histories, layout, opt, report, eval_hook):
    for epoch in range(hp.epochs):
        t_epoch = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([hp.seed, epoch]))
        loss_sum = 0.0
        inst_count = 0
        for batch_idx, (users, targets, labels, excl_pos) in enumerate(
                _epoch_batches(train, hp, rng, layout)):
            flat = _FlatBatch(users, targets, layout, excl_pos=excl_pos)
            loss, grads = _forward_backward(
                params, users, targets, labels, flat, hp, want_grads=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_idx)
            opt.step(params, grads)
            loss_sum += loss * users.size
            inst_count += users.size
        epoch_loss = loss_sum / max(inst_count, 1)
        hr = ndcg = None
        if eval_hook is not None:
            result = eval_hook(epoch, params)
            if result is not None:
                hr, ndcg = result
        report.rows.append(EpochRow(
            epoch=epoch, loss=float(epoch_loss), hr=hr, ndcg=ndcg,
            seconds=time.perf_counter() - t_epoch,
        ))


def write_report(report: TrainReport, path: str) -> None:
    """One epoch per line: epoch, loss, HR@10, NDCG@10, seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in sorted(report.hyperparams.items()):
            fh.write(f"# {key}={value}\n")
        fh.write("epoch\tloss\thr10\tndcg10\tseconds\n")
        for row in report.rows:
            hr = "" if row.hr is None else f"{row.hr:.6f}"
            ndcg = "" if row.ndcg is None else f"{row.ndcg:.6f}"
            fh.write(f"{row.epoch}\t{row.loss:.8f}\t{hr}\t{ndcg}\t{row.seconds:.3f}\n")
