"""Model parameters and the forward pass.

Prediction for a user is a bias term plus the inner product of the target
item's embedding with a weighted sum of the user's history embeddings. The
weights come either from a small alignment network normalized by a smoothed
softmax (the attentive model) or from a uniform 1/n^alpha rule (the FISM
baseline). Every item carries two embeddings: p (history role) and q (target
role).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import UserHistory
from .errors import EmptyProfileError, SnapshotError, UnsupportedVersionError

SNAPSHOT_FORMAT = "nairs-model"
SNAPSHOT_VERSION = 1

ACTIVATIONS = ("relu", "tanh")
VARIANTS = ("nairs", "fism")
OPTIMIZERS = ("adam", "sgd")


@dataclass
class Hyperparams:
    d: int = 16  # embedding dimension
    a: int = 16  # attention hidden width
    beta: float = 0.5  # softmax smoothing exponent; 1.0 recovers plain softmax
    fism_alpha: float = 0.0  # history-size normalization exponent (uniform weights)
    lam: float = 1e-6  # L2 coefficient on P, Q, W, V
    lr: float = 0.001
    neg_ratio: int = 4
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0
    activation: str = "relu"
    optimizer: str = "adam"
    variant: str = "nairs"  # which weighting rule training optimizes

    def validate(self) -> None:
        if self.d < 1 or self.a < 1:
            raise ValueError("d and a must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if not 0.0 <= self.fism_alpha <= 1.0:
            raise ValueError("fism_alpha must be in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.neg_ratio < 1:
            raise ValueError("neg_ratio must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class AttentionParams:
    W: np.ndarray  # (a, d)
    V: np.ndarray  # (a,)
    b: np.ndarray  # (a,) hidden bias

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.W.copy(), self.V.copy(), self.b.copy())


@dataclass
class ModelParams:
    P: np.ndarray  # (N, d) history-role embeddings
    Q: np.ndarray  # (N, d) target-role embeddings
    user_bias: np.ndarray  # (M,)
    item_bias: np.ndarray  # (N,)
    attn: AttentionParams

    @property
    def num_users(self) -> int:
        return self.user_bias.shape[0]

    @property
    def num_items(self) -> int:
        return self.P.shape[0]

    @property
    def d(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.P.copy(), self.Q.copy(), self.user_bias.copy(),
            self.item_bias.copy(), self.attn.copy(),
        )


def init_params(num_users: int, num_items: int, hp: Hyperparams,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Gaussian(0, 0.01) embeddings and attention weights, zero biases."""
    hp.validate()
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    scale = 0.01
    return ModelParams(
        P=rng.normal(0.0, scale, size=(num_items, hp.d)),
        Q=rng.normal(0.0, scale, size=(num_items, hp.d)),
        user_bias=np.zeros(num_users),
        item_bias=np.zeros(num_items),
        attn=AttentionParams(
            W=rng.normal(0.0, scale, size=(hp.a, hp.d)),
            V=rng.normal(0.0, scale, size=hp.a),
            b=np.zeros(hp.a),
        ),
    )


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x):
    """Overflow-safe logistic function for scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def alignment_scores(attn: AttentionParams, history_embeds: np.ndarray,
                     activation: str) -> np.ndarray:
    """Score each history embedding: V . g(W p + b), vectorized over rows."""
    H = np.atleast_2d(np.asarray(history_embeds, dtype=float))
    if H.shape[1] != attn.W.shape[1]:
        raise ValueError(
            f"embedding dim {H.shape[1]} does not match W columns {attn.W.shape[1]}"
        )
    Z = H @ attn.W.T + attn.b
    return activate(Z, activation) @ attn.V


def alignment_score(attn: AttentionParams, p: np.ndarray, activation: str) -> float:
    """Scalar alignment score for one history embedding."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p must be a vector")
    return float(alignment_scores(attn, p[None, :], activation)[0])


def smoothed_softmax(scores: np.ndarray, beta: float) -> np.ndarray:
    """exp(e_j) / (sum_k exp(e_k))^beta with a max-shift for overflow safety.

    Computed as exp(e_j - m) * sumexp^(-beta) * exp((1-beta) m) with
    sumexp = sum_k exp(e_k - m), which never overflows in the numerator or
    the denominator separately and leaves the value unchanged. beta=1 is the
    standard softmax; beta<1 leaves the weights unnormalized (they no longer
    sum to 1).
    """
    e = np.asarray(scores, dtype=float)
    if e.size == 0:
        raise EmptyProfileError("cannot normalize an empty score list")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    m = float(np.max(e))
    shifted = np.exp(e - m)
    sumexp = float(np.sum(shifted))
    scale = sumexp ** (-beta) * math.exp((1.0 - beta) * m)
    return shifted * scale


def attention_weights(attn: AttentionParams, history_embeds: np.ndarray,
                      beta: float, activation: str) -> np.ndarray:
    """Per-item attention weights for a history, in input order."""
    H = np.asarray(history_embeds, dtype=float)
    if H.size == 0:
        raise EmptyProfileError("empty history")
    return smoothed_softmax(alignment_scores(attn, H, activation), beta)


def _user_bias(params: ModelParams, user: int) -> float:
    # Users minted after training (live profiles) have no trained bias.
    if 0 <= user < params.user_bias.shape[0]:
        return float(params.user_bias[user])
    return 0.0


def user_vector(params: ModelParams, history: UserHistory, hp: Hyperparams) -> np.ndarray:
    """Attention-weighted sum of the history embeddings (the profile vector)."""
    if not history.items:
        raise EmptyProfileError(f"user {history.user} has an empty history")
    H = params.P[history.items]
    w = attention_weights(params.attn, H, hp.beta, hp.activation)
    return w @ H


def fism_vector(params: ModelParams, items: list[int], fism_alpha: float) -> np.ndarray:
    """Uniformly weighted profile vector: sum(p_j) / n^alpha."""
    if not items:
        raise EmptyProfileError("empty history")
    return params.P[items].sum(axis=0) / (len(items) ** fism_alpha)


def predict(params: ModelParams, user: int, history: UserHistory,
            target: int, hp: Hyperparams) -> float:
    """Raw attentive score (pre-sigmoid) of a target item for a user.

    The target is excluded from the attended history when present; if the
    history empties out, the score falls back to the biases alone.
    """
    items = [j for j in history.items if j != target]
    base = _user_bias(params, user) + float(params.item_bias[target])
    if not items:
        return base
    H = params.P[items]
    w = attention_weights(params.attn, H, hp.beta, hp.activation)
    return base + float((w @ H) @ params.Q[target])


def predict_fism(params: ModelParams, user: int, history: UserHistory,
                 target: int, fism_alpha: float) -> float:
    """Raw FISM score: uniform 1/n^alpha weights instead of attention."""
    items = [j for j in history.items if j != target]
    base = _user_bias(params, user) + float(params.item_bias[target])
    if not items:
        return base
    return base + float(fism_vector(params, items, fism_alpha) @ params.Q[target])


def score_candidates(params: ModelParams, user: int, history: UserHistory,
                     candidates, hp: Hyperparams, variant: str = "nairs") -> np.ndarray:
    """Score many candidate items at once (candidates must not be in the history)."""
    cands = np.asarray(candidates, dtype=int)
    base = _user_bias(params, user) + params.item_bias[cands]
    if not history.items:
        return base
    if variant == "fism":
        x = fism_vector(params, history.items, hp.fism_alpha)
    else:
        x = user_vector(params, history, hp)
    return base + params.Q[cands] @ x


# ---------------------------------------------------------------------------
# Snapshot container: one JSON header line, then float64 row-major tensors in
# the fixed order P, Q, user_bias, item_bias, W, V, b.
# ---------------------------------------------------------------------------

_TENSOR_ORDER = ("P", "Q", "user_bias", "item_bias", "W", "V", "b")


def _tensors(params: ModelParams) -> dict[str, np.ndarray]:
    return {
        "P": params.P, "Q": params.Q,
        "user_bias": params.user_bias, "item_bias": params.item_bias,
        "W": params.attn.W, "V": params.attn.V, "b": params.attn.b,
    }


def serialize_model(params: ModelParams, hp: Hyperparams,
                    metadata: dict | None = None) -> bytes:
    tensors = _tensors(params)
    header = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "num_users": int(params.num_users),
        "num_items": int(params.num_items),
        "shapes": {k: list(v.shape) for k, v in tensors.items()},
        "hyperparams": asdict(hp),
        "metadata": metadata or {},
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    buf.write(b"\n")
    for name in _TENSOR_ORDER:
        buf.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(params: ModelParams, hp: Hyperparams, path: str,
               metadata: dict | None = None) -> None:
    """Write the snapshot; byte-identical for identical params and header."""
    with open(path, "wb") as fh:
        fh.write(serialize_model(params, hp, metadata))


def read_snapshot_header(path: str) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"{path}: not a model snapshot")
    if header.get("version") != SNAPSHOT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: snapshot version {header.get('version')} "
            f"(supported: {SNAPSHOT_VERSION})"
        )
    return header


def load_model(path: str) -> tuple[ModelParams, Hyperparams]:
    """Load a snapshot written by save_model; bit-exact round trip."""
    header = read_snapshot_header(path)
    with open(path, "rb") as fh:
        fh.readline()
        blob = fh.read()
    shapes = {k: tuple(v) for k, v in header["shapes"].items()}
    expected = sum(int(np.prod(s)) * 8 for s in shapes.values())
    if len(blob) != expected:
        raise SnapshotError(
            f"{path}: tensor payload is {len(blob)} bytes, expected {expected} "
            "(truncated or corrupt)"
        )
    offset = 0
    arrays: dict[str, np.ndarray] = {}
    for name in _TENSOR_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += count * 8
    hp_dict = dict(header["hyperparams"])
    hp = Hyperparams(**hp_dict)
    params = ModelParams(
        P=arrays["P"], Q=arrays["Q"],
        user_bias=arrays["user_bias"], item_bias=arrays["item_bias"],
        attn=AttentionParams(W=arrays["W"], V=arrays["V"], b=arrays["b"]),
    )
    if params.P.shape != params.Q.shape:
        raise SnapshotError(f"{path}: P and Q shapes differ")
    return params, hp


def model_digest(params: ModelParams, hp: Hyperparams) -> str:
    """Content hash identifying a snapshot (metadata excluded)."""
    return hashlib.sha256(serialize_model(params, hp, metadata=None)).hexdigest()
