"""Why an item was recommended: attention weights, contribution scores, fonts.

Two views are exposed: the static per-profile attention weights (what the
default tag cloud shows) and the target-conditioned contribution of each
history item to one recommendation's score (what the cloud morphs into when
a recommendation is clicked). Contributions are an exact additive
decomposition of the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import UserHistory
from .errors import EmptyProfileError
from .model import Hyperparams, ModelParams, attention_weights

DEFAULT_FONT_MIN = 12.0
DEFAULT_FONT_MAX = 32.0


@dataclass
class ProfileInterpretation:
    entries: list[tuple[int, str, float, float]]  # (item, name, weight, font size)


@dataclass
class ContributionBreakdown:
    target: int
    entries: list[tuple[int, float]]  # (history item, alpha * (p_j . q_target))
    bias_part: float

    def total(self) -> float:
        return self.bias_part + sum(v for _, v in self.entries)


def profile_weights(params: ModelParams, history: UserHistory,
                    hp: Hyperparams) -> list[tuple[int, float]]:
    """Attention weight of each history item, paired with its identity."""
    if not history.items:
        raise EmptyProfileError(f"user {history.user} has an empty profile")
    w = attention_weights(params.attn, params.P[history.items], hp.beta, hp.activation)
    return list(zip(history.items, (float(x) for x in w)))


def contribution_scores(params: ModelParams, user: int, history: UserHistory,
                        target: int, hp: Hyperparams) -> ContributionBreakdown:
    """Per-history-item share of the predicted score for one target.

    entry_j = alpha_j * (p_j . q_target) over the self-exclusion-filtered
    history; bias_part + sum(entries) reproduces predict() exactly.
    """
    items = [j for j in history.items if j != target]
    bias = float(params.item_bias[target])
    if 0 <= user < params.user_bias.shape[0]:
        bias += float(params.user_bias[user])
    if not items:
        raise EmptyProfileError("history is empty after excluding the target")
    H = params.P[items]
    w = attention_weights(params.attn, H, hp.beta, hp.activation)
    contributions = w * (H @ params.Q[target])
    return ContributionBreakdown(
        target=target,
        entries=list(zip(items, (float(x) for x in contributions))),
        bias_part=bias,
    )


def tagcloud_scale(weights, f_min: float = DEFAULT_FONT_MIN,
                   f_max: float = DEFAULT_FONT_MAX) -> list[float]:
    """Map weights linearly onto [f_min, f_max]; all-equal gets the midpoint."""
    w = np.asarray(list(weights), dtype=float)
    if w.size == 0:
        raise ValueError("weights must be non-empty")
    if f_min > f_max:
        raise ValueError("f_min must be <= f_max")
    lo, hi = float(np.min(w)), float(np.max(w))
    if hi == lo:
        return [0.5 * (f_min + f_max)] * w.size
    return [float(f_min + (x - lo) / (hi - lo) * (f_max - f_min)) for x in w]


def build_profile_interpretation(
    params: ModelParams, history: UserHistory, names, hp: Hyperparams,
    f_min: float = DEFAULT_FONT_MIN, f_max: float = DEFAULT_FONT_MAX,
) -> ProfileInterpretation:
    """Assemble the tag-cloud payload: names, weights, and font sizes."""
    pairs = profile_weights(params, history, hp)
    fonts = tagcloud_scale([w for _, w in pairs], f_min, f_max)
    entries = [
        (item, names(item) if callable(names) else names.get(item, str(item)), w, f)
        for (item, w), f in zip(pairs, fonts)
    ]
    return ProfileInterpretation(entries=entries)
