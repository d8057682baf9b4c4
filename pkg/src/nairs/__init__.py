"""Attentive item-based collaborative filtering with interpretable serving."""

from .dataset import (
    Interaction,
    InteractionSet,
    SplitPair,
    UserHistory,
    build_user_histories,
    from_pairs,
    leave_one_out_split,
    load_dataset,
    load_interactions,
    sample_negatives,
    save_dataset,
)
from .model import (
    AttentionParams,
    Hyperparams,
    ModelParams,
    alignment_score,
    attention_weights,
    init_params,
    load_model,
    model_digest,
    predict,
    predict_fism,
    save_model,
    user_vector,
)
from .training import (
    GradientSet,
    TrainReport,
    TrainingInstance,
    batch_gradients,
    batch_loss,
    fit,
)

__version__ = "0.1.0"
