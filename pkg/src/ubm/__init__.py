"""Session understanding via a two-level transformer: contrastive
pre-training over augmented item and session views, task fine-tuning
(purchase intention, remaining length, next item), and representation
diagnostics."""

from .augment import MaskPolicy, interaction_reorder, item_token_mask, next_item_pairs
from .analysis import alignment_loss, uniformity_loss
from .contrastive import PretrainConfig, cosine_sim_matrix, info_nce, pretrain
from .encoders import EncoderConfig, UbmConfig, UbmParams, sinusoidal_positions, ubm_forward
from .metrics import evaluate_nip, evaluate_pip, evaluate_rlp
from .optim import Adam, ScheduleConfig, lr_at
from .sessions import (
    Action,
    Interaction,
    Item,
    Query,
    Session,
    TokenLimits,
    Vocabulary,
    build_vocab,
    encode_session,
    parse_session_record,
    tokenize_interaction,
)
from .synth import SynthConfig, derive_task_datasets, generate_corpus
from .tasks import FinetuneConfig, finetune
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Adam",
    "EncoderConfig",
    "FinetuneConfig",
    "Interaction",
    "Item",
    "MaskPolicy",
    "Parameter",
    "PretrainConfig",
    "Query",
    "ScheduleConfig",
    "Session",
    "SynthConfig",
    "Tensor",
    "TokenLimits",
    "UbmConfig",
    "UbmParams",
    "Vocabulary",
    "alignment_loss",
    "build_vocab",
    "cosine_sim_matrix",
    "derive_task_datasets",
    "encode_session",
    "evaluate_nip",
    "evaluate_pip",
    "evaluate_rlp",
    "finetune",
    "generate_corpus",
    "info_nce",
    "interaction_reorder",
    "item_token_mask",
    "lr_at",
    "next_item_pairs",
    "parse_session_record",
    "pretrain",
    "sinusoidal_positions",
    "tokenize_interaction",
    "ubm_forward",
    "uniformity_loss",
]
