"""Multi-granularity and cross-modal interaction heads for text-to-video retrieval.

Operates on precomputed embeddings: a frame sequence per video, a sentence
vector plus word vectors per caption, and an optional audio vector.
"""

from .checkpoint import Checkpoint, init_checkpoint, load_checkpoint, save_checkpoint
from .cmfi import CmfiParams, audio_text_similarity, init_cmfi_params
from .embeddings import (
    AudioEmbedding,
    Item,
    TextEmbedding,
    VideoEmbedding,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import DegenerateInputError, DimensionError, FormatError
from .gradcheck import gradcheck_all
from .metrics import RetrievalReport, evaluate, rank_of_truth
from .mgfi import MgfiParams, init_mgfi_params, pool_video, video_text_similarity
from .objective import ObjectiveConfig, config_for_modules, infonce_loss, similarity_matrix
from .trainer import TrainConfig, adamw_step, train_stage_audio, train_stage_vt

__version__ = "0.1.0"

__all__ = [
    "AudioEmbedding",
    "Checkpoint",
    "CmfiParams",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "Item",
    "MgfiParams",
    "ObjectiveConfig",
    "RetrievalReport",
    "TextEmbedding",
    "TrainConfig",
    "VideoEmbedding",
    "adamw_step",
    "audio_text_similarity",
    "config_for_modules",
    "evaluate",
    "generate_synthetic",
    "gradcheck_all",
    "infonce_loss",
    "init_checkpoint",
    "init_cmfi_params",
    "init_mgfi_params",
    "load_checkpoint",
    "load_dataset",
    "pool_video",
    "rank_of_truth",
    "save_checkpoint",
    "save_dataset",
    "similarity_matrix",
    "train_stage_audio",
    "train_stage_vt",
    "video_text_similarity",
]
