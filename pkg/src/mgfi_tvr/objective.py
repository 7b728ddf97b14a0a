"""Fused B x B similarity matrix and the symmetric InfoNCE loss.

``fused[i, j] = temperature * (vt[i, j] + audio_weight * at[i, j])`` where
rows index videos and columns index captions.  The video-text term comes
from the MGFI head (or the mean-pool baseline), the audio term from CMFI.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import cmfi as cm
from . import mgfi as mg
from .cmfi import CmfiParams
from .embeddings import Item, pack_audio, pack_texts, pack_videos
from .errors import DegenerateInputError
from .mgfi import MgfiParams

VIDEO_MODES = ("base", "sentence", "word", "both")
ABSENT_AUDIO_POLICIES = ("zero", "drop-term")


@dataclass(frozen=True)
class ObjectiveConfig:
    temperature: float = 100.0
    audio_weight: float = 1.0
    absent_audio: str = "zero"
    video_mode: str = "both"
    use_audio: bool = True
    metric: str = "cosine"
    workers: int = 1
    chunk_size: int = 32

    def __post_init__(self):
        if self.video_mode not in VIDEO_MODES:
            raise ValueError(f"video_mode must be one of {VIDEO_MODES}")
        if self.absent_audio not in ABSENT_AUDIO_POLICIES:
            raise ValueError(f"absent_audio must be one of {ABSENT_AUDIO_POLICIES}")
        if self.metric not in ("cosine", "dot"):
            raise ValueError("metric must be 'cosine' or 'dot'")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")


# ablation toggles -> objective settings
def config_for_modules(modules, base: Optional[ObjectiveConfig] = None) -> ObjectiveConfig:
    """Map a subset of ``{"s-f", "w-f", "a-s"}`` onto an :class:`ObjectiveConfig`."""
    modules = set(modules)
    unknown = modules - {"s-f", "w-f", "a-s"}
    if unknown:
        raise ValueError(f"unknown modules: {sorted(unknown)}")
    sf, wf = "s-f" in modules, "w-f" in modules
    mode = {(False, False): "base", (True, False): "sentence", (False, True): "word", (True, True): "both"}[(sf, wf)]
    return replace(base or ObjectiveConfig(), video_mode=mode, use_audio="a-s" in modules)


@dataclass
class SimilarityMatrix:
    vt: np.ndarray
    at: np.ndarray
    fused: np.ndarray
    audio_present: np.ndarray
    temperature: float
    audio_weight: float

    @property
    def batch(self) -> int:
        return self.fused.shape[0]


@dataclass
class LossValue:
    total: float
    t2v: float
    v2t: float


def _video_text_block(texts, videos, mgfi: Optional[MgfiParams], cfg: ObjectiveConfig, offset: int):
    try:
        if cfg.video_mode == "base":
            return mg.mean_pool_matrix(texts, videos, cfg.metric)
        return mg.pairwise_similarity(texts, videos, mgfi, cfg.video_mode, cfg.metric)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"{exc} (video rows start at {offset})") from None


def video_text_matrix(items: Sequence[Item], mgfi: Optional[MgfiParams], cfg: ObjectiveConfig) -> np.ndarray:
    """``vt[i, j] = s(video_i, text_j)``, computed in row chunks.

    Chunks are independent so they may run on a thread pool; assembly is in
    chunk order and every chunk sees the same inputs, so the result does not
    depend on ``cfg.workers``.
    """
    texts = pack_texts([it.text for it in items])
    starts = list(range(0, len(items), cfg.chunk_size))

    def run(start):
        videos = pack_videos([it.video for it in items[start : start + cfg.chunk_size]])
        return _video_text_block(texts, videos, mgfi, cfg, start)

    if cfg.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            blocks = list(pool.map(run, starts))
    else:
        blocks = [run(s) for s in starts]
    return np.concatenate(blocks, axis=0)


def audio_text_matrix(items: Sequence[Item], cmfi: CmfiParams, cfg: ObjectiveConfig):
    """Return ``(at, present)`` with the absent-audio policy applied to ``at``.

    Under ``zero`` audio-free rows hold 0; under ``drop-term`` they hold NaN
    to mark that the term is absent.  Either way the fused score of such a
    row is the video-text score alone.
    """
    dim = items[0].dim
    audio, present = pack_audio([it.audio for it in items], dim)
    sentences = np.stack([it.text.sentence for it in items])
    at = np.zeros((len(items), len(items)))
    if present.any():
        at[present] = cm.audio_text_matrix(audio[present], sentences, cmfi, cfg.metric)
    if cfg.absent_audio == "drop-term":
        at[~present] = np.nan
    return at, present


def fuse(vt: np.ndarray, at: np.ndarray, temperature: float, audio_weight: float) -> np.ndarray:
    return temperature * (vt + audio_weight * np.nan_to_num(at, nan=0.0))


def similarity_matrix(
    items: Sequence[Item],
    mgfi: Optional[MgfiParams],
    cmfi: Optional[CmfiParams],
    cfg: ObjectiveConfig = ObjectiveConfig(),
) -> SimilarityMatrix:
    if not items:
        raise ValueError("empty batch")
    vt = video_text_matrix(items, mgfi, cfg)
    if cfg.use_audio and cmfi is not None:
        at, present = audio_text_matrix(items, cmfi, cfg)
    else:
        present = np.array([it.audio.present for it in items], dtype=bool)
        at = np.zeros_like(vt)
    return SimilarityMatrix(
        vt=vt,
        at=at,
        fused=fuse(vt, at, cfg.temperature, cfg.audio_weight),
        audio_present=present,
        temperature=cfg.temperature,
        audio_weight=cfg.audio_weight,
    )


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    mx = x.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def infonce_loss(m) -> tuple[LossValue, np.ndarray]:
    """Symmetric InfoNCE over a fused matrix (rows = videos, columns = texts).

    The row-wise term normalises each video over all captions, the
    column-wise term each caption over all videos.  Returns the loss and its
    gradient with respect to the fused scores.
    """
    f = np.asarray(m.fused if isinstance(m, SimilarityMatrix) else m, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[0] < 1:
        raise ValueError(f"need a non-empty square matrix, got {f.shape}")
    b = f.shape[0]
    diag = np.diag(f)
    row_lse = _logsumexp(f, axis=1)
    col_lse = _logsumexp(f, axis=0)
    v2t = float(np.mean(row_lse - diag))
    t2v = float(np.mean(col_lse - diag))
    eye = np.eye(b)
    p_row = np.exp(f - row_lse[:, None])
    p_col = np.exp(f - col_lse[None, :])
    grad = (p_row - eye) / b + (p_col - eye) / b
    return LossValue(total=t2v + v2t, t2v=t2v, v2t=v2t), grad


def loss_and_grads(
    items: Sequence[Item],
    mgfi: MgfiParams,
    cmfi: Optional[CmfiParams],
    cfg: ObjectiveConfig,
    train_mgfi: bool = True,
    train_cmfi: bool = True,
    learn_temperature: bool = False,
) -> tuple[LossValue, SimilarityMatrix, dict]:
    """Forward and backward for one training batch.

    Gradients are returned only for the requested parameter groups, keyed
    like the ``state_dict`` names (plus ``temperature`` when learnable).
    """
    texts = pack_texts([it.text for it in items])
    videos = pack_videos([it.video for it in items])
    grads = {}
    if cfg.video_mode == "base":
        vt = mg.mean_pool_matrix(texts, videos, cfg.metric)
        cache = None
    else:
        vt, cache = mg.pair_forward(texts, videos, mgfi, cfg.video_mode, cfg.metric)

    use_audio = cfg.use_audio and cmfi is not None
    if use_audio:
        at, present = audio_text_matrix(items, cmfi, cfg)
    else:
        present = np.array([it.audio.present for it in items], dtype=bool)
        at = np.zeros_like(vt)
    sm = SimilarityMatrix(vt, at, fuse(vt, at, cfg.temperature, cfg.audio_weight), present,
                          cfg.temperature, cfg.audio_weight)
    loss, dfused = infonce_loss(sm)

    if train_mgfi and cache is not None:
        g, _ = mg.pair_backward(dfused * cfg.temperature, cache)
        grads.update(g)
    if train_cmfi and use_audio and present.any():
        audio, _ = pack_audio([it.audio for it in items], items[0].dim)
        dat = dfused[present] * (cfg.temperature * cfg.audio_weight)
        g, _, _ = cm.audio_text_matrix_backward(dat, audio[present], texts.sentence, cmfi, cfg.metric)
        grads.update(g)
    elif train_cmfi and cmfi is not None:
        grads.update({k: np.zeros_like(v) for k, v in cmfi.state_dict().items()})
    if learn_temperature:
        grads["temperature"] = np.array(float((dfused * (vt + cfg.audio_weight * np.nan_to_num(at))).sum()))
    return loss, sm, grads


def gallery_scores(
    query: Item,
    gallery: Sequence[Item],
    mgfi: Optional[MgfiParams],
    cmfi: Optional[CmfiParams],
    cfg: ObjectiveConfig = ObjectiveConfig(),
) -> np.ndarray:
    """Fused score of one caption against every gallery video (text-to-video)."""
    texts = pack_texts([query.text])
    starts = range(0, len(gallery), cfg.chunk_size)
    vt = np.concatenate(
        [
            _video_text_block(texts, pack_videos([it.video for it in gallery[s : s + cfg.chunk_size]]), mgfi, cfg, s)
            for s in starts
        ]
    )[:, 0]
    at = np.zeros_like(vt)
    if cfg.use_audio and cmfi is not None:
        audio, present = pack_audio([it.audio for it in gallery], query.dim)
        if present.any():
            at[present] = cm.audio_text_matrix(audio[present], texts.sentence, cmfi, cfg.metric)[:, 0]
    return fuse(vt, at, cfg.temperature, cfg.audio_weight)
