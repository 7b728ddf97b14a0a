"""AdamW and the two-stage training schedule.

Stage ``vt`` optimises the MGFI head (and optionally the temperature) with
the audio term switched off.  Stage ``audio`` starts from a ``vt``
checkpoint, keeps every MGFI tensor frozen and finetunes only the CMFI head
on the full fused loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, init_checkpoint
from .cmfi import CmfiParams
from .embeddings import Item
from .errors import DegenerateInputError
from .gradcheck import gradcheck_all  # noqa: F401  re-exported for callers of the training API
from .mgfi import MgfiParams
from .objective import ObjectiveConfig, loss_and_grads

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 5
    stage: str = "vt"
    lr_head: float = 1e-4
    lr_audio_head: float = 5e-5
    weight_decay: float = 0.01
    seed: int = 0
    temperature: float = 100.0
    audio_weight: float = 1.0
    learn_temperature: bool = False
    unfreeze_head: bool = False
    absent_audio: str = "zero"
    metric: str = "cosine"
    video_mode: str = "both"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_head < 0 or self.lr_audio_head < 0:
            raise ValueError("learning rates must be non-negative")
        if self.stage not in ("vt", "audio"):
            raise ValueError("stage must be 'vt' or 'audio'")

    def objective(self, use_audio: bool) -> ObjectiveConfig:
        return ObjectiveConfig(
            temperature=self.temperature,
            audio_weight=self.audio_weight,
            absent_audio=self.absent_audio,
            video_mode=self.video_mode,
            use_audio=use_audio,
            metric=self.metric,
        )


# -- AdamW ----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    no_decay: Sequence[str] = (),
) -> tuple[dict, AdamState]:
    """One decoupled-weight-decay Adam update.

    Returns new parameter and state dicts; the inputs are not modified.
    Parameters without an entry in ``grads`` are passed through untouched.
    """
    b1, b2 = betas
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        wd = 0.0 if name in no_decay else weight_decay
        theta = theta - lr * wd * theta
        new_params[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(t, new_m, new_v)


# -- training loop --------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def _log_line(**fields) -> str:
    return " ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in fields.items())


def _rebuild(ck: Checkpoint, params: dict) -> Checkpoint:
    act = ck.mgfi.ff.activation
    merged = ck.tensors()
    merged.update(params)
    return Checkpoint(
        MgfiParams.from_state_dict(merged, activation=act),
        CmfiParams.from_state_dict(merged),
        float(merged["temperature"]),
        ck.stage,
    )


def _train(dataset: Sequence[Item], ck: Checkpoint, cfg: TrainConfig, stage: str) -> TrainResult:
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    use_audio = stage == "audio"
    train_mgfi = stage == "vt" or cfg.unfreeze_head
    groups = []  # (names, lr)
    if train_mgfi:
        names = list(ck.mgfi.state_dict())
        if cfg.learn_temperature and stage == "vt":
            names.append("temperature")
        groups.append((names, cfg.lr_head))
    if use_audio:
        groups.append((list(ck.cmfi.state_dict()), cfg.lr_audio_head))

    tensors = ck.tensors()
    params = {n: tensors[n] for names, _ in groups for n in names}
    state = AdamState()
    result = TrainResult(ck)
    step = 0
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            obj = replace(cfg.objective(use_audio), temperature=ck.temperature)
            try:
                loss, _, grads = loss_and_grads(
                    batch, ck.mgfi, ck.cmfi, obj,
                    train_mgfi=train_mgfi, train_cmfi=use_audio,
                    learn_temperature="temperature" in params,
                )
            except DegenerateInputError as exc:
                msg = f"step={step} stage={stage} skipped: {exc}"
                logger.warning(msg)
                result.log.append(msg)
                step += 1
                continue
            if use_audio and not any(it.audio.present for it in batch):
                # CMFI received no gradient at all; leave it (and its decay) alone
                for name in ck.cmfi.state_dict():
                    grads.pop(name, None)
            new_params, new_m, new_v = {}, dict(state.m), dict(state.v)
            for names, lr in groups:
                upd, st = adamw_step({k: params[k] for k in names}, grads, state, lr, cfg.betas,
                                     cfg.eps, cfg.weight_decay, no_decay=("temperature",))
                new_params.update(upd)
                new_m.update(st.m)
                new_v.update(st.v)
            state = AdamState(state.step + 1, new_m, new_v)
            params = new_params
            ck = _rebuild(ck, params)
            result.losses.append(loss.total)
            result.log.append(_log_line(step=step, epoch=epoch, stage=stage, loss=loss.total,
                                        t2v=loss.t2v, v2t=loss.v2t, batch=len(batch)))
            step += 1
    result.checkpoint = replace(ck, stage=stage)
    return result


def train_stage_vt(dataset: Sequence[Item], cfg: TrainConfig, init: Optional[Checkpoint] = None) -> TrainResult:
    """Optimise the video-text head; audio does not enter the loss."""
    if init is None:
        init = init_checkpoint(dataset[0].dim, seed=cfg.seed, temperature=cfg.temperature)
    return _train(dataset, init, cfg, "vt")


def train_stage_audio(dataset: Sequence[Item], cfg: TrainConfig, frozen: Checkpoint) -> TrainResult:
    """Finetune only the audio head on the fused loss, MGFI held fixed."""
    if frozen.dim != dataset[0].dim:
        raise ValueError(f"checkpoint dim {frozen.dim} != dataset dim {dataset[0].dim}")
    return _train(dataset, frozen, cfg, "audio")
