"""Audio-sentence head: cosine between ``L(LN(audio))`` and the raw sentence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .embeddings import AudioEmbedding, TextEmbedding
from .errors import DegenerateInputError, DimensionError
from .tensor import LayerNormParams


@dataclass
class CmfiParams:
    ln_audio: LayerNormParams
    proj_w: np.ndarray
    proj_b: np.ndarray

    def __post_init__(self):
        self.proj_w = T.as_f64(self.proj_w)
        self.proj_b = T.as_f64(self.proj_b)
        c = self.ln_audio.dim
        if self.proj_w.shape != (c, c) or self.proj_b.shape != (c,):
            raise DimensionError("CMFI projection must be CxC with a length-C bias")

    @property
    def dim(self) -> int:
        return self.proj_w.shape[0]

    def state_dict(self, prefix: str = "cmfi.") -> dict[str, np.ndarray]:
        return {
            prefix + "ln_audio.gain": self.ln_audio.gain,
            prefix + "ln_audio.bias": self.ln_audio.bias,
            prefix + "proj.weight": self.proj_w,
            prefix + "proj.bias": self.proj_b,
        }

    @classmethod
    def from_state_dict(cls, d: dict, prefix: str = "cmfi.", eps: float = T.LN_EPS) -> "CmfiParams":
        return cls(
            LayerNormParams(d[prefix + "ln_audio.gain"], d[prefix + "ln_audio.bias"], eps),
            d[prefix + "proj.weight"],
            d[prefix + "proj.bias"],
        )


def init_cmfi_params(dim: int) -> CmfiParams:
    """Identity projection, so the untrained head is a normalised-audio cosine."""
    return CmfiParams(LayerNormParams.identity(dim), np.eye(dim), np.zeros(dim))


def project_audio(audio: np.ndarray, p: CmfiParams) -> np.ndarray:
    return T.linear(T.layer_norm(audio, p.ln_audio), p.proj_w, p.proj_b)


def audio_text_matrix(audio: np.ndarray, sentences: np.ndarray, p: CmfiParams, metric: str = "cosine"):
    """``at[i, j] = s(audio_i, sentence_j)`` for stacked (Ba, C) and (Bt, C) inputs."""
    if audio.shape[-1] != p.dim or sentences.shape[-1] != p.dim:
        raise DimensionError("audio/sentence width does not match the CMFI head")
    pa = project_audio(audio, p)
    if metric == "dot":
        return pa @ sentences.T
    na = np.linalg.norm(pa, axis=-1)
    if np.any(na == 0):
        raise DegenerateInputError(f"projected audio has zero norm at index {int(np.argmin(na))}")
    nt = np.linalg.norm(sentences, axis=-1)
    if np.any(nt == 0):
        raise DegenerateInputError(f"zero-norm sentence vector at index {int(np.argmin(nt))}")
    return T.cosine(pa[:, None, :], sentences[None, :, :])


def audio_text_matrix_backward(dAT, audio, sentences, p: CmfiParams, metric: str = "cosine"):
    """Return ``(param_grads, d_audio, d_sentences)`` for ``sum(dAT * at)``."""
    h = T.layer_norm(audio, p.ln_audio)
    pa = T.linear(h, p.proj_w, p.proj_b)
    if metric == "dot":
        dpa = dAT @ sentences
        dsent = dAT.T @ pa
    else:
        dpa3, dsent3 = T.cosine_backward(dAT, pa[:, None, :], sentences[None, :, :])
        dpa = dpa3[:, 0, :]
        dsent = dsent3[0]
    dh, dw, db = T.linear_backward(dpa, h, p.proj_w)
    daudio, dg, dbias = T.layer_norm_backward(dh, audio, p.ln_audio)
    grads = {
        "cmfi.ln_audio.gain": dg,
        "cmfi.ln_audio.bias": dbias,
        "cmfi.proj.weight": dw,
        "cmfi.proj.bias": db,
    }
    return grads, daudio, dsent


def audio_text_similarity(audio: AudioEmbedding, text: TextEmbedding, p: CmfiParams) -> float:
    if not audio.present:
        raise ValueError("audio absent; apply the absent-audio policy instead of scoring")
    return float(audio_text_matrix(audio.audio[None], text.sentence[None], p)[0, 0])


def cmfi_backward(audio: AudioEmbedding, text: TextEmbedding, p: CmfiParams, upstream: float):
    """Gradients of ``upstream * s(audio, text)``: ``(param_grads, d_audio, d_sentence)``."""
    if not audio.present:
        raise ValueError("audio absent")
    grads, da, dt = audio_text_matrix_backward(
        np.array([[upstream]], dtype=np.float64), audio.audio[None], text.sentence[None], p
    )
    return grads, da[0], dt[0]
