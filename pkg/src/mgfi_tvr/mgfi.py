"""Multi-granularity video pooling head (sentence-frame and word-frame).

For a caption and a video the head builds two text-conditioned video
vectors and compares their average with the raw sentence vector:

* sentence-frame: single-query attention of the LayerNormed sentence over
  the frames, projected through ``wo`` and refined by a residual FF block;
* word-frame: the same attention run once per word (scores ``a`` left
  unscaled, softmax taken on ``a / sqrt(C)``), then the per-word outputs are
  fused with weights ``softmax_words(max_frames(a))`` and refined by FF.

All work happens on padded blocks of ``Bv`` videos by ``Bt`` captions so a
whole similarity matrix is one call.  Results are indexed ``[video, text]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .embeddings import TextBatch, TextEmbedding, VideoBatch, VideoEmbedding, pack_texts, pack_videos
from .errors import DegenerateInputError, DimensionError
from .tensor import FeedForwardParams, LayerNormParams

GRANULARITIES = ("both", "sentence", "word")


@dataclass
class MgfiParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln_text: LayerNormParams
    ln_video: LayerNormParams
    ln_z: LayerNormParams
    ff: FeedForwardParams
    # word-side overrides; None means "reuse the sentence-side tensor"
    wq_word: Optional[np.ndarray] = None
    ln_word: Optional[LayerNormParams] = None
    ff_word: Optional[FeedForwardParams] = None
    ln_z_word: Optional[LayerNormParams] = None

    def __post_init__(self):
        c = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo", "wq_word"):
            w = getattr(self, name)
            if w is not None and w.shape != (c, c):
                raise DimensionError(f"{name} must be {c}x{c}, got {w.shape}")
        if (self.wq_word is None) != (self.ln_word is None):
            raise ValueError("wq_word and ln_word must be unshared together")
        if (self.ff_word is None) != (self.ln_z_word is None):
            raise ValueError("ff_word and ln_z_word must be unshared together")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def share_query(self) -> bool:
        return self.wq_word is None

    @property
    def share_ff_across_granularities(self) -> bool:
        return self.ff_word is None

    @property
    def word_query(self) -> tuple[LayerNormParams, np.ndarray, str, str]:
        if self.share_query:
            return self.ln_text, self.wq, "ln_text", "wq"
        return self.ln_word, self.wq_word, "ln_word", "wq_word"

    @property
    def word_output(self) -> tuple[LayerNormParams, FeedForwardParams, str, str]:
        if self.share_ff_across_granularities:
            return self.ln_z, self.ff, "ln_z", "ff"
        return self.ln_z_word, self.ff_word, "ln_z_word", "ff_word"

    def state_dict(self, prefix: str = "mgfi.") -> dict[str, np.ndarray]:
        out = {}
        for name in ("wq", "wk", "wv", "wo", "wq_word"):
            w = getattr(self, name)
            if w is not None:
                out[prefix + name] = w
        for name in ("ln_text", "ln_video", "ln_z", "ln_word", "ln_z_word"):
            ln = getattr(self, name)
            if ln is not None:
                out[f"{prefix}{name}.gain"] = ln.gain
                out[f"{prefix}{name}.bias"] = ln.bias
        for name in ("ff", "ff_word"):
            ff = getattr(self, name)
            if ff is not None:
                for k in ("w1", "b1", "w2", "b2"):
                    out[f"{prefix}{name}.{k}"] = getattr(ff, k)
        return out

    @classmethod
    def from_state_dict(
        cls, d: dict, prefix: str = "mgfi.", activation: str = "gelu", eps: float = T.LN_EPS
    ) -> "MgfiParams":
        def ln(name):
            if f"{prefix}{name}.gain" not in d:
                return None
            return LayerNormParams(d[f"{prefix}{name}.gain"], d[f"{prefix}{name}.bias"], eps)

        def ff(name):
            if f"{prefix}{name}.w1" not in d:
                return None
            return FeedForwardParams(*(d[f"{prefix}{name}.{k}"] for k in ("w1", "b1", "w2", "b2")), activation)

        return cls(
            wq=T.as_f64(d[prefix + "wq"]),
            wk=T.as_f64(d[prefix + "wk"]),
            wv=T.as_f64(d[prefix + "wv"]),
            wo=T.as_f64(d[prefix + "wo"]),
            ln_text=ln("ln_text"),
            ln_video=ln("ln_video"),
            ln_z=ln("ln_z"),
            ff=ff("ff"),
            wq_word=None if prefix + "wq_word" not in d else T.as_f64(d[prefix + "wq_word"]),
            ln_word=ln("ln_word"),
            ff_word=ff("ff_word"),
            ln_z_word=ln("ln_z_word"),
        )


def _init_ff(dim, hidden, activation, rng) -> FeedForwardParams:
    return FeedForwardParams(
        rng.normal(0.0, 1.0 / np.sqrt(dim), (dim, hidden)),
        np.zeros(hidden),
        np.zeros((hidden, dim)),
        np.zeros(dim),
        activation,
    )


def init_mgfi_params(
    dim: int,
    seed: int = 0,
    hidden: Optional[int] = None,
    activation: str = "gelu",
    share_query: bool = True,
    share_ff: bool = True,
    noise: float = 0.01,
) -> MgfiParams:
    """Near-identity projections and a zero second FF layer.

    The untrained head therefore behaves like plain attention pooling of the
    LayerNormed frames.
    """
    rng = np.random.default_rng(seed)
    hidden = 4 * dim if hidden is None else hidden
    eye = np.eye(dim)

    def near_eye():
        return eye + rng.normal(0.0, noise, (dim, dim))

    p = MgfiParams(
        wq=near_eye(),
        wk=near_eye(),
        wv=near_eye(),
        wo=eye.copy(),
        ln_text=LayerNormParams.identity(dim),
        ln_video=LayerNormParams.identity(dim),
        ln_z=LayerNormParams.identity(dim),
        ff=_init_ff(dim, hidden, activation, rng),
    )
    if not share_query:
        p.wq_word = p.wq.copy()
        p.ln_word = LayerNormParams.identity(dim)
    if not share_ff:
        p.ff_word = _init_ff(dim, hidden, activation, rng)
        p.ln_z_word = LayerNormParams.identity(dim)
    return p


# -- batched forward / backward -------------------------------------------


def _granularity_flags(granularity: str) -> tuple[bool, bool]:
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    return granularity in ("both", "sentence"), granularity in ("both", "word")


def _check_dims(texts: TextBatch, videos: VideoBatch, dim: int) -> None:
    if texts.sentence.shape[-1] != dim or videos.frames.shape[-1] != dim:
        raise DimensionError(
            f"embedding width {texts.sentence.shape[-1]}/{videos.frames.shape[-1]} != head dim {dim}"
        )


def _final_similarity(o, xt, metric):
    if metric == "dot":
        return T.dot(o, xt)
    if metric != "cosine":
        raise ValueError(f"metric must be 'cosine' or 'dot', got {metric!r}")
    no = np.sqrt((o * o).sum(-1))
    nt = np.sqrt((xt * xt).sum(-1))
    if np.any(nt == 0):
        raise DegenerateInputError(f"zero-norm sentence vector at text index {int(np.argmin(nt[0]))}")
    if np.any(no == 0):
        i, j = np.argwhere(no == 0)[0]
        raise DegenerateInputError(f"zero-norm pooled video for pair (video {i}, text {j})")
    return T.cosine(o, xt)


def pair_forward(
    texts: TextBatch,
    videos: VideoBatch,
    p: MgfiParams,
    granularity: str = "both",
    metric: str = "cosine",
) -> tuple[np.ndarray, dict]:
    """Similarity block ``S[i, j] = s(video_i, text_j)`` plus a backward cache."""
    use_s, use_w = _granularity_flags(granularity)
    dim = p.dim
    _check_dims(texts, videos, dim)
    scale = 1.0 / np.sqrt(dim)
    fmask = videos.frame_mask
    nv, nf, _ = videos.frames.shape

    hv = T.layer_norm(videos.frames, p.ln_video)
    k = hv @ p.wk
    v = hv @ p.wv
    vo = v @ p.wo
    c = dict(
        p=p, texts=texts, videos=videos, use_s=use_s, use_w=use_w, metric=metric,
        hv=hv, k=k, v=v, vo=vo,
    )
    parts = []
    if use_s:
        ht = T.layer_norm(texts.sentence, p.ln_text)
        q = ht @ p.wq
        s1 = np.matmul(k, q.T).transpose(0, 2, 1) * scale
        att = T.softmax(s1, fmask[:, None, :])
        z = att @ vo
        u = T.layer_norm(z, p.ln_z)
        o1 = z + T.feed_forward(u, p.ff)
        c.update(ht=ht, q=q, att=att, z=z, u=u, o1=o1)
        parts.append(o1)
    if use_w:
        ln_w, wq_w, _, _ = p.word_query
        ln_o, ff_o, _, _ = p.word_output
        nt, nw, _ = texts.words.shape
        hw = T.layer_norm(texts.words, ln_w)
        qw = hw @ wq_w
        a = (qw.reshape(nt * nw, dim) @ k.reshape(nv * nf, dim).T).reshape(nt, nw, nv, nf)
        a = a.transpose(2, 0, 1, 3)
        mask4 = fmask[:, None, None, :]
        att2 = T.softmax(a * scale, mask4)
        zt = att2 @ vo[:, None]
        m, argm = T.row_max(a, mask4)
        wts = T.softmax(m, texts.word_mask[None])
        ot = (wts[..., None, :] @ zt)[..., 0, :]
        u2 = T.layer_norm(ot, ln_o)
        o2 = ot + T.feed_forward(u2, ff_o)
        c.update(hw=hw, qw=qw, a=a, att2=att2, zt=zt, m=m, argm=argm, wts=wts, ot=ot, u2=u2, o2=o2)
        parts.append(o2)
    o = parts[0] if len(parts) == 1 else (parts[0] + parts[1]) / 2.0
    xt = texts.sentence[None]
    c.update(o=o, xt=xt)
    return _final_similarity(o, xt, metric), c


def _acc(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


def _acc_ln(grads, name, dg, db):
    _acc(grads, f"mgfi.{name}.gain", dg)
    _acc(grads, f"mgfi.{name}.bias", db)


def _acc_ff(grads, name, g):
    for key, val in g.items():
        _acc(grads, f"mgfi.{name}.{key}", val)


def pair_backward(dS, c: dict) -> tuple[dict, dict]:
    """Reverse pass for :func:`pair_forward`.

    Returns ``(param_grads, input_grads)``.  Parameter gradients are keyed
    like :meth:`MgfiParams.state_dict`; every tensor of ``p`` gets an entry.
    Input gradients are keyed ``sentence``, ``words`` and ``frames`` with the
    padded batch shapes (padding rows receive zero).
    """
    p: MgfiParams = c["p"]
    texts: TextBatch = c["texts"]
    videos: VideoBatch = c["videos"]
    dS = T.as_f64(dS)
    dim = p.dim
    scale = 1.0 / np.sqrt(dim)
    nv, nf, _ = videos.frames.shape
    grads = {name: np.zeros_like(val) for name, val in p.state_dict().items()}

    o, xt = c["o"], c["xt"]
    if c["metric"] == "dot":
        do, dxt = T.dot_backward(dS, o, xt)
    else:
        do, dxt = T.cosine_backward(dS, o, xt)
    d_sentence = dxt[0].copy()
    d_words = np.zeros_like(texts.words)
    half = 0.5 if (c["use_s"] and c["use_w"]) else 1.0

    vo, k = c["vo"], c["k"]
    dvo = np.zeros_like(vo)
    dk = np.zeros_like(k)

    if c["use_s"]:
        do1 = do * half
        du, gff = T.feed_forward_backward(do1, c["u"], p.ff)
        _acc_ff(grads, "ff", gff)
        dz_ln, dg, db = T.layer_norm_backward(du, c["z"], p.ln_z)
        _acc_ln(grads, "ln_z", dg, db)
        dz = do1 + dz_ln
        att = c["att"]
        datt = dz @ vo.transpose(0, 2, 1)
        dvo += att.transpose(0, 2, 1) @ dz
        ds1 = T.softmax_backward(datt, att) * scale
        nt = ds1.shape[1]
        dq = ds1.transpose(1, 0, 2).reshape(nt, nv * nf) @ k.reshape(nv * nf, dim)
        dk += ds1.transpose(0, 2, 1) @ c["q"]
        dht, dwq, _ = T.linear_backward(dq, c["ht"], p.wq, bias=False)
        _acc(grads, "mgfi.wq", dwq)
        dsent, dg, db = T.layer_norm_backward(dht, texts.sentence, p.ln_text)
        _acc_ln(grads, "ln_text", dg, db)
        d_sentence += dsent

    if c["use_w"]:
        ln_w, wq_w, ln_w_name, wq_w_name = p.word_query
        ln_o, ff_o, ln_o_name, ff_o_name = p.word_output
        do2 = do * half
        du2, gff = T.feed_forward_backward(do2, c["u2"], ff_o)
        _acc_ff(grads, ff_o_name, gff)
        dot_ln, dg, db = T.layer_norm_backward(du2, c["ot"], ln_o)
        _acc_ln(grads, ln_o_name, dg, db)
        dot_ = do2 + dot_ln
        zt, wts, att2 = c["zt"], c["wts"], c["att2"]
        nt, nw = wts.shape[1], wts.shape[2]
        dwts = (zt @ dot_[..., None])[..., 0]
        dzt = wts[..., None] * dot_[..., None, :]
        dm = T.softmax_backward(dwts, wts)
        da = T.row_max_backward(dm, c["argm"], nf)
        datt2 = dzt @ vo[:, None].transpose(0, 1, 3, 2)
        dvo += att2.reshape(nv, nt * nw, nf).transpose(0, 2, 1) @ dzt.reshape(nv, nt * nw, dim)
        da += T.softmax_backward(datt2, att2) * scale
        da_r = da.transpose(1, 2, 0, 3).reshape(nt * nw, nv * nf)
        dqw = (da_r @ k.reshape(nv * nf, dim)).reshape(nt, nw, dim)
        dk += (da_r.T @ c["qw"].reshape(nt * nw, dim)).reshape(nv, nf, dim)
        dhw, dwqw, _ = T.linear_backward(dqw, c["hw"], wq_w, bias=False)
        _acc(grads, "mgfi." + wq_w_name, dwqw)
        dwords, dg, db = T.layer_norm_backward(dhw, texts.words, ln_w)
        _acc_ln(grads, ln_w_name, dg, db)
        d_words += dwords

    dv, dwo, _ = T.linear_backward(dvo, c["v"], p.wo, bias=False)
    dhv_v, dwv, _ = T.linear_backward(dv, c["hv"], p.wv, bias=False)
    dhv_k, dwk, _ = T.linear_backward(dk, c["hv"], p.wk, bias=False)
    _acc(grads, "mgfi.wo", dwo)
    _acc(grads, "mgfi.wv", dwv)
    _acc(grads, "mgfi.wk", dwk)
    dframes, dg, db = T.layer_norm_backward(dhv_v + dhv_k, videos.frames, p.ln_video)
    _acc_ln(grads, "ln_video", dg, db)
    return grads, {"sentence": d_sentence, "words": d_words, "frames": dframes}


def pairwise_similarity(
    texts: TextBatch,
    videos: VideoBatch,
    p: MgfiParams,
    granularity: str = "both",
    metric: str = "cosine",
) -> np.ndarray:
    return pair_forward(texts, videos, p, granularity, metric)[0]


def mean_pool_matrix(texts: TextBatch, videos: VideoBatch, metric: str = "cosine") -> np.ndarray:
    """Parameter-free baseline: cosine of the mean frame against the sentence."""
    counts = videos.frame_mask.sum(axis=1, keepdims=True)
    mean = (videos.frames * videos.frame_mask[..., None]).sum(axis=1) / counts
    return _final_similarity(mean[:, None, :], texts.sentence[None], metric)


# -- single-pair surface --------------------------------------------------


@dataclass
class PooledVideo:
    o1: np.ndarray
    o2: np.ndarray
    o: np.ndarray
    word_weights: np.ndarray
    frame_attention: np.ndarray


def _single(text: TextEmbedding, video: VideoEmbedding):
    return pack_texts([text]), pack_videos([video])


def sentence_frame_pool(text: TextEmbedding, video: VideoEmbedding, p: MgfiParams):
    """Return ``(o1, attention)`` for one caption and one video."""
    _, c = pair_forward(*_single(text, video), p, "sentence")
    return c["o1"][0, 0], c["att"][0, 0]


def word_frame_pool(text: TextEmbedding, video: VideoEmbedding, p: MgfiParams):
    """Return ``(o2, word_weights)`` for one caption and one video."""
    _, c = pair_forward(*_single(text, video), p, "word")
    return c["o2"][0, 0], c["wts"][0, 0]


def aggregate(o1, o2) -> np.ndarray:
    o1 = T.as_f64(o1)
    o2 = T.as_f64(o2)
    if o1.shape != o2.shape:
        raise DimensionError(f"aggregate: {o1.shape} vs {o2.shape}")
    return (o1 + o2) / 2.0


def pool_video(text: TextEmbedding, video: VideoEmbedding, p: MgfiParams) -> PooledVideo:
    _, c = pair_forward(*_single(text, video), p, "both")
    return PooledVideo(
        o1=c["o1"][0, 0],
        o2=c["o2"][0, 0],
        o=c["o"][0, 0],
        word_weights=c["wts"][0, 0],
        frame_attention=np.vstack([c["att"][0, 0], c["att2"][0, 0]]),
    )


def video_text_similarity(
    text: TextEmbedding,
    video: VideoEmbedding,
    p: MgfiParams,
    granularity: str = "both",
    metric: str = "cosine",
) -> float:
    return float(pair_forward(*_single(text, video), p, granularity, metric)[0][0, 0])


def mean_pool_similarity(text: TextEmbedding, video: VideoEmbedding) -> float:
    return float(mean_pool_matrix(*_single(text, video))[0, 0])


def mgfi_backward(
    text: TextEmbedding,
    video: VideoEmbedding,
    p: MgfiParams,
    upstream: float,
    granularity: str = "both",
    metric: str = "cosine",
):
    """Gradients of ``upstream * s(video, text)``.

    Returns ``(param_grads, {"sentence", "words", "frames"})`` for the pair.
    """
    _, c = pair_forward(*_single(text, video), p, granularity, metric)
    grads, g_in = pair_backward(np.array([[upstream]], dtype=np.float64), c)
    return grads, {
        "sentence": g_in["sentence"][0],
        "words": g_in["words"][0],
        "frames": g_in["frames"][0],
    }
