"""Embedding containers, the manifest + blob bundle format, and synthetic data.

A bundle is two files: a JSON manifest::

    {"dim": C, "items": [{"id": "...", "frame_count": N, "word_count": W,
                          "has_audio": true}, ...]}

and a raw little-endian float32 blob holding, per item in manifest order,
frames (N x C), sentence (C), words (W x C) and, only when ``has_audio``,
the audio vector (C).
"""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, FormatError

_F32 = np.dtype("<f4")


@dataclass
class TextEmbedding:
    sentence: np.ndarray
    words: np.ndarray

    def __post_init__(self):
        self.sentence = np.asarray(self.sentence, dtype=np.float64)
        self.words = np.atleast_2d(np.asarray(self.words, dtype=np.float64))
        if self.sentence.ndim != 1 or self.words.shape[1] != self.sentence.shape[0]:
            raise DimensionError("sentence and word vectors must share the dimension")
        if self.words.shape[0] < 1:
            raise DimensionError("a caption needs at least one word")

    @property
    def word_count(self) -> int:
        return self.words.shape[0]

    @property
    def dim(self) -> int:
        return self.sentence.shape[0]


@dataclass
class VideoEmbedding:
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if self.frames.shape[0] < 1:
            raise DimensionError("a video needs at least one frame")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class AudioEmbedding:
    audio: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.audio is not None:
            self.audio = np.asarray(self.audio, dtype=np.float64)

    @property
    def present(self) -> bool:
        return self.audio is not None


@dataclass
class Item:
    id: str
    video: VideoEmbedding
    text: TextEmbedding
    audio: AudioEmbedding

    def __post_init__(self):
        c = self.video.dim
        if self.text.dim != c or (self.audio.present and self.audio.audio.shape != (c,)):
            raise DimensionError(f"item {self.id!r}: modality dimensions disagree")

    @property
    def dim(self) -> int:
        return self.video.dim


@dataclass
class DatasetManifest:
    dim: int
    items: list

    def blob_size(self) -> int:
        floats = sum(
            self.dim * (e["frame_count"] + 1 + e["word_count"] + int(e["has_audio"]))
            for e in self.items
        )
        return 4 * floats

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "items": self.items}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            raw = json.loads(text)
            dim = int(raw["dim"])
            items = [
                {
                    "id": str(e["id"]),
                    "frame_count": int(e["frame_count"]),
                    "word_count": int(e["word_count"]),
                    "has_audio": bool(e["has_audio"]),
                }
                for e in raw["items"]
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest: {exc}") from exc
        if dim < 1:
            raise FormatError("manifest dim must be positive")
        ids = [e["id"] for e in items]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest ids are not unique")
        if any(e["frame_count"] < 1 or e["word_count"] < 1 for e in items):
            raise FormatError("frame_count and word_count must be >= 1")
        return cls(dim, items)


def manifest_of(items: Sequence[Item]) -> DatasetManifest:
    if not items:
        raise ValueError("empty dataset")
    dim = items[0].dim
    entries = []
    for it in items:
        if it.dim != dim:
            raise DimensionError(f"item {it.id!r} has dim {it.dim}, expected {dim}")
        entries.append(
            {
                "id": it.id,
                "frame_count": it.video.frame_count,
                "word_count": it.text.word_count,
                "has_audio": it.audio.present,
            }
        )
    return DatasetManifest(dim, entries)


def blob_path_for(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def save_dataset(items: Sequence[Item], manifest_path, blob_path=None) -> None:
    manifest = manifest_of(items)
    blob_path = blob_path_for(manifest_path) if blob_path is None else Path(blob_path)
    chunks = []
    for it in items:
        chunks += [it.video.frames.ravel(), it.text.sentence, it.text.words.ravel()]
        if it.audio.present:
            chunks.append(it.audio.audio)
    Path(manifest_path).write_text(manifest.to_json())
    blob_path.write_bytes(np.concatenate(chunks).astype(_F32).tobytes())


def load_dataset(manifest_path, blob_path=None) -> list[Item]:
    """Read a bundle; float32 values are widened to float64."""
    manifest = DatasetManifest.from_json(Path(manifest_path).read_text())
    blob_path = blob_path_for(manifest_path) if blob_path is None else Path(blob_path)
    raw = Path(blob_path).read_bytes()
    if len(raw) != manifest.blob_size():
        raise FormatError(f"blob has {len(raw)} bytes, manifest implies {manifest.blob_size()}")
    flat = np.frombuffer(raw, dtype=_F32).astype(np.float64)
    c = manifest.dim
    items = []
    pos = 0

    def take(rows: int) -> np.ndarray:
        nonlocal pos
        block = flat[pos : pos + rows * c].reshape(rows, c)
        pos += rows * c
        return block

    for e in manifest.items:
        frames = take(e["frame_count"])
        sentence = take(1)[0]
        words = take(e["word_count"])
        audio = take(1)[0] if e["has_audio"] else None
        items.append(
            Item(e["id"], VideoEmbedding(frames), TextEmbedding(sentence, words), AudioEmbedding(audio))
        )
    return items


# -- padded batches -------------------------------------------------------


@dataclass
class TextBatch:
    sentence: np.ndarray  # (B, C)
    words: np.ndarray  # (B, W, C), zero rows past word_count
    word_mask: np.ndarray  # (B, W) bool


@dataclass
class VideoBatch:
    frames: np.ndarray  # (B, N, C), zero rows past frame_count
    frame_mask: np.ndarray  # (B, N) bool


def _pad(blocks: Sequence[np.ndarray]):
    n = max(b.shape[0] for b in blocks)
    c = blocks[0].shape[1]
    out = np.zeros((len(blocks), n, c))
    mask = np.zeros((len(blocks), n), dtype=bool)
    for i, b in enumerate(blocks):
        out[i, : b.shape[0]] = b
        mask[i, : b.shape[0]] = True
    return out, mask


def pack_texts(texts: Sequence[TextEmbedding]) -> TextBatch:
    words, mask = _pad([t.words for t in texts])
    return TextBatch(np.stack([t.sentence for t in texts]), words, mask)


def pack_videos(videos: Sequence[VideoEmbedding]) -> VideoBatch:
    frames, mask = _pad([v.frames for v in videos])
    return VideoBatch(frames, mask)


def pack_audio(audios: Sequence[AudioEmbedding], dim: int):
    """Stack audio vectors; absent rows are zero and flagged False."""
    present = np.array([a.present for a in audios], dtype=bool)
    out = np.zeros((len(audios), dim))
    for i, a in enumerate(audios):
        if a.present:
            out[i] = a.audio
    return out, present


# -- synthetic data -------------------------------------------------------


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_synthetic(
    count: int,
    dim: int,
    frame_range: tuple[int, int] = (4, 8),
    word_range: tuple[int, int] = (3, 8),
    audio_fraction: float = 0.0,
    audio_informative_fraction: float = 0.0,
    seed: int = 0,
    *,
    noise: float = 0.3,
    key_weight: float = 0.75,
    leak_weight: float = 0.35,
    leak_frames: int = 3,
    informative_key_weight: float = 0.1,
    keyword_weight: float = 1.0,
    audio_weight: float = 0.3,
    scene_vocab: int = 32,
    filler_vocab: int = 32,
) -> list[Item]:
    """Seeded synthetic video-caption pairs built around latent topics.

    Every item ``i`` owns a unit topic ``t_i``.  One key frame of video ``i``
    carries ``t_i`` with weight ``key_weight``; every frame is otherwise made
    of a generic scene vector (shared vocabulary) plus gaussian noise.  Each
    topic also leaks, with the smaller ``leak_weight``, into up to
    ``leak_frames`` non-key frames of one other "partner" video.  Mean
    pooling is easily fooled by such a partner, key-frame attention is not.

    Captions hold one key word close to ``t_i`` and filler words from a
    shared vocabulary that never appears in frames.  The sentence vector is
    ``keyword_weight * t_i`` plus the remaining weight on the filler words,
    so ``keyword_weight < 1`` makes the key word more discriminative than the
    sentence.

    Audio-informative items get a weak key frame (``informative_key_weight``)
    and audio close to ``t_i``; other items with audio carry a faint
    ``audio_weight`` trace of the topic.  ``noise`` is the expected norm of
    the gaussian perturbation added to each vector.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if not (0.0 <= audio_informative_fraction <= 1.0 and 0.0 <= audio_fraction <= 1.0):
        raise ValueError("fractions must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    topics = _unit(rng.standard_normal((count, dim)))
    scenes = _unit(rng.standard_normal((scene_vocab, dim)))
    fillers = _unit(rng.standard_normal((filler_vocab, dim)))
    sigma = noise / np.sqrt(dim)

    n_info = int(round(audio_informative_fraction * count))
    informative = np.zeros(count, dtype=bool)
    informative[rng.permutation(count)[:n_info]] = True
    # informative items always carry audio; the rest fill up audio_fraction
    n_audio = max(int(round(audio_fraction * count)), n_info)
    rest = rng.permutation(np.flatnonzero(~informative))[: n_audio - n_info]
    has_audio = informative.copy()
    has_audio[rest] = True

    # video (i + shift) % count hosts the leaked topic of item i
    shift = int(rng.integers(1, count))
    leaked_into = (np.arange(count) - shift) % count  # topic leaked into video i

    width = len(str(count - 1))
    items = []
    for i in range(count):
        n = int(rng.integers(frame_range[0], frame_range[1] + 1))
        w = int(rng.integers(word_range[0], word_range[1] + 1))

        key = int(rng.integers(n))
        own = np.zeros(n)
        own[key] = informative_key_weight if informative[i] else key_weight
        leak = np.zeros(n)
        others = [f for f in range(n) if f != key]
        for f in rng.permutation(others)[:leak_frames]:
            leak[f] = leak_weight
        scene = scenes[rng.integers(0, scene_vocab, size=n)]
        frames = (
            own[:, None] * topics[i]
            + leak[:, None] * topics[leaked_into[i]]
            + (1.0 - own - leak)[:, None] * scene
            + sigma * rng.standard_normal((n, dim))
        )

        filler_ids = rng.integers(0, filler_vocab, size=w - 1)
        keyword = _unit(topics[i] + sigma * rng.standard_normal(dim))
        filler = fillers[filler_ids] + sigma * rng.standard_normal((w - 1, dim))
        kpos = int(rng.integers(w))
        words = np.insert(filler, kpos, keyword, axis=0)

        sentence = keyword_weight * topics[i]
        if w > 1:
            sentence = sentence + (1.0 - keyword_weight) * fillers[filler_ids].mean(axis=0)
        sentence = _unit(sentence + sigma * rng.standard_normal(dim))

        audio = None
        if has_audio[i]:
            a_w = 1.0 if informative[i] else audio_weight
            audio = a_w * topics[i] + (1.0 - a_w) * _unit(rng.standard_normal(dim))
            audio = audio + sigma * rng.standard_normal(dim)

        items.append(
            Item(
                f"item{i:0{width}d}",
                VideoEmbedding(frames),
                TextEmbedding(sentence, words),
                AudioEmbedding(audio),
            )
        )
    return items
