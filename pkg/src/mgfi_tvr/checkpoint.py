"""Binary checkpoint format.

Little-endian layout::

    b"MGF1"  u32 version  u32 C  u32 stage  u32 activation
    repeated until EOF:
        u32 name_len  name (utf-8)  u32 rank  rank * u32 dims  f32 payload

``stage`` is 0 (initialised), 1 (after video-text training) or 2 (after
audio finetuning); ``activation`` is 0 for gelu, 1 for relu.  The logit
temperature is stored as a rank-0 record named ``temperature``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np

from .cmfi import CmfiParams, init_cmfi_params
from .errors import FormatError
from .mgfi import MgfiParams, init_mgfi_params

MAGIC = b"MGF1"
VERSION = 1
STAGES = ("init", "vt", "audio")
ACTIVATIONS = ("gelu", "relu")


@dataclass
class Checkpoint:
    mgfi: MgfiParams
    cmfi: CmfiParams
    temperature: float = 100.0
    stage: str = "init"

    @property
    def dim(self) -> int:
        return self.mgfi.dim

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.mgfi.state_dict())
        out.update(self.cmfi.state_dict())
        out["temperature"] = np.array(self.temperature, dtype=np.float64)
        return out


def init_checkpoint(dim: int, seed: int = 0, temperature: float = 100.0, **mgfi_kwargs) -> Checkpoint:
    return Checkpoint(init_mgfi_params(dim, seed, **mgfi_kwargs), init_cmfi_params(dim), temperature, "init")


def to_bytes(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<4I", VERSION, ck.dim, STAGES.index(ck.stage),
                                ACTIVATIONS.index(ck.mgfi.ff.activation))]
    for name, arr in ck.tensors().items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<{1 + arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 20 or buf[:4] != MAGIC:
        raise FormatError("not an MGF1 checkpoint")
    version, dim, stage, act = struct.unpack_from("<4I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if stage >= len(STAGES) or act >= len(ACTIVATIONS):
        raise FormatError("bad stage or activation code")
    pos = 20
    tensors = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(buf):
                raise FormatError(f"record {name!r} is truncated")
            tensors[name] = np.frombuffer(buf, "<f4", count, pos).astype(np.float64).reshape(dims)
            pos += 4 * count
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    try:
        mgfi = MgfiParams.from_state_dict(tensors, activation=ACTIVATIONS[act])
        cmfi = CmfiParams.from_state_dict(tensors)
        temperature = float(tensors["temperature"])
    except KeyError as exc:
        raise FormatError(f"missing tensor {exc}") from exc
    if mgfi.dim != dim:
        raise FormatError(f"header dim {dim} disagrees with tensors ({mgfi.dim})")
    return Checkpoint(mgfi, cmfi, temperature, STAGES[stage])


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
