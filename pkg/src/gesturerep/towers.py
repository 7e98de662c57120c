"""Encoder towers and projection heads.

The gesture encoder stacks graph-convolution blocks (adjacency mixing +
pointwise channel map, temporal convolution, ReLU, identity residual when
channel count and stride permit) over (3, t, 27) windows, then mean-pools
over time and joints and maps through an output FC layer to 256 dims.

The speech head softmax-weights precomputed per-layer features, fuses them
with two pointwise conv layers and mean-pools over time to 128 dims.

Projection heads are linear -> ReLU -> linear MLPs into the shared 128-dim
contrastive space. All forwards are functional: parameters travel as a flat
name -> Tensor dict, so inference is safe to run concurrently while the
trainer owns the only mutable copy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .pose import SkeletonGraph, build_skeleton_graph


class InputTooShortError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class GestureEncoderConfig:
    channels: tuple[int, ...] = (32, 64, 128, 256)
    temporal_kernel: int = 9
    temporal_strides: tuple[int, ...] = (1, 2, 1, 2)
    output_dim: int = 256
    input_channels: int = 3
    min_frames: int = 4
    residual: bool = True  # identity residual whenever channel counts match

    def __post_init__(self):
        if len(self.channels) != len(self.temporal_strides):
            raise ValueError("channels and temporal_strides must have equal length")


@dataclass(frozen=True)
class SpeechHeadConfig:
    layer_count: int = 4
    feature_dim: int = 16
    hidden_dim: int = 256
    output_dim: int = 128


@dataclass(frozen=True)
class ProjectionHeadConfig:
    input_dim: int
    output_dim: int = 128
    hidden_dim: int | None = None  # defaults to input_dim

    @property
    def hidden(self) -> int:
        return self.input_dim if self.hidden_dim is None else self.hidden_dim


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# gesture encoder

class GestureEncoder:
    def __init__(self, cfg: GestureEncoderConfig, graph: SkeletonGraph | None = None):
        self.cfg = cfg
        self.graph = graph if graph is not None else build_skeleton_graph()
        self.adjacency = self.graph.normalized_adjacency

    def init_params(self, rng: np.random.Generator, prefix: str = "gesture") -> dict[str, np.ndarray]:
        p: dict[str, np.ndarray] = {}
        c_in = self.cfg.input_channels
        k = self.cfg.temporal_kernel
        for i, c_out in enumerate(self.cfg.channels):
            p[f"{prefix}.b{i}.graph_w"] = _he_uniform(rng, (c_out, c_in), c_in)
            p[f"{prefix}.b{i}.graph_b"] = np.zeros((1, c_out, 1, 1))
            p[f"{prefix}.b{i}.time_w"] = _he_uniform(rng, (c_out, c_out, k), c_out * k)
            p[f"{prefix}.b{i}.time_b"] = np.zeros((1, c_out, 1, 1))
            c_in = c_out
        p[f"{prefix}.fc_w"] = _he_uniform(rng, (c_in, self.cfg.output_dim), c_in)
        p[f"{prefix}.fc_b"] = np.zeros(self.cfg.output_dim)
        return p

    def forward(self, params: dict[str, Tensor], x: Tensor, prefix: str = "gesture") -> Tensor:
        """(B, 3, t, 27) -> (B, output_dim)."""
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels or x.shape[3] != self.graph.joint_count:
            raise ShapeError(f"gesture encoder expects (B, {self.cfg.input_channels}, t, "
                             f"{self.graph.joint_count}), got {x.shape}")
        if x.shape[2] < self.cfg.min_frames:
            raise InputTooShortError(f"window has {x.shape[2]} frames, need >= {self.cfg.min_frames}")
        h = x
        c_in = self.cfg.input_channels
        for i, (c_out, stride) in enumerate(zip(self.cfg.channels, self.cfg.temporal_strides)):
            res = None
            if self.cfg.residual and c_in == c_out:
                res = h if stride == 1 else dc.time_slice(h, stride)
            g = dc.joint_mix(h, self.adjacency)
            g = dc.add(dc.channel_map(g, params[f"{prefix}.b{i}.graph_w"]), params[f"{prefix}.b{i}.graph_b"])
            t = dc.add(dc.temporal_conv(g, params[f"{prefix}.b{i}.time_w"], stride=stride),
                       params[f"{prefix}.b{i}.time_b"])
            if res is not None:
                t = dc.add(t, res)
            h = dc.relu(t)
            c_in = c_out
        pooled = dc.mean(h, axis=(2, 3))  # (B, C)
        return dc.add(dc.matmul(pooled, params[f"{prefix}.fc_w"]), params[f"{prefix}.fc_b"])


# ---------------------------------------------------------------------------
# speech head

class SpeechHead:
    def __init__(self, cfg: SpeechHeadConfig):
        self.cfg = cfg

    def init_params(self, rng: np.random.Generator, prefix: str = "speech") -> dict[str, np.ndarray]:
        cfg = self.cfg
        return {
            f"{prefix}.layer_logits": np.zeros(cfg.layer_count),
            f"{prefix}.conv1_w": _he_uniform(rng, (cfg.feature_dim, cfg.hidden_dim), cfg.feature_dim),
            f"{prefix}.conv1_b": np.zeros(cfg.hidden_dim),
            f"{prefix}.conv2_w": _he_uniform(rng, (cfg.hidden_dim, cfg.output_dim), cfg.hidden_dim),
            f"{prefix}.conv2_b": np.zeros(cfg.output_dim),
        }

    def forward(self, params: dict[str, Tensor], x: Tensor, prefix: str = "speech") -> Tensor:
        """(B, L, T, D) -> (B, output_dim)."""
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.layer_count or x.shape[3] != cfg.feature_dim:
            raise ShapeError(f"speech head expects (B, {cfg.layer_count}, T, {cfg.feature_dim}), "
                             f"got {x.shape}")
        weights = dc.softmax(params[f"{prefix}.layer_logits"], axis=0)
        mixed = dc.sum_(dc.mul(x, dc.reshape(weights, (1, cfg.layer_count, 1, 1))), axis=1)  # (B, T, D)
        h = dc.relu(dc.add(dc.matmul(mixed, params[f"{prefix}.conv1_w"]), params[f"{prefix}.conv1_b"]))
        h = dc.add(dc.matmul(h, params[f"{prefix}.conv2_w"]), params[f"{prefix}.conv2_b"])
        return dc.mean(h, axis=1)  # (B, output_dim)


# ---------------------------------------------------------------------------
# projection heads

class ProjectionHead:
    def __init__(self, cfg: ProjectionHeadConfig, prefix: str):
        self.cfg = cfg
        self.prefix = prefix

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg = self.cfg
        return {
            f"{self.prefix}.w1": _he_uniform(rng, (cfg.input_dim, cfg.hidden), cfg.input_dim),
            f"{self.prefix}.b1": np.zeros(cfg.hidden),
            f"{self.prefix}.w2": _he_uniform(rng, (cfg.hidden, cfg.output_dim), cfg.hidden),
            f"{self.prefix}.b2": np.zeros(cfg.output_dim),
        }

    def forward(self, params: dict[str, Tensor], x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ShapeError(f"projection head {self.prefix} expects (B, {self.cfg.input_dim}), "
                             f"got {x.shape}")
        h = dc.relu(dc.add(dc.matmul(x, params[f"{self.prefix}.w1"]), params[f"{self.prefix}.b1"]))
        return dc.add(dc.matmul(h, params[f"{self.prefix}.w2"]), params[f"{self.prefix}.b2"])


# ---------------------------------------------------------------------------
# named-tensor serialization ("GCKP" checkpoint block)

CHECKPOINT_MAGIC = b"GCKP"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def pack_checkpoint(tensors: dict[str, np.ndarray], meta_json: bytes = b"{}") -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
           struct.pack("<I", len(meta_json)), meta_json,
           struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def unpack_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], bytes]:
    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", view[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    try:
        (meta_len,) = struct.unpack("<I", view[8:12])
        pos = 12
        meta = bytes(view[pos : pos + meta_len])
        if len(meta) != meta_len:
            raise CheckpointFormatError("truncated metadata block")
        pos += meta_len
        (count,) = struct.unpack("<I", view[pos : pos + 4])
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", view[pos : pos + 4])
            pos += 4
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack("<I", view[pos : pos + 4])
            pos += 4
            shape = struct.unpack(f"<{ndim}I", view[pos : pos + 4 * ndim])
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            raw = view[pos : pos + 8 * n]
            if len(raw) != 8 * n:
                raise CheckpointFormatError(f"truncated tensor data for {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            pos += 8 * n
        if pos != len(view):
            raise CheckpointFormatError("trailing bytes after last tensor")
        return tensors, meta
    except struct.error as e:
        raise CheckpointFormatError("truncated checkpoint file") from e
