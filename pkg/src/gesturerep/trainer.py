"""Batch assembly, Adam optimization, validation splits and checkpointing.

Three objective modes: `unimodal` (two augmented views per window),
`multimodal` (normalized window vs. paired speech features) and `combined`
(mean of both; the first augmented view doubles as the multimodal gesture
anchor). Validation always evaluates the multimodal term without
augmentation and the unimodal term with per-epoch seeded augmentation, and
never touches parameters.

Determinism: every random draw (init, split, epoch shuffles, per-window
augmentation) derives from the single config seed through numpy
SeedSequence chains, and batches are assembled single-threaded, so a run is
bit-reproducible. The validation split is a uniform shuffle, not stratified
by dialogue; with few speakers this can leak speaker style across the
split.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import objectives
from .augment import AugmentationKind, AugmentationPipeline
from .diffcore import ContractError, Tensor
from .pose import (
    LEFT_SHOULDER,
    RIGHT_SHOULDER,
    DegeneratePoseError,
    GestureRecord,
    SkeletonWindow,
    atomic_write_bytes,
    load_gesture_records,
    load_keypoints,
    read_speech_features,
    sample_windows,
    window_from_frames,
)
from .towers import (
    CheckpointFormatError,
    GestureEncoder,
    GestureEncoderConfig,
    ProjectionHead,
    ProjectionHeadConfig,
    SpeechHead,
    SpeechHeadConfig,
    pack_checkpoint,
    unpack_checkpoint,
)

log = logging.getLogger(__name__)

MODES = ("unimodal", "multimodal", "combined")

# seed-stream tags
_INIT, _SPLIT, _SHUFFLE, _AUG, _VAL_AUG = 0, 1, 2, 3, 4


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "combined"
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 200
    temperature: float = 0.1
    validation_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    encoder: GestureEncoderConfig = field(default_factory=GestureEncoderConfig)
    speech_hidden_dim: int = 256
    speech_output_dim: int = 128
    projection_dim: int = 128
    augment_kinds: tuple[AugmentationKind, ...] = None
    augment_probability: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("contrastive objectives need batch size >= 2")
        if self.augment_kinds is None:
            from .augment import DEFAULT_KINDS

            self.augment_kinds = DEFAULT_KINDS


# ---------------------------------------------------------------------------
# dataset

def _normalize_batch(windows: np.ndarray) -> np.ndarray:
    """Vectorized normalize_window over a (N, 3, t, 27) stack."""
    left = windows[:, 0:2, 0, LEFT_SHOULDER]
    right = windows[:, 0:2, 0, RIGHT_SHOULDER]
    dist = np.hypot(left[:, 0] - right[:, 0], left[:, 1] - right[:, 1])
    if np.any(dist == 0.0):
        raise DegeneratePoseError("coincident shoulders in frame 0")
    mid = (left + right) / 2.0
    out = windows.copy()
    out[:, 0] = (windows[:, 0] - mid[:, 0, None, None]) / dist[:, None, None]
    out[:, 1] = (windows[:, 1] - mid[:, 1, None, None]) / dist[:, None, None]
    return out


@dataclass
class GestureDataset:
    windows: np.ndarray  # (N, 3, t, 27), raw pixel coordinates
    window_gestures: list[str]  # gesture id per window
    records: dict[str, GestureRecord]
    speech: dict[str, np.ndarray] | None
    fps: int
    skipped: list[str] = field(default_factory=list)
    _normalized: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def frames_per_window(self) -> int:
        return self.windows.shape[2]

    def normalized(self) -> np.ndarray:
        if self._normalized is None:
            self._normalized = _normalize_batch(self.windows)
        return self._normalized

    def speech_dims(self) -> tuple[int, int, int] | None:
        if not self.speech:
            return None
        first = next(iter(self.speech.values()))
        return first.shape

    def speech_stack(self, gesture_ids: list[str]) -> np.ndarray:
        return np.stack([self.speech[g] for g in gesture_ids])

    @classmethod
    def from_corpus(cls, root, fps: int | None = None, window_seconds: float = 1.0,
                    offset_frames: int = 2, min_overlap: float = 0.5) -> "GestureDataset":
        root = os.fspath(root)
        meta_path = os.path.join(root, "meta.json")
        if fps is None:
            with open(meta_path) as f:
                meta = json.load(f)
            fps = int(meta["fps"])
            window_seconds = float(meta.get("window_seconds", window_seconds))
        records = load_gesture_records(os.path.join(root, "records.csv"))
        by_id = {r.gesture_id: r for r in records}
        windows = []
        owners = []
        skipped: list[str] = []
        for rec in records:
            frames = load_keypoints(os.path.join(root, "keypoints", f"{rec.gesture_id}.csv"), fps)
            sampled = sample_windows([rec], frames.shape[0], fps, window_seconds,
                                     offset_frames, min_overlap)
            skipped.extend(sampled.skipped)
            for idx in sampled.windows:
                windows.append(window_from_frames(frames, idx, fps).data)
                owners.append(rec.gesture_id)
        if skipped:
            log.warning("skipped %d record(s) with out-of-range strokes", len(skipped))
        speech = None
        speech_dir = os.path.join(root, "speech")
        if os.path.isdir(speech_dir):
            speech = {}
            for rec in records:
                path = os.path.join(speech_dir, f"{rec.gesture_id}.gspf")
                if os.path.exists(path):
                    speech[rec.gesture_id] = read_speech_features(path, rec.gesture_id).data
        stack = np.stack(windows) if windows else np.zeros((0, 3, int(round(fps * window_seconds)), 27))
        return cls(stack, owners, by_id, speech, fps, skipped)


def split_dataset(n_or_items, fraction: float = 0.9, seed: int = 0):
    """Seeded uniform shuffle, then split; floor(fraction * n) goes to train."""
    if isinstance(n_or_items, int):
        n = n_or_items
    else:
        n = len(n_or_items)
    if n < 2:
        raise ContractError("split needs at least 2 items")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng([seed, _SPLIT])
    perm = rng.permutation(n)
    k = math.floor(fraction * n)
    if isinstance(n_or_items, int):
        return perm[:k], perm[k:]
    items = list(n_or_items)
    return [items[i] for i in perm[:k]], [items[i] for i in perm[k:]]


# ---------------------------------------------------------------------------
# model bundle

@dataclass
class ModelBundle:
    encoder: GestureEncoder
    proj_gesture: ProjectionHead
    speech_head: SpeechHead | None = None
    proj_speech: ProjectionHead | None = None

    @classmethod
    def from_config(cls, config: dict) -> "ModelBundle":
        enc_cfg = GestureEncoderConfig(
            channels=tuple(config["encoder_channels"]),
            temporal_kernel=int(config["temporal_kernel"]),
            temporal_strides=tuple(config["temporal_strides"]),
            output_dim=int(config["encoder_output_dim"]),
            min_frames=int(config.get("min_frames", 4)),
        )
        encoder = GestureEncoder(enc_cfg)
        proj_g = ProjectionHead(
            ProjectionHeadConfig(enc_cfg.output_dim, int(config["projection_dim"])), "proj_g")
        speech_head = proj_s = None
        if config.get("speech_layers"):
            sp_cfg = SpeechHeadConfig(
                layer_count=int(config["speech_layers"]),
                feature_dim=int(config["speech_feature_dim"]),
                hidden_dim=int(config["speech_hidden_dim"]),
                output_dim=int(config["speech_output_dim"]),
            )
            speech_head = SpeechHead(sp_cfg)
            proj_s = ProjectionHead(
                ProjectionHeadConfig(sp_cfg.output_dim, int(config["projection_dim"])), "proj_s")
        return cls(encoder, proj_g, speech_head, proj_s)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng([seed, _INIT])
        params = self.encoder.init_params(rng)
        params.update(self.proj_gesture.init_params(rng))
        if self.speech_head is not None:
            params.update(self.speech_head.init_params(rng))
            params.update(self.proj_speech.init_params(rng))
        return params

    def embed_windows(self, params: dict[str, np.ndarray], windows: np.ndarray,
                      layer: str = "projection", batch_size: int = 256) -> np.ndarray:
        """Forward normalized windows without gradients; layer in {projection, encoder}."""
        if layer not in ("projection", "encoder"):
            raise ValueError(f"layer must be 'projection' or 'encoder', got {layer!r}")
        wrapped = {k: Tensor(v) for k, v in params.items()}
        outs = []
        for i in range(0, windows.shape[0], batch_size):
            x = Tensor(windows[i : i + batch_size])
            h = self.encoder.forward(wrapped, x)
            if layer == "projection":
                h = self.proj_gesture.forward(wrapped, h)
            outs.append(h.values)
        return np.concatenate(outs, axis=0)


def build_config_dict(cfg: TrainConfig, dataset: GestureDataset) -> dict:
    sp = dataset.speech_dims()
    return {
        "mode": cfg.mode,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "temperature": cfg.temperature,
        "validation_fraction": cfg.validation_fraction,
        "seed": cfg.seed,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "adam_eps": cfg.adam_eps,
        "encoder_channels": list(cfg.encoder.channels),
        "temporal_kernel": cfg.encoder.temporal_kernel,
        "temporal_strides": list(cfg.encoder.temporal_strides),
        "encoder_output_dim": cfg.encoder.output_dim,
        "min_frames": cfg.encoder.min_frames,
        "projection_dim": cfg.projection_dim,
        "speech_layers": sp[0] if sp and cfg.mode != "unimodal" else None,
        "speech_frames": sp[1] if sp and cfg.mode != "unimodal" else None,
        "speech_feature_dim": sp[2] if sp and cfg.mode != "unimodal" else None,
        "speech_hidden_dim": cfg.speech_hidden_dim,
        "speech_output_dim": cfg.speech_output_dim,
        "augment_kinds": [k.value for k in cfg.augment_kinds],
        "augment_probability": cfg.augment_probability,
        "fps": dataset.fps,
        "frames_per_window": dataset.frames_per_window,
    }


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Standard Adam with bias correction; first-step update magnitude ~= lr."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.values) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.values) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    epoch: int
    train_history: list[float]
    val_history: list[float]
    config: dict
    config_hash: str

    def params_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "epoch": ckpt.epoch,
        "train_history": ckpt.train_history,
        "val_history": ckpt.val_history,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
    }
    atomic_write_bytes(path, pack_checkpoint(ckpt.params, json.dumps(meta, sort_keys=True).encode()))


def load_checkpoint(path, expected_config_hash: str | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    tensors, meta_bytes = unpack_checkpoint(blob)
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: corrupt metadata block") from e
    ckpt = Checkpoint(tensors, int(meta["epoch"]), list(meta["train_history"]),
                      list(meta["val_history"]), meta["config"], meta["config_hash"])
    if expected_config_hash is not None and expected_config_hash != ckpt.config_hash:
        log.warning("checkpoint %s config hash %s does not match expected %s",
                    path, ckpt.config_hash[:12], expected_config_hash[:12])
    return ckpt


# ---------------------------------------------------------------------------
# training loop

def _augmented_view_stacks(dataset: GestureDataset, indices: np.ndarray, pipeline_template,
                           seed: int, stream: int, epoch: int) -> tuple[np.ndarray, np.ndarray]:
    """Two per-window augmented views, each seeded by (seed, stream, epoch, window)."""
    v1, v2 = [], []
    for idx in indices:
        rng = np.random.default_rng([seed, stream, epoch, int(idx)])
        w = SkeletonWindow(dataset.windows[idx], dataset.fps, dataset.window_gestures[idx])
        a, b = pipeline_template.sample_pair(w, rng)
        v1.append(a.data)
        v2.append(b.data)
    return np.stack(v1), np.stack(v2)


class _Step:
    """Shared forward/loss machinery for training and validation."""

    def __init__(self, cfg: TrainConfig, bundle: ModelBundle, dataset: GestureDataset):
        self.cfg = cfg
        self.bundle = bundle
        self.dataset = dataset
        self.loss_cfg = objectives.LossConfig(cfg.temperature)
        self.pipeline = AugmentationPipeline(cfg.augment_kinds, cfg.augment_probability,
                                             seed=cfg.seed, normalize=True)

    def loss(self, params: dict[str, Tensor], indices: np.ndarray, epoch: int,
             stream: int) -> Tensor:
        cfg = self.cfg
        bundle = self.bundle
        ds = self.dataset
        gids = [ds.window_gestures[i] for i in indices]

        def gesture_proj(x_nd: np.ndarray) -> Tensor:
            h = bundle.encoder.forward(params, Tensor(x_nd))
            return bundle.proj_gesture.forward(params, h)

        def speech_proj() -> Tensor:
            s = bundle.speech_head.forward(params, Tensor(ds.speech_stack(gids)))
            return bundle.proj_speech.forward(params, s)

        if cfg.mode == "unimodal":
            va, vb = _augmented_view_stacks(ds, indices, self.pipeline, cfg.seed, stream, epoch)
            views = dc.concat([gesture_proj(va), gesture_proj(vb)], axis=0)
            return objectives.unimodal_nt_xent(views, self.loss_cfg)

        if cfg.mode == "multimodal":
            zg = gesture_proj(ds.normalized()[indices])
            return objectives.multimodal_info_nce(zg, speech_proj(), self.loss_cfg)

        # combined: first view anchors the multimodal term during training;
        # validation pairs speech with the unaugmented window instead
        va, vb = _augmented_view_stacks(ds, indices, self.pipeline, cfg.seed, stream, epoch)
        za = gesture_proj(va)
        zb = gesture_proj(vb)
        l_uni = objectives.unimodal_nt_xent(dc.concat([za, zb], axis=0), self.loss_cfg)
        if stream == _VAL_AUG:
            zg = gesture_proj(ds.normalized()[indices])
        else:
            zg = za
        l_mm = objectives.multimodal_info_nce(zg, speech_proj(), self.loss_cfg)
        return objectives.combined_loss(l_uni, l_mm)


def train_step(step: _Step, params: dict[str, Tensor], optimizer: Adam,
               indices: np.ndarray, epoch: int, step_index: int) -> float:
    """One optimization step; returns the pre-update loss."""
    dc.zero_grad(params)
    loss = step.loss(params, indices, epoch, _AUG)
    value = float(loss.values)
    dc.backward(loss)
    if not np.isfinite(value):
        norms = {k: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
                 for k, p in params.items()}
        worst = max(norms, key=norms.get)
        raise TrainingDivergedError(
            f"non-finite loss {value} at step {step_index} (largest grad norm "
            f"{norms[worst]:.3e} on {worst})")
    optimizer.step()
    return value


def fit(dataset: GestureDataset, cfg: TrainConfig, metrics_path=None) -> Checkpoint:
    """Train up to max_epochs and return the minimum-validation-loss checkpoint."""
    if len(dataset) == 0:
        raise ContractError("fit: empty dataset")
    if cfg.mode != "unimodal":
        if not dataset.speech:
            raise ContractError(f"mode {cfg.mode!r} needs speech features in the dataset")
        uncovered = sorted(set(dataset.window_gestures) - set(dataset.speech))
        if uncovered:
            raise ContractError(f"missing speech features for gesture(s) {uncovered[:5]}"
                                + ("..." if len(uncovered) > 5 else ""))

    config = build_config_dict(cfg, dataset)
    chash = config_hash(config)
    bundle = ModelBundle.from_config(config)
    params_nd = bundle.init_params(cfg.seed)
    params = {k: Tensor(v, requires_grad=True) for k, v in params_nd.items()}
    optimizer = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    step = _Step(cfg, bundle, dataset)

    train_idx, val_idx = split_dataset(len(dataset), 1.0 - cfg.validation_fraction, cfg.seed)
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_params = {k: v.values.copy() for k, v in params.items()}
    best_epoch = 0
    metrics: list[dict] = []

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE, epoch])
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        if len(order) >= cfg.batch_size:
            batches = [order[i : i + cfg.batch_size]
                       for i in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size)]
        else:
            batches = [order]  # fewer samples than one batch: train on what exists
        losses = []
        for b, batch in enumerate(batches):
            losses.append(train_step(step, params, optimizer, batch, epoch, b))
        train_loss = float(np.mean(losses))

        val_losses = []
        for i in range(0, len(val_idx), cfg.batch_size):
            batch = val_idx[i : i + cfg.batch_size]
            if len(batch) < 2:
                continue
            val_losses.append(float(step.loss(params, batch, epoch, _VAL_AUG).values))
        val_loss = float(np.mean(val_losses)) if val_losses else float("nan")

        train_hist.append(train_loss)
        val_hist.append(val_loss)
        if np.isfinite(val_loss) and val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.values.copy() for k, v in params.items()}
            best_epoch = epoch
        wall_ms = (time.perf_counter() - t0) * 1000.0
        metrics.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "wall_ms": wall_ms})
        log.info("epoch %d: train %.4f val %.4f (%.0f ms)", epoch, train_loss, val_loss, wall_ms)

    if metrics_path is not None:
        from .pose import atomic_write_text

        atomic_write_text(metrics_path,
                          "".join(json.dumps(m, sort_keys=True) + "\n" for m in metrics))
    return Checkpoint(best_params, best_epoch, train_hist, val_hist, config, chash)
