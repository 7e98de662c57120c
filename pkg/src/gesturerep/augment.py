"""Skeletal augmentations and the stochastic two-view pipeline.

Eight kinds are available; the default pipeline enables mirroring, scaling,
random moving, jittering and shearing, each firing with probability 0.5.
Kinds are staged around pose normalization: mirror and shift act in raw
pixel coordinates (shift units are pixels), the rest act on the normalized
window (jitter sigma, move translations etc. are in shoulder-width units).

Every transform touches only the x/y channels; confidence passes through
bit-identically. Functions are pure given an explicit RNG, so callers can
parallelize across windows with derived seeds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .pose import SkeletonWindow, normalize_window

NECK = 1


class ParameterError(ValueError):
    pass


class AugmentationKind(enum.Enum):
    MIRROR = "mirror"
    SHIFT = "shift"
    SCALE = "scale"
    RANDOM_MOVE = "random_move"
    JITTER = "jitter"
    AXIS_SCALE = "axis_scale"
    ROTATION = "rotation"
    SHEAR = "shear"


DEFAULT_KINDS = (
    AugmentationKind.MIRROR,
    AugmentationKind.SCALE,
    AugmentationKind.RANDOM_MOVE,
    AugmentationKind.JITTER,
    AugmentationKind.SHEAR,
)

# kinds applied to raw pixel windows, before normalization
PRE_NORMALIZE_KINDS = frozenset({AugmentationKind.MIRROR, AugmentationKind.SHIFT})

SHIFT_RANGE = 30.0
SCALE_RANGE = (0.5, 1.5)
MOVE_ANGLE_RANGE = 10.0
MOVE_SCALE_RANGE = (0.9, 1.1)
MOVE_SHIFT_RANGE = 0.2
JITTER_SIGMA = 0.1
AXIS_SCALE_RANGE = (0.7, 1.2)
ROTATION_LIMIT = 15.0
# -15..15 in 2-degree steps (all odd), plus the identity angle 0
ROTATION_GRID = tuple(float(a) for a in range(-15, 16, 2)) + (0.0,)
SHEAR_RANGE = 0.2


def draw_params(kind: AugmentationKind, rng: np.random.Generator) -> dict:
    """Draw one parameter set for `kind` from its documented range."""
    if kind is AugmentationKind.MIRROR:
        return {}
    if kind is AugmentationKind.SHIFT:
        return {"dx": rng.uniform(-SHIFT_RANGE, SHIFT_RANGE),
                "dy": rng.uniform(-SHIFT_RANGE, SHIFT_RANGE)}
    if kind is AugmentationKind.SCALE:
        return {"factor": rng.uniform(*SCALE_RANGE)}
    if kind is AugmentationKind.RANDOM_MOVE:
        segments = int(rng.integers(1, 3))
        knots = segments + 1
        return {
            "angles": rng.uniform(-MOVE_ANGLE_RANGE, MOVE_ANGLE_RANGE, size=knots).tolist(),
            "scales": rng.uniform(*MOVE_SCALE_RANGE, size=knots).tolist(),
            "shifts_x": rng.uniform(-MOVE_SHIFT_RANGE, MOVE_SHIFT_RANGE, size=knots).tolist(),
            "shifts_y": rng.uniform(-MOVE_SHIFT_RANGE, MOVE_SHIFT_RANGE, size=knots).tolist(),
        }
    if kind is AugmentationKind.JITTER:
        return {"sigma": JITTER_SIGMA, "seed": int(rng.integers(0, 2**63 - 1))}
    if kind is AugmentationKind.AXIS_SCALE:
        return {"fx": rng.uniform(*AXIS_SCALE_RANGE), "fy": rng.uniform(*AXIS_SCALE_RANGE)}
    if kind is AugmentationKind.ROTATION:
        return {"angle_degrees": float(ROTATION_GRID[rng.integers(0, len(ROTATION_GRID))]),
                "anchor_joint": NECK}
    if kind is AugmentationKind.SHEAR:
        return {"sx": rng.uniform(-SHEAR_RANGE, SHEAR_RANGE),
                "sy": rng.uniform(-SHEAR_RANGE, SHEAR_RANGE)}
    raise ParameterError(f"unknown augmentation kind {kind}")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


def apply_augmentation(kind: AugmentationKind, params: dict, window: SkeletonWindow) -> SkeletonWindow:
    """Apply one transform; deterministic given params, shape preserved."""
    out = window.data.copy()
    xy = out[0:2]  # (2, t, j) view into the copy

    if kind is AugmentationKind.MIRROR:
        axis = float(np.median(xy[0, 0]))
        xy[0] = 2.0 * axis - xy[0]

    elif kind is AugmentationKind.SHIFT:
        dx, dy = float(params["dx"]), float(params["dy"])
        _check(abs(dx) <= SHIFT_RANGE and abs(dy) <= SHIFT_RANGE,
               f"shift ({dx}, {dy}) outside ±{SHIFT_RANGE}")
        xy[0] += dx
        xy[1] += dy

    elif kind is AugmentationKind.SCALE:
        f = float(params["factor"])
        _check(SCALE_RANGE[0] <= f <= SCALE_RANGE[1], f"scale factor {f} outside {SCALE_RANGE}")
        xy *= f

    elif kind is AugmentationKind.RANDOM_MOVE:
        angles = np.asarray(params["angles"], dtype=float)
        scales = np.asarray(params["scales"], dtype=float)
        sx = np.asarray(params["shifts_x"], dtype=float)
        sy = np.asarray(params["shifts_y"], dtype=float)
        _check(np.all(np.abs(angles) <= MOVE_ANGLE_RANGE), "move angle out of range")
        _check(np.all((scales >= MOVE_SCALE_RANGE[0]) & (scales <= MOVE_SCALE_RANGE[1])),
               "move scale out of range")
        _check(np.all(np.abs(sx) <= MOVE_SHIFT_RANGE) and np.all(np.abs(sy) <= MOVE_SHIFT_RANGE),
               "move shift out of range")
        t = out.shape[1]
        knots = np.linspace(0.0, 1.0, len(angles))
        pos = np.linspace(0.0, 1.0, t) if t > 1 else np.zeros(1)
        ang = np.interp(pos, knots, angles) * math.pi / 180.0
        sc = np.interp(pos, knots, scales)
        tx = np.interp(pos, knots, sx)
        ty = np.interp(pos, knots, sy)
        cos_a, sin_a = np.cos(ang) * sc, np.sin(ang) * sc
        x, y = xy[0].copy(), xy[1].copy()
        xy[0] = cos_a[:, None] * x - sin_a[:, None] * y + tx[:, None]
        xy[1] = sin_a[:, None] * x + cos_a[:, None] * y + ty[:, None]

    elif kind is AugmentationKind.JITTER:
        sigma = float(params["sigma"])
        _check(sigma > 0.0, f"jitter sigma {sigma} must be positive")
        noise_rng = np.random.default_rng(int(params["seed"]))
        xy += noise_rng.normal(0.0, sigma, size=xy.shape)

    elif kind is AugmentationKind.AXIS_SCALE:
        fx, fy = float(params["fx"]), float(params["fy"])
        _check(AXIS_SCALE_RANGE[0] <= fx <= AXIS_SCALE_RANGE[1]
               and AXIS_SCALE_RANGE[0] <= fy <= AXIS_SCALE_RANGE[1],
               f"axis scale ({fx}, {fy}) outside {AXIS_SCALE_RANGE}")
        xy[0] *= fx
        xy[1] *= fy

    elif kind is AugmentationKind.ROTATION:
        # the pipeline draws from ROTATION_GRID; the angle itself is
        # unrestricted here so isometry can be exercised at any angle
        theta = math.radians(float(params["angle_degrees"]))
        anchor = int(params.get("anchor_joint", NECK))
        _check(0 <= anchor < out.shape[2], f"anchor joint {anchor} out of range")
        cx = xy[0, :, anchor].copy()[:, None]
        cy = xy[1, :, anchor].copy()[:, None]
        x, y = xy[0] - cx, xy[1] - cy
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        xy[0] = cos_t * x - sin_t * y + cx
        xy[1] = sin_t * x + cos_t * y + cy

    elif kind is AugmentationKind.SHEAR:
        s_x, s_y = float(params["sx"]), float(params["sy"])
        _check(abs(s_x) <= SHEAR_RANGE and abs(s_y) <= SHEAR_RANGE,
               f"shear ({s_x}, {s_y}) outside ±{SHEAR_RANGE}")
        x, y = xy[0].copy(), xy[1].copy()
        xy[0] = x + s_x * y
        xy[1] = s_y * x + y

    else:
        raise ParameterError(f"unknown augmentation kind {kind}")

    return SkeletonWindow(out, window.fps, window.gesture_id)


@dataclass
class AugmentationPipeline:
    """Two-view sampler; each enabled kind fires independently per view."""

    kinds: tuple[AugmentationKind, ...] = DEFAULT_KINDS
    probability: float = 0.5
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def transform(self, window: SkeletonWindow, rng: np.random.Generator | None = None) -> SkeletonWindow:
        """One augmented view: pixel-stage kinds, optional normalization, rest."""
        rng = self._rng if rng is None else rng
        fire = rng.random(len(self.kinds)) < self.probability
        drawn = [(k, draw_params(k, rng)) for k in self.kinds]
        for (kind, params), hit in zip(drawn, fire):
            if hit and kind in PRE_NORMALIZE_KINDS:
                window = apply_augmentation(kind, params, window)
        if self.normalize:
            window = normalize_window(window)
        for (kind, params), hit in zip(drawn, fire):
            if hit and kind not in PRE_NORMALIZE_KINDS:
                window = apply_augmentation(kind, params, window)
        return window

    def sample_pair(self, window: SkeletonWindow,
                    rng: np.random.Generator | None = None) -> tuple[SkeletonWindow, SkeletonWindow]:
        rng = self._rng if rng is None else rng
        return self.transform(window, rng), self.transform(window, rng)
