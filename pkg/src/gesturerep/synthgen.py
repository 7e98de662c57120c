"""Synthetic dialogue corpus with planted structure.

Every gesture is synthesized as a base upper-body pose plus additive
low-frequency sinusoid components:

    motion = sum_f component(f, value_f(gesture))        # 5 form features
           + referent residual + dialogue offset + speaker style + noise

Two gestures therefore get geometrically closer the more form-feature
values they share, same-referent / same-speaker / same-dialogue pairs share
the corresponding residuals, and pair annotations (cross-speaker,
same-referent, within one dialogue) carry ground-truth flags by
construction. Speech features are layered encodings whose referent and
form signal is concentrated in layer 2, so the learnable layer weighting
has something real to find; speaker and dialogue traces ride along in the
other layers.

Generation is pure per dialogue given the config seed; the same seed yields
a byte-identical corpus.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import stats
from .pose import (
    FORM_FEATURES,
    JOINT_COUNT,
    GestureRecord,
    PairAnnotation,
    atomic_write_text,
    sample_windows,
    window_from_frames,
    write_gesture_records,
    write_keypoints,
    write_pair_annotations,
    write_speech_features,
)

_BASE_POSE = np.zeros((JOINT_COUNT, 2))
_BASE_POSE[0] = (320, 120)   # nose
_BASE_POSE[1] = (320, 170)   # neck
_BASE_POSE[2] = (270, 175)   # left shoulder
_BASE_POSE[3] = (370, 175)   # right shoulder
_BASE_POSE[4] = (245, 250)   # left elbow
_BASE_POSE[5] = (395, 250)   # right elbow
_BASE_POSE[6] = (320, 260)   # torso


def _place_hand(wrist_index: int, wx: float, wy: float) -> None:
    _BASE_POSE[wrist_index] = (wx, wy)
    spread = [(-14, 12), (-20, 24), (-6, 16), (-8, 30), (2, 16), (2, 32), (10, 14), (12, 28), (18, 10)]
    for k, (dx, dy) in enumerate(spread):
        _BASE_POSE[wrist_index + 1 + k] = (wx + dx, wy + dy)


_place_hand(7, 235, 320)
_place_hand(17, 405, 320)

_LEFT_HAND = list(range(7, 17))
_RIGHT_HAND = list(range(17, 27))
_FINGERS = list(range(8, 17)) + list(range(18, 27))
_ARMS = [4, 5, 7, 17]

# joints a feature component may move, per feature value where relevant
_FEATURE_JOINTS = {
    "handedness": {0: _LEFT_HAND + [4], 1: _RIGHT_HAND + [5], 2: _LEFT_HAND + _RIGHT_HAND + [4, 5]},
    "shape": _FINGERS,
    "movement": _ARMS,
    "rotation": _LEFT_HAND + _RIGHT_HAND,
    "position": _ARMS + _FINGERS,
}

FEATURE_ALPHABET = {"handedness": 3, "shape": 4, "movement": 4, "rotation": 4, "position": 4}


@dataclass(frozen=True)
class SynthConfig:
    n_dialogues: int = 8
    speakers_per_dialogue: int = 2
    referents: int = 16
    gestures_per_speaker: int = 32
    fps: int = 25
    window_seconds: float = 1.0
    speech_layers: int = 4
    speech_rate: int = 25          # feature frames per second (2 s window)
    speech_dim: int = 16
    feature_scale: float = 16.0
    referent_scale: float = 6.0
    speaker_scale: float = 9.5
    dialogue_scale: float = 9.0
    gesture_noise_scale: float = 3.0
    frame_noise_scale: float = 1.0
    feature_flip_probability: float = 0.45
    seed: int = 0

    def __post_init__(self):
        for name in ("n_dialogues", "speakers_per_dialogue", "referents", "gestures_per_speaker",
                     "fps", "speech_layers", "speech_rate", "speech_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class GeneratedCorpus:
    root: str
    records: list[GestureRecord]
    pairs: list[PairAnnotation]
    gesture_features: dict[str, dict[str, int]]  # realized form-feature values
    config: SynthConfig


def _component(rng: np.random.Generator, joints, scale: float, constant: bool = False) -> dict:
    """One additive motion component: masked amplitude field + sinusoid."""
    amp = np.zeros((JOINT_COUNT, 2))
    amp[joints] = rng.normal(0.0, scale, size=(len(joints), 2))
    return {
        "amp": amp,
        "freq": 0.0 if constant else float(rng.choice([0.5, 1.0, 1.5, 2.0])),
        "phase": rng.uniform(0.0, 2.0 * math.pi, size=(JOINT_COUNT, 2)),
    }


def _component_track(comp: dict, t_seconds: np.ndarray) -> np.ndarray:
    """(frames, joints, 2) trajectory of one component."""
    if comp["freq"] == 0.0:
        return np.broadcast_to(comp["amp"], (len(t_seconds),) + comp["amp"].shape).copy()
    phase = 2.0 * math.pi * comp["freq"] * t_seconds[:, None, None] + comp["phase"][None]
    return comp["amp"][None] * np.sin(phase)


def _draw_latents(cfg: SynthConfig):
    rng = np.random.default_rng([cfg.seed, 1])
    feature_components = {
        f: [
            _component(
                rng,
                _FEATURE_JOINTS[f][v] if f == "handedness" else _FEATURE_JOINTS[f],
                cfg.feature_scale,
                constant=(f == "position"),
            )
            for v in range(FEATURE_ALPHABET[f])
        ]
        for f in FORM_FEATURES
    }
    referent_components = [_component(rng, _ARMS + _FINGERS, cfg.referent_scale)
                           for _ in range(cfg.referents)]
    referent_prototypes = [
        {f: int(rng.integers(0, FEATURE_ALPHABET[f])) for f in FORM_FEATURES}
        for _ in range(cfg.referents)
    ]
    dialogue_components = [_component(rng, list(range(JOINT_COUNT)), cfg.dialogue_scale)
                           for _ in range(cfg.n_dialogues)]
    n_speakers = cfg.n_dialogues * cfg.speakers_per_dialogue
    speaker_components = [_component(rng, list(range(JOINT_COUNT)), cfg.speaker_scale)
                          for _ in range(n_speakers)]
    speech_rng = np.random.default_rng([cfg.seed, 2])
    speech_codes = {
        "referent": speech_rng.normal(0.0, 1.0, size=(cfg.referents, cfg.speech_dim)),
        "feature": {
            f: speech_rng.normal(0.0, 1.0, size=(FEATURE_ALPHABET[f], cfg.speech_dim))
            for f in FORM_FEATURES
        },
        "speaker": speech_rng.normal(0.0, 1.0, size=(n_speakers, cfg.speech_dim)),
        "dialogue": speech_rng.normal(0.0, 1.0, size=(cfg.n_dialogues, cfg.speech_dim)),
    }
    return feature_components, referent_components, referent_prototypes, \
        dialogue_components, speaker_components, speech_codes


def _realize_features(prototype: dict, cfg: SynthConfig, rng: np.random.Generator) -> dict:
    """Per-gesture feature values: inherit from the referent, flip with probability p."""
    values = {}
    for f in FORM_FEATURES:
        if rng.random() < cfg.feature_flip_probability:
            values[f] = int(rng.integers(0, FEATURE_ALPHABET[f]))
        else:
            values[f] = prototype[f]
    return values


def _speech_features(cfg: SynthConfig, referent: int, features: dict, speaker: int,
                     dialogue: int, codes: dict, rng: np.random.Generator) -> np.ndarray:
    t = int(round(2.0 * cfg.speech_rate))
    d = cfg.speech_dim
    form = sum(codes["feature"][f][features[f]] for f in FORM_FEATURES) / math.sqrt(len(FORM_FEATURES))
    content = {
        0: np.zeros(d),
        1: 1.2 * codes["speaker"][speaker] + 1.6 * codes["dialogue"][dialogue],
        2: 1.5 * codes["referent"][referent] + 2.5 * form,
        3: 0.5 * codes["referent"][referent] + 0.8 * codes["speaker"][speaker],
    }
    noise_sigma = {0: 1.0, 1: 0.5, 2: 0.3, 3: 0.8}
    layers = []
    for l in range(cfg.speech_layers):
        base = content.get(l, np.zeros(d))
        sigma = noise_sigma.get(l, 1.0)
        layers.append(base[None, :] + rng.normal(0.0, sigma, size=(t, d)))
    return np.stack(layers)


def generate(cfg: SynthConfig, out_dir) -> GeneratedCorpus:
    """Write a full corpus (keypoints, records, pairs, speech) under out_dir."""
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "keypoints"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "speech"), exist_ok=True)

    (feature_components, referent_components, referent_prototypes,
     dialogue_components, speaker_components, speech_codes) = _draw_latents(cfg)

    window_frames = int(round(cfg.fps * cfg.window_seconds))
    records: list[GestureRecord] = []
    gesture_features: dict[str, dict[str, int]] = {}
    by_dialogue_referent: dict[tuple, dict[str, list[str]]] = {}
    realizations: dict[tuple, dict[str, int]] = {}  # speakers keep their own form realization per referent
    gesture_index = 0

    for d in range(cfg.n_dialogues):
        rng = np.random.default_rng([cfg.seed, 3, d])
        for s_local in range(cfg.speakers_per_dialogue):
            speaker = d * cfg.speakers_per_dialogue + s_local
            speaker_id = f"d{d:02d}_s{s_local}"
            referent_cycle = [g % cfg.referents for g in range(cfg.gestures_per_speaker)]
            for referent in referent_cycle:
                gid = f"g{gesture_index:04d}"
                gesture_index += 1
                key = (speaker, referent)
                if key not in realizations:
                    # a speaker's form realization and pacing are their own;
                    # repeat gestures for a referent reuse both
                    realizations[key] = (
                        _realize_features(referent_prototypes[referent], cfg, rng),
                        int(rng.integers(0, 3)),  # 1-3 sliding windows per gesture
                    )
                features, extra = realizations[key]
                gesture_features[gid] = features

                total = window_frames + 2 * extra
                stroke = (extra, total - 1 - extra)
                t_seconds = np.arange(total) / cfg.fps
                xy = np.broadcast_to(_BASE_POSE, (total, JOINT_COUNT, 2)).copy()
                for f in FORM_FEATURES:
                    xy += _component_track(feature_components[f][features[f]], t_seconds)
                xy += _component_track(referent_components[referent], t_seconds)
                xy += _component_track(dialogue_components[d], t_seconds)
                xy += _component_track(speaker_components[speaker], t_seconds)
                own = _component(rng, list(range(JOINT_COUNT)), cfg.gesture_noise_scale)
                xy += _component_track(own, t_seconds)
                xy += rng.normal(0.0, cfg.frame_noise_scale, size=xy.shape)
                # detection confidence degrades with measurement noise
                conf_lo = 1.0 - min(0.5, 0.5 * cfg.frame_noise_scale)
                conf = rng.uniform(conf_lo, 1.0, size=(total, JOINT_COUNT, 1))
                frames = np.concatenate([xy, conf], axis=2)

                write_keypoints(os.path.join(out_dir, "keypoints", f"{gid}.csv"), frames)
                speech = _speech_features(cfg, referent, features, speaker, d, speech_codes,
                                          np.random.default_rng([cfg.seed, 4, gesture_index]))
                write_speech_features(os.path.join(out_dir, "speech", f"{gid}.gspf"), speech)

                records.append(GestureRecord(gid, speaker_id, f"d{d:02d}", f"r{referent:02d}",
                                             stroke[0], stroke[1]))
                by_dialogue_referent.setdefault((d, referent), {}).setdefault(speaker_id, []).append(gid)

    # annotated pairs: cross-speaker, same referent, within one dialogue
    pairs: list[PairAnnotation] = []
    for (d, referent), speakers in sorted(by_dialogue_referent.items()):
        ids = sorted(speakers)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                for ga in speakers[ids[i]]:
                    for gb in speakers[ids[j]]:
                        flags = {
                            f: int(gesture_features[ga][f] == gesture_features[gb][f])
                            for f in FORM_FEATURES
                        }
                        pairs.append(PairAnnotation(f"p{len(pairs):05d}", ga, gb, flags))

    write_gesture_records(os.path.join(out_dir, "records.csv"), records)
    write_pair_annotations(os.path.join(out_dir, "pairs.csv"), pairs)
    atomic_write_text(os.path.join(out_dir, "meta.json"), json.dumps({
        "fps": cfg.fps,
        "window_seconds": cfg.window_seconds,
        "speech_layers": cfg.speech_layers,
        "speech_rate": cfg.speech_rate,
        "speech_dim": cfg.speech_dim,
        "seed": cfg.seed,
    }, sort_keys=True, indent=2) + "\n")
    atomic_write_text(os.path.join(out_dir, "latent.json"), json.dumps({
        "gesture_features": gesture_features,
        "referent_prototypes": {f"r{i:02d}": p for i, p in enumerate(referent_prototypes)},
    }, sort_keys=True, indent=2) + "\n")
    return GeneratedCorpus(out_dir, records, pairs, gesture_features, cfg)


# ---------------------------------------------------------------------------
# planted-geometry self check

@dataclass
class GeometryCheckReport:
    passed: bool
    p_value: float
    median_same_referent: float
    median_different_referent: float
    n_same: int
    n_different: int


def planted_geometry_check(cfg: SynthConfig, corpus: GeneratedCorpus | None = None,
                           out_dir=None, max_pairs: int = 2000) -> GeometryCheckReport:
    """Verify raw same-referent distances are stochastically smaller than
    different-referent distances (Mann-Whitney p < 0.01); the precondition
    for any downstream learning claim."""
    import tempfile

    if corpus is None:
        with tempfile.TemporaryDirectory() as tmp:
            corpus = generate(cfg, out_dir or tmp)
            return planted_geometry_check(cfg, corpus)

    from .pose import load_keypoints

    descriptors = {}
    for rec in corpus.records:
        frames = load_keypoints(os.path.join(corpus.root, "keypoints", f"{rec.gesture_id}.csv"),
                                cfg.fps)
        w = int(round(cfg.fps * cfg.window_seconds))
        first = sample_windows([rec], frames.shape[0], cfg.fps, cfg.window_seconds).windows[0]
        data = window_from_frames(frames, first, cfg.fps).data
        descriptors[rec.gesture_id] = data[0:2].reshape(-1)

    rng = np.random.default_rng([cfg.seed, 5])
    recs = corpus.records
    same, diff = [], []
    order = rng.permutation(len(recs))
    for idx_a in order:
        for idx_b in order[:40]:
            if idx_a >= idx_b:
                continue
            a, b = recs[idx_a], recs[idx_b]
            d = float(np.linalg.norm(descriptors[a.gesture_id] - descriptors[b.gesture_id]))
            if a.referent_id == b.referent_id and len(same) < max_pairs:
                same.append(d)
            elif a.referent_id != b.referent_id and len(diff) < max_pairs:
                diff.append(d)
        if len(same) >= max_pairs and len(diff) >= max_pairs:
            break

    result = stats.mann_whitney_u(same, diff)
    med_same = float(np.median(same))
    med_diff = float(np.median(diff))
    passed = result.p_value < 0.01 and med_same < med_diff
    return GeometryCheckReport(passed, result.p_value, med_same, med_diff, len(same), len(diff))
