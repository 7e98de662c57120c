"""Skeleton data model, file formats, window sampling and normalization.

Joint layout (27 joints, fixed):
    0 nose, 1 neck, 2 left shoulder, 3 right shoulder, 4 left elbow,
    5 right elbow, 6 torso;
    7-16  left hand  (7 wrist, then thumb 8-9, index 10-11, middle 12-13,
                      ring 14-15, pinky 16);
    17-26 right hand (17 wrist, same finger order).

File formats:
    keypoints   CSV, one row per frame: frame_index, then 27 x (x, y, conf).
    records     CSV header gesture_id,speaker_id,dialogue_id,referent_id,
                start_frame,end_frame.
    pairs       CSV header pair_id,gesture_a,gesture_b,handedness,shape,
                movement,rotation,position with flags in {0,1}.
    speech      binary "GSPF": magic, u32 L, T, D (little endian), then
                L*T*D float32 values, row-major (layer, frame, dim).

Loaders and samplers are pure after construction and safe for concurrent
read access.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

JOINT_COUNT = 27
LEFT_SHOULDER = 2
RIGHT_SHOULDER = 3

_BODY_EDGES = [(0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (1, 6), (4, 7), (5, 17)]


def _hand_edges(wrist: int) -> list[tuple[int, int]]:
    e = []
    for finger_base in (wrist + 1, wrist + 3, wrist + 5, wrist + 7):
        e.append((wrist, finger_base))
        e.append((finger_base, finger_base + 1))
    e.append((wrist, wrist + 9))  # pinky has a single joint
    return e


SPATIAL_EDGES: list[tuple[int, int]] = _BODY_EDGES + _hand_edges(7) + _hand_edges(17)

FORM_FEATURES = ("handedness", "shape", "movement", "rotation", "position")


class ParseError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


class DegeneratePoseError(ValueError):
    pass


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domain types

@dataclass
class SkeletonWindow:
    """(3, frames, 27) array; channels are x, y, detection confidence."""

    data: np.ndarray
    fps: int
    gesture_id: str

    def validate(self) -> "SkeletonWindow":
        if self.data.ndim != 3 or self.data.shape[0] != 3 or self.data.shape[2] != JOINT_COUNT:
            raise ValueError(f"window shape must be (3, t, {JOINT_COUNT}), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("window contains non-finite values")
        conf = self.data[2]
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidence channel outside [0, 1]")
        return self

    @property
    def frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GestureRecord:
    gesture_id: str
    speaker_id: str
    dialogue_id: str
    referent_id: str
    stroke_start_frame: int
    stroke_end_frame: int


@dataclass
class PairAnnotation:
    pair_id: str
    gesture_id_a: str
    gesture_id_b: str
    features: dict[str, int]  # keys = FORM_FEATURES, values in {0, 1}

    @property
    def shared_count(self) -> int:
        return sum(self.features[f] for f in FORM_FEATURES)


@dataclass
class SpeechFeatureWindow:
    """(layers, frames, dims) float array of precomputed speech features."""

    data: np.ndarray
    gesture_id: str

    def validate(self) -> "SpeechFeatureWindow":
        if self.data.ndim != 3 or self.data.shape[0] < 1:
            raise ValueError(f"speech features must be (L>=1, T, D), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("speech features contain non-finite values")
        return self


@dataclass(frozen=True)
class SkeletonGraph:
    joint_count: int
    spatial_edges: tuple[tuple[int, int], ...]
    normalized_adjacency: np.ndarray


def build_skeleton_graph(edges=None) -> SkeletonGraph:
    """Symmetrically normalized adjacency D^-1/2 (A + I) D^-1/2 over the 27 joints."""
    edges = SPATIAL_EDGES if edges is None else list(edges)
    a = np.zeros((JOINT_COUNT, JOINT_COUNT))
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    a += np.eye(JOINT_COUNT)
    d = a.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(d)
    norm = a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return SkeletonGraph(JOINT_COUNT, tuple(tuple(e) for e in edges), norm)


def graph_is_connected(graph: SkeletonGraph) -> bool:
    adj = [[] for _ in range(graph.joint_count)]
    for i, j in graph.spatial_edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == graph.joint_count


# ---------------------------------------------------------------------------
# atomic file helpers (outputs are overwritten via temp-file rename)

def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# loaders

def load_keypoints(path, fps: int) -> np.ndarray:
    """Read a keypoint CSV into a (frames, 27, 3) array; confidence clamped to [0, 1]."""
    rows = []
    with open(path, "r", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != 1 + 3 * JOINT_COUNT:
                raise ParseError(
                    f"{path}:{lineno}: expected {1 + 3 * JOINT_COUNT} columns, got {len(row)}"
                )
            try:
                values = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from e
            if not np.all(np.isfinite(values)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            rows.append(values.reshape(JOINT_COUNT, 3))
    frames = np.stack(rows, axis=0) if rows else np.zeros((0, JOINT_COUNT, 3))
    frames[:, :, 2] = np.clip(frames[:, :, 2], 0.0, 1.0)
    return frames


def write_keypoints(path, frames: np.ndarray) -> None:
    lines = []
    for idx, frame in enumerate(frames):
        cells = [str(idx)] + [repr(float(v)) for v in frame.reshape(-1)]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_gesture_records(path) -> list[GestureRecord]:
    records: list[GestureRecord] = []
    speaker_dialogue: dict[str, str] = {}
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        expected = ["gesture_id", "speaker_id", "dialogue_id", "referent_id", "start_frame", "end_frame"]
        if reader.fieldnames != expected:
            raise ParseError(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                start = int(row["start_frame"])
                end = int(row["end_frame"])
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: non-integer frame index") from e
            if end < start:
                raise ParseError(f"{path}:{lineno}: end_frame {end} < start_frame {start}")
            rec = GestureRecord(row["gesture_id"], row["speaker_id"], row["dialogue_id"],
                                row["referent_id"], start, end)
            prev = speaker_dialogue.setdefault(rec.speaker_id, rec.dialogue_id)
            if prev != rec.dialogue_id:
                raise IntegrityError(
                    f"{path}: speaker {rec.speaker_id} appears in dialogues {prev} and {rec.dialogue_id}"
                )
            records.append(rec)
    return records


def load_pair_annotations(path, records: list[GestureRecord] | None = None) -> list[PairAnnotation]:
    by_id = {r.gesture_id: r for r in records} if records is not None else None
    pairs: list[PairAnnotation] = []
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        expected = ["pair_id", "gesture_a", "gesture_b"] + list(FORM_FEATURES)
        if reader.fieldnames != expected:
            raise ParseError(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            flags = {}
            for feat in FORM_FEATURES:
                v = row[feat].strip()
                if v not in ("0", "1"):
                    raise ParseError(f"{path}:{lineno}: feature {feat} must be 0 or 1, got {v!r}")
                flags[feat] = int(v)
            a, b = row["gesture_a"], row["gesture_b"]
            if by_id is not None:
                missing = [g for g in (a, b) if g not in by_id]
                if missing:
                    raise IntegrityError(f"{path}:{lineno}: unknown gesture id(s) {missing}")
                ra, rb = by_id[a], by_id[b]
                if ra.speaker_id == rb.speaker_id or ra.dialogue_id != rb.dialogue_id:
                    raise IntegrityError(
                        f"{path}:{lineno}: pair {row['pair_id']} must join distinct speakers of one dialogue"
                    )
            pairs.append(PairAnnotation(row["pair_id"], a, b, flags))
    return pairs


def write_gesture_records(path, records: list[GestureRecord]) -> None:
    lines = ["gesture_id,speaker_id,dialogue_id,referent_id,start_frame,end_frame"]
    for r in records:
        lines.append(f"{r.gesture_id},{r.speaker_id},{r.dialogue_id},{r.referent_id},"
                     f"{r.stroke_start_frame},{r.stroke_end_frame}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_pair_annotations(path, pairs: list[PairAnnotation]) -> None:
    lines = ["pair_id,gesture_a,gesture_b," + ",".join(FORM_FEATURES)]
    for p in pairs:
        flags = ",".join(str(p.features[f]) for f in FORM_FEATURES)
        lines.append(f"{p.pair_id},{p.gesture_id_a},{p.gesture_id_b},{flags}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# speech feature file format

SPEECH_MAGIC = b"GSPF"


def write_speech_features(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"speech features must be 3-d (L, T, D), got {data.shape}")
    l, t, d = data.shape
    header = SPEECH_MAGIC + struct.pack("<III", l, t, d)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_speech_features(path, gesture_id: str | None = None) -> SpeechFeatureWindow:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != SPEECH_MAGIC:
        raise FormatError(f"{path}: not a speech feature file")
    l, t, d = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * l * t * d
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected} for dims ({l},{t},{d})")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(l, t, d).astype(np.float64)
    if gesture_id is None:
        gesture_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return SpeechFeatureWindow(data, gesture_id).validate()


# ---------------------------------------------------------------------------
# window sampling and normalization

@dataclass(frozen=True)
class WindowIndex:
    gesture_id: str
    start_frame: int
    length: int


@dataclass
class SampleResult:
    windows: list[WindowIndex] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # gesture ids with out-of-range strokes


def sample_windows(records, total_frames: int, fps: int, window_seconds: float = 1.0,
                   offset_frames: int = 2, min_overlap: float = 0.5) -> SampleResult:
    """Sliding-window starts whose stroke overlap exceeds min_overlap of the window.

    Starts lie on the grid {0, offset_frames, 2*offset_frames, ...}; a window
    [s, s+w-1] qualifies iff |window ∩ stroke| / w > min_overlap, with both
    intervals inclusive in frames. Windows must lie inside [0, total_frames).
    """
    if offset_frames < 1:
        raise ValueError("offset_frames must be >= 1")
    if not 0.0 < min_overlap <= 1.0:
        raise ValueError("min_overlap must be in (0, 1]")
    w = int(round(fps * window_seconds))
    result = SampleResult()
    for rec in records:
        if rec.stroke_start_frame < 0 or rec.stroke_end_frame >= total_frames:
            result.skipped.append(rec.gesture_id)
            continue
        for s in range(0, total_frames - w + 1, offset_frames):
            overlap = min(s + w - 1, rec.stroke_end_frame) - max(s, rec.stroke_start_frame) + 1
            if overlap > 0 and overlap / w > min_overlap:
                result.windows.append(WindowIndex(rec.gesture_id, s, w))
    return result


def window_from_frames(frames: np.ndarray, index: WindowIndex, fps: int) -> SkeletonWindow:
    """Materialize one window from a (frames, 27, 3) array as (3, t, 27)."""
    chunk = frames[index.start_frame : index.start_frame + index.length]
    if chunk.shape[0] != index.length:
        raise ValueError(f"window [{index.start_frame}, +{index.length}) exceeds recording")
    return SkeletonWindow(np.ascontiguousarray(chunk.transpose(2, 0, 1)), fps, index.gesture_id)


def speech_interval(start_seconds: float, end_seconds: float, pad_seconds: float = 0.5,
                    recording_seconds: float | None = None) -> tuple[float, float]:
    """Pad a gesture interval by pad_seconds on each side, clamped to the recording."""
    lo = start_seconds - pad_seconds
    hi = end_seconds + pad_seconds
    lo = max(0.0, lo)
    if recording_seconds is not None:
        hi = min(recording_seconds, hi)
    return lo, hi


def normalize_window(window: SkeletonWindow) -> SkeletonWindow:
    """Center on the frame-0 mid-shoulder point and scale shoulder distance to 1.

    The confidence channel passes through bit-identically; idempotent on an
    already-normalized window.
    """
    left = window.data[0:2, 0, LEFT_SHOULDER]
    right = window.data[0:2, 0, RIGHT_SHOULDER]
    dist = float(np.hypot(left[0] - right[0], left[1] - right[1]))
    if dist == 0.0:
        raise DegeneratePoseError(f"gesture {window.gesture_id}: coincident shoulders in frame 0")
    mid = (left + right) / 2.0
    out = window.data.copy()
    out[0] = (out[0] - mid[0]) / dist
    out[1] = (out[1] - mid[1]) / dist
    return SkeletonWindow(out, window.fps, window.gesture_id)
