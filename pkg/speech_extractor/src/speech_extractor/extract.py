"""Batch extraction of windowed per-layer speech features into GSPF files.

One GSPF file per requested window, plus a manifest CSV. The GSPF layout
is: magic "GSPF", three little-endian u32 (layers, frames, dim), then
layers*frames*dim float32 values in (layer, frame, dim) order — the format
the gesture-representation pipeline ingests. Files are written atomically.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .audio import read_wav, resample_linear

GSPF_MAGIC = b"GSPF"


class JobError(ValueError):
    pass


@dataclass
class ExtractionJob:
    audio_path: str
    windows: list[tuple[float, float]]  # (start_seconds, end_seconds)
    out_dir: str
    model_id: str = "facebook/wav2vec2-xls-r-300m"


@dataclass
class ExtractionResult:
    manifest_path: str
    files: list[str] = field(default_factory=list)
    layer_count: int = 0


def _atomic_write(path: str, blob: bytes) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_gspf(path: str, features: np.ndarray) -> None:
    if features.ndim != 3:
        raise ValueError(f"features must be (layers, frames, dim), got {features.shape}")
    l, t, d = features.shape
    blob = GSPF_MAGIC + struct.pack("<III", l, t, d) \
        + np.ascontiguousarray(features, dtype="<f4").tobytes()
    _atomic_write(path, blob)


def read_windows_csv(path: str) -> list[tuple[float, float]]:
    """CSV with header start_seconds,end_seconds."""
    windows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["start_seconds", "end_seconds"]:
            raise JobError(f"{path}: expected header start_seconds,end_seconds")
        for lineno, row in enumerate(reader, start=2):
            try:
                windows.append((float(row["start_seconds"]), float(row["end_seconds"])))
            except ValueError as e:
                raise JobError(f"{path}:{lineno}: non-numeric window bound") from e
    return windows


def extract(job: ExtractionJob, model) -> ExtractionResult:
    """Run `model` over every window of the job's audio; one GSPF per window."""
    waveform, rate = read_wav(job.audio_path)
    duration = len(waveform) / rate
    bad = [(s, e) for s, e in job.windows
           if s < 0 or e <= s or e > duration + 1e-9]
    if bad:
        raise JobError(f"windows outside audio of {duration:.2f}s: {bad}")
    waveform = resample_linear(waveform, rate, model.sample_rate)

    os.makedirs(job.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(job.audio_path))[0]
    rows = []
    files = []
    for i, (start, end) in enumerate(job.windows):
        lo = int(round(start * model.sample_rate))
        hi = int(round(end * model.sample_rate))
        features = model.forward(waveform[lo:hi])
        if features.shape[0] != model.layer_count:
            raise RuntimeError(f"model returned {features.shape[0]} layers, "
                               f"declared {model.layer_count}")
        path = os.path.join(job.out_dir, f"{stem}_w{i:04d}.gspf")
        write_gspf(path, features)
        files.append(path)
        rows.append({"index": i, "start_seconds": start, "end_seconds": end,
                     "path": os.path.basename(path), "layers": features.shape[0],
                     "frames": features.shape[1], "dim": features.shape[2]})

    manifest = os.path.join(job.out_dir, f"{stem}_manifest.csv")
    header = ["index", "start_seconds", "end_seconds", "path", "layers", "frames", "dim"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in header))
    _atomic_write(manifest, ("\n".join(lines) + "\n").encode())
    return ExtractionResult(manifest, files, model.layer_count)
