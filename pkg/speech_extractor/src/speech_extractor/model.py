"""Speech models that turn a waveform into per-layer feature stacks.

Two implementations share one small interface (sample_rate, layer_count,
feature_dim, forward(waveform) -> (layers, frames, dim)):

  * PretrainedSpeechModel wraps a HuggingFace wav2vec2-style checkpoint and
    returns the hidden states of all transformer layers (the CNN front-end
    output is not counted as a layer). Needs torch + transformers and the
    model weights.
  * FilterbankModel is a fully deterministic offline stand-in: log-mel
    style filterbank energies passed through per-layer fixed random
    projections. Same interface and the same default depth (24) as the
    referenced multilingual model, so downstream shape handling is
    identical. Intended for tests and air-gapped runs; its features carry
    no linguistic content.
"""

from __future__ import annotations

import numpy as np


class ModelLoadError(RuntimeError):
    """The requested speech model cannot be constructed in this environment."""


class PretrainedSpeechModel:
    """All-transformer-layer features from a pretrained wav2vec2-family model."""

    def __init__(self, model_id: str = "facebook/wav2vec2-xls-r-300m", device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from transformers import Wav2Vec2FeatureExtractor, Wav2Vec2Model
        except ImportError as e:
            raise ModelLoadError(f"torch/transformers unavailable: {e}") from e
        try:
            self._extractor = Wav2Vec2FeatureExtractor.from_pretrained(model_id)
            self._model = Wav2Vec2Model.from_pretrained(model_id).to(device).eval()
        except Exception as e:  # network, cache or weight failures
            raise ModelLoadError(f"cannot load {model_id}: {e}") from e
        self._device = device
        self.model_id = model_id
        self.sample_rate = int(self._extractor.sampling_rate)
        self.layer_count = int(self._model.config.num_hidden_layers)
        self.feature_dim = int(self._model.config.hidden_size)

    def forward(self, waveform: np.ndarray) -> np.ndarray:
        import torch

        inputs = self._extractor(waveform, sampling_rate=self.sample_rate,
                                 return_tensors="pt")
        with torch.no_grad():
            out = self._model(inputs.input_values.to(self._device),
                              output_hidden_states=True)
        # hidden_states[0] is the CNN front-end output; keep transformer layers only
        layers = [h.squeeze(0).cpu().numpy() for h in out.hidden_states[1:]]
        return np.stack(layers).astype(np.float32)


class FilterbankModel:
    """Deterministic filterbank features with per-layer fixed projections."""

    def __init__(self, layer_count: int = 24, feature_dim: int = 32,
                 sample_rate: int = 16_000, frame_seconds: float = 0.025,
                 hop_seconds: float = 0.02, seed: int = 0):
        self.model_id = f"filterbank-{layer_count}x{feature_dim}"
        self.sample_rate = sample_rate
        self.layer_count = layer_count
        self.feature_dim = feature_dim
        self.frame_length = int(round(frame_seconds * sample_rate))
        self.hop = int(round(hop_seconds * sample_rate))
        n_bins = self.frame_length // 2 + 1
        rng = np.random.default_rng(seed)
        self._bank = self._triangular_bank(n_bins, feature_dim)
        self._projections = rng.standard_normal((layer_count, feature_dim, feature_dim)) \
            / np.sqrt(feature_dim)

    @staticmethod
    def _triangular_bank(n_bins: int, n_filters: int) -> np.ndarray:
        centers = np.linspace(0, n_bins - 1, n_filters + 2)
        bank = np.zeros((n_filters, n_bins))
        for i in range(n_filters):
            lo, mid, hi = centers[i], centers[i + 1], centers[i + 2]
            bins = np.arange(n_bins)
            up = np.clip((bins - lo) / max(mid - lo, 1e-9), 0, 1)
            down = np.clip((hi - bins) / max(hi - mid, 1e-9), 0, 1)
            bank[i] = np.minimum(up, down)
        return bank

    def forward(self, waveform: np.ndarray) -> np.ndarray:
        x = np.asarray(waveform, dtype=np.float64)
        if len(x) < self.frame_length:
            x = np.pad(x, (0, self.frame_length - len(x)))
        n_frames = 1 + (len(x) - self.frame_length) // self.hop
        idx = np.arange(self.frame_length)[None, :] + self.hop * np.arange(n_frames)[:, None]
        frames = x[idx] * np.hanning(self.frame_length)[None, :]
        power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
        energies = np.log1p(power @ self._bank.T)  # (frames, feature_dim)
        layers = np.stack([energies @ p for p in self._projections])
        return layers.astype(np.float32)


def build_model(spec: str):
    """'stub[:layers[:dim]]' for the filterbank stand-in, else a HF model id."""
    if spec.startswith("stub"):
        parts = spec.split(":")
        layers = int(parts[1]) if len(parts) > 1 else 24
        dim = int(parts[2]) if len(parts) > 2 else 32
        return FilterbankModel(layer_count=layers, feature_dim=dim)
    return PretrainedSpeechModel(spec)
