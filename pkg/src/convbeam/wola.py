"""Frame-based STFT processing with weighted overlap-add (WOLA).

Analysis windows each frame, filtering happens per bin, and synthesis
applies the same window again before overlap-adding, so the squared
window must satisfy constant overlap-add at the hop.  Processing is
causal with exactly one frame of algorithmic latency: output sample n
depends only on input samples below n + frame_len.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .beamformer import BeamformerWeights, apply_weights


class ProviderMismatchError(ValueError):
    """Weight provider returned weights of the wrong shape."""

    def __init__(self, frame_index: int, got, expected):
        self.frame_index = frame_index
        super().__init__(
            f"weight provider returned shape {got} at frame {frame_index}, expected {expected}"
        )


def sqrt_hann_window(frame_len: int) -> np.ndarray:
    """Periodic square-root Hann window; its square overlap-adds to 1 at 50% hop."""
    return np.sin(np.pi * np.arange(frame_len) / frame_len)


@dataclass(frozen=True)
class StftConfig:
    """Frame length, hop and analysis/synthesis window for WOLA processing.

    The squared window must overlap-add to a constant at the hop
    (relative ripple <= 1e-6, verified at construction).
    """

    frame_len: int = 1024
    hop: int = 512
    sample_rate: float = 48000.0
    window: np.ndarray | None = None
    cola_gain: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        if self.frame_len < 2 or (self.frame_len & (self.frame_len - 1)) != 0:
            raise ValueError(f"frame_len must be a power of two, got {self.frame_len}")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"hop must be in (0, frame_len], got {self.hop}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        win = self.window
        win = sqrt_hann_window(self.frame_len) if win is None else np.array(win, dtype=np.float64)
        if win.shape != (self.frame_len,):
            raise ValueError(f"window length {win.shape} does not match frame_len {self.frame_len}")
        # constant-overlap-add check on window^2, per hop residue
        wsq = win**2
        sums = np.zeros(self.hop)
        for start in range(0, self.frame_len, self.hop):
            seg = wsq[start : start + self.hop]
            sums[: seg.size] += seg
        mean = float(np.mean(sums))
        if mean <= 0.0:
            raise ValueError("window is identically zero")
        ripple = float((np.max(sums) - np.min(sums)) / mean)
        if ripple > 1e-6:
            raise ValueError(
                f"window^2 does not satisfy constant overlap-add at hop {self.hop} "
                f"(relative ripple {ripple:.3g})"
            )
        win.setflags(write=False)
        object.__setattr__(self, "window", win)
        object.__setattr__(self, "cola_gain", mean)

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def frame_start_time(self, frame_index: int) -> float:
        return frame_index * self.hop / self.sample_rate

    def frame_center_time(self, frame_index: int) -> float:
        return self.frame_start_time(frame_index) + 0.5 * self.frame_len / self.sample_rate

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    def output_len(self, n_frames: int) -> int:
        if n_frames <= 0:
            return 0
        return (n_frames - 1) * self.hop + self.frame_len


@dataclass(frozen=True)
class SpectralFrame:
    """One windowed one-sided spectrum, bins shaped (n_bins, n_channels)."""

    bins: np.ndarray
    frame_index: int
    start_time: float


def _as_2d(signal: np.ndarray) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"signal must be (n_samples,) or (n_samples, n_channels), got {x.shape}")
    return x


def analyze(signal: np.ndarray, config: StftConfig) -> list[SpectralFrame]:
    """Windowed one-sided spectra at hop spacing.

    Signals shorter than one frame yield an empty list; trailing samples
    beyond the last full frame are dropped.
    """
    x = _as_2d(signal)
    n_frames = config.n_frames(x.shape[0])
    if n_frames == 0:
        return []
    idx = np.arange(config.frame_len)[None, :] + config.hop * np.arange(n_frames)[:, None]
    segs = x[idx, :] * config.window[None, :, None]  # (T, L, C)
    spectra = np.fft.rfft(segs, axis=1)  # (T, n_bins, C)
    return [
        SpectralFrame(bins=spectra[t], frame_index=t, start_time=config.frame_start_time(t))
        for t in range(n_frames)
    ]


def _stack_mono(frames: Iterable) -> np.ndarray:
    rows = []
    for f in frames:
        b = np.asarray(f.bins if isinstance(f, SpectralFrame) else f)
        if b.ndim == 2 and b.shape[1] == 1:
            b = b[:, 0]
        if b.ndim != 1:
            raise ValueError(f"expected mono spectral frames, got shape {b.shape}")
        rows.append(b)
    if not rows:
        return np.zeros((0, 0), dtype=np.complex128)
    n_bins = rows[0].size
    if any(r.size != n_bins for r in rows):
        raise ValueError("inconsistent frame sizes")
    return np.asarray(rows, dtype=np.complex128)


def synthesize(frames: Sequence, config: StftConfig) -> np.ndarray:
    """Weighted overlap-add of mono spectral frames back to samples.

    Output length is (n_frames - 1) * hop + frame_len.
    """
    spec = _stack_mono(frames)
    n_frames = spec.shape[0]
    if n_frames == 0:
        return np.zeros(0)
    if spec.shape[1] != config.n_bins:
        raise ValueError(f"frames have {spec.shape[1]} bins, config expects {config.n_bins}")
    segs = np.fft.irfft(spec, n=config.frame_len, axis=1) * config.window[None, :]
    out = np.zeros(config.output_len(n_frames))
    for t in range(n_frames):
        start = t * config.hop
        out[start : start + config.frame_len] += segs[t]
    return out / config.cola_gain


WeightProvider = Callable[[int, float], BeamformerWeights]


def process_stream(
    signal: np.ndarray,
    config: StftConfig,
    weight_provider: WeightProvider,
) -> np.ndarray:
    """Analyze, filter each frame with provider-supplied weights, synthesize.

    The provider is called once per frame with (frame_index, start_time)
    and may return different weights every frame; a shape mismatch aborts
    with the offending frame index.
    """
    x = _as_2d(signal)
    n_ch = x.shape[1]
    frames = analyze(x, config)
    expected = (config.n_bins, n_ch)
    filtered = np.empty((len(frames), config.n_bins), dtype=np.complex128)
    for f in frames:
        w = weight_provider(f.frame_index, f.start_time)
        if w.weights.shape != expected:
            raise ProviderMismatchError(f.frame_index, w.weights.shape, expected)
        filtered[f.frame_index] = apply_weights(w, f.bins)
    return synthesize(filtered, config)
