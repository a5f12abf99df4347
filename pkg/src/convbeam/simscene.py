"""Desk-scale synthetic scenes with ground-truth stems.

Everything is free field: steering vectors are pure plane-wave delays,
diffuse noise is a sum of independent plane waves from a near-uniform
grid, and moving sources are rendered frame by frame with the same
overlap-add framing the enhancement pipeline uses.  Free-field scenes
have analytic oracles (geometric delays, sinc coherence), so renders
serve as end-to-end ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .atf import SPEED_OF_SOUND, AtfSet, Direction, bin_frequencies, fibonacci_directions
from .wola import StftConfig


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in the device frame, meters, shape (N, 3)."""

    mic_positions: np.ndarray

    def __post_init__(self):
        p = np.array(self.mic_positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise ValueError(f"mic_positions must be (N >= 1, 3), got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("mic_positions contain non-finite values")
        for i in range(p.shape[0]):
            for j in range(i + 1, p.shape[0]):
                if np.allclose(p[i], p[j], atol=1e-12):
                    raise ValueError(f"microphones {i} and {j} coincide")
        p.setflags(write=False)
        object.__setattr__(self, "mic_positions", p)

    @property
    def n_channels(self) -> int:
        return self.mic_positions.shape[0]


def plane_wave_delays(
    geometry: ArrayGeometry,
    direction: Direction,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Per-channel arrival delays (s) of a plane wave from `direction`.

    A microphone with positive projection on the source direction hears
    the wavefront early, i.e. gets a negative delay.
    """
    return -(geometry.mic_positions @ direction.unit_vector()) / speed_of_sound


def free_field_atf_set(
    geometry: ArrayGeometry,
    n_directions: int = 642,
    n_bins: int = 513,
    sample_rate: float = 48000.0,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> AtfSet:
    """Unit-magnitude plane-wave ATFs on a Fibonacci grid."""
    if n_directions < 4:
        raise ValueError("n_directions must be >= 4")
    directions = fibonacci_directions(n_directions)
    omega = 2.0 * np.pi * bin_frequencies(n_bins, sample_rate)  # (B,)
    units = np.stack([d.unit_vector() for d in directions])  # (D, 3)
    delays = -(units @ geometry.mic_positions.T) / speed_of_sound  # (D, N)
    responses = np.exp(-1j * omega[None, :, None] * delays[:, None, :])
    return AtfSet(
        n_channels=geometry.n_channels,
        sample_rate=sample_rate,
        n_bins=n_bins,
        directions=tuple(directions),
        responses=responses,
    )


def diffuse_noise(
    geometry: ArrayGeometry,
    duration_s: float,
    sample_rate: float,
    n_plane_waves: int = 64,
    seed: int = 0,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Spherically isotropic noise: independent white plane waves, unit power.

    Each plane wave arrives from one point of a Fibonacci grid; its white
    spectrum is drawn directly in the frequency domain and rendered with
    the exact free-field fractional delays (per-bin phase ramps), so one
    inverse transform per channel produces the whole record.  Every
    channel is normalized to unit mean-square power.  Deterministic per seed.
    """
    if n_plane_waves < 64:
        raise ValueError("n_plane_waves must be >= 64")
    n_samples = int(round(duration_s * sample_rate))
    n_bins = n_samples // 2 + 1
    df = sample_rate / n_samples
    rng = np.random.default_rng(seed)
    scale = np.sqrt(n_samples / 2.0) / np.sqrt(n_plane_waves)

    # Phase ramps exp(-2j pi f tau) are evaluated on the arithmetic bin grid
    # f = k * df by splitting k = q*K + s, so each ramp is an outer product of
    # one coarse and one fine geometric ramp (exact, and far cheaper than a
    # per-bin exponential).
    fine_len = 1 << max(1, (n_bins.bit_length() + 1) // 2)
    n_coarse = -(-n_bins // fine_len)
    padded = n_coarse * fine_len
    n_ch = geometry.n_channels
    acc = np.zeros((n_ch, n_coarse, fine_len), dtype=np.complex128)
    spec_pad = np.zeros(padded, dtype=np.complex128)
    tmp = np.empty((n_ch, n_coarse, fine_len), dtype=np.complex128)
    for direction in fibonacci_directions(n_plane_waves):
        spec = (rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins)) * scale
        spec[0] = np.sqrt(2.0) * spec[0].real  # DC and Nyquist bins are real
        if n_samples % 2 == 0:
            spec[-1] = np.sqrt(2.0) * spec[-1].real
        spec_pad[:n_bins] = spec
        delays = plane_wave_delays(geometry, direction, speed_of_sound)
        phase = -2j * np.pi * df * delays  # (N,)
        fine = np.exp(phase[:, None] * np.arange(fine_len)[None, :])
        coarse = np.exp(phase[:, None] * (fine_len * np.arange(n_coarse))[None, :])
        np.multiply(coarse[:, :, None], fine[:, None, :], out=tmp)
        tmp *= spec_pad.reshape(n_coarse, fine_len)[None, :, :]
        acc += tmp
    out = np.fft.irfft(acc.reshape(n_ch, padded)[:, :n_bins], n_samples, axis=1).T
    power = np.mean(out**2, axis=0)
    return out / np.sqrt(power)[None, :]


def speech_shaped_noise(duration_s: float, sample_rate: float, seed: int = 0) -> np.ndarray:
    """Stationary noise with a speech-like long-term spectrum, unit RMS."""
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    shape = (f / 120.0) ** 2 / (1.0 + (f / 120.0) ** 2)  # high-pass below ~120 Hz
    shape /= np.sqrt(1.0 + (f / 500.0) ** 2)  # -6 dB/oct above ~500 Hz
    x = np.fft.irfft(spec * shape, n)
    return x / np.sqrt(np.mean(x**2))


DirectionTrack = Sequence[tuple[float, Direction]]


def render_moving_source(
    source: np.ndarray,
    direction_track: DirectionTrack,
    geometry: ArrayGeometry,
    sample_rate: float,
    stft: StftConfig | None = None,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Render a mono source arriving from a (possibly moving) direction.

    Per analysis frame, the direction held at the frame center is applied
    as a free-field phase ramp; frames crossfade through the overlap-add
    windows.  A single-entry track reduces to a fixed fractional delay.
    Returns (n_out, N), truncated to the synthesizable length.
    """
    x = np.asarray(source, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"source must be mono, got shape {x.shape}")
    cfg = stft or StftConfig(sample_rate=sample_rate)
    if cfg.sample_rate != sample_rate:
        raise ValueError("stft config sample_rate disagrees with sample_rate")
    times = np.array([t for t, _ in direction_track], dtype=np.float64)
    if times.size == 0:
        raise ValueError("direction track is empty")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("direction track timestamps must be strictly increasing")
    if times[0] > cfg.frame_center_time(0):
        raise ValueError(
            f"direction track starts at {times[0]:.6f}s, after the first frame "
            f"center {cfg.frame_center_time(0):.6f}s"
        )

    n_frames = cfg.n_frames(x.size)
    if n_frames == 0:
        return np.zeros((0, geometry.n_channels))
    omega = 2.0 * np.pi * bin_frequencies(cfg.n_bins, sample_rate)
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    segs = x[idx] * cfg.window[None, :]
    spectra = np.fft.rfft(segs, axis=1)  # (T, B)

    out = np.zeros((cfg.output_len(n_frames), geometry.n_channels))
    ramp_cache: dict[int, np.ndarray] = {}
    for t in range(n_frames):
        held = int(np.searchsorted(times, cfg.frame_center_time(t), side="right")) - 1
        if held not in ramp_cache:
            delays = plane_wave_delays(geometry, direction_track[held][1], speed_of_sound)
            ramp_cache[held] = np.exp(-1j * omega[:, None] * delays[None, :])
        frame = np.fft.irfft(spectra[t][:, None] * ramp_cache[held], n=cfg.frame_len, axis=0)
        start = t * cfg.hop
        out[start : start + cfg.frame_len] += frame * cfg.window[:, None]
    return out / cfg.cola_gain


@dataclass(frozen=True)
class SceneRender:
    """A rendered scene: the mixture is the exact sum of its stems."""

    mixture: np.ndarray  # (n_samples, N)
    stems: dict[str, np.ndarray]
    sample_rate: float
    geometry: ArrayGeometry
    metadata: dict

    def __post_init__(self):
        total = sum(self.stems.values())
        err = np.abs(self.mixture - total)
        scale = max(float(np.max(np.abs(self.mixture))), 1e-300)
        if float(np.max(err)) > 1e-9 * scale:
            raise ValueError("mixture does not equal the sum of stems")


def build_scene(
    target_speech: np.ndarray,
    target_track: DirectionTrack,
    interferer_speech: np.ndarray | None,
    interferer_track: DirectionTrack | None,
    geometry: ArrayGeometry,
    snr_db_target_to_noise: float,
    seed: int,
    sample_rate: float = 48000.0,
    n_plane_waves: int = 64,
    stft: StftConfig | None = None,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> SceneRender:
    """Compose target (+ optional interferer) stems with isotropic noise.

    The noise stem is scaled so the channel-0 target-to-noise power ratio
    equals ``snr_db_target_to_noise``; the mixture is the literal sum of
    the stems, so stem-based metrics are exact.
    """
    target = render_moving_source(
        target_speech, target_track, geometry, sample_rate, stft, speed_of_sound
    )
    n_samples = target.shape[0]
    stems = {"target": target}
    if interferer_speech is not None:
        if interferer_track is None:
            raise ValueError("interferer_track is required with interferer_speech")
        interferer = render_moving_source(
            interferer_speech, interferer_track, geometry, sample_rate, stft, speed_of_sound
        )
        if interferer.shape[0] < n_samples:
            interferer = np.vstack(
                [interferer, np.zeros((n_samples - interferer.shape[0], geometry.n_channels))]
            )
        stems["interferer"] = interferer[:n_samples]
    noise = diffuse_noise(
        geometry, n_samples / sample_rate, sample_rate, n_plane_waves, seed, speed_of_sound
    )
    noise = noise[:n_samples]
    p_target = float(np.mean(target[:, 0] ** 2))
    p_noise = float(np.mean(noise[:, 0] ** 2))
    if p_target == 0.0 or p_noise == 0.0:
        raise ValueError("target or noise stem has zero power at channel 0")
    noise = noise * np.sqrt(p_target / p_noise * 10.0 ** (-snr_db_target_to_noise / 10.0))
    stems["noise"] = noise
    mixture = sum(stems.values())
    return SceneRender(
        mixture=mixture,
        stems=stems,
        sample_rate=sample_rate,
        geometry=geometry,
        metadata={
            "seed": seed,
            "snr_db_target_to_noise": snr_db_target_to_noise,
            "n_plane_waves": n_plane_waves,
        },
    )
