"""End-to-end workflows: enhance, evaluate, simulate, track.

These functions bind the library modules into the file-level pipeline:
load a multichannel recording and tracked poses, steer a maximum-DI
beamformer frame by frame, write the enhanced mono output, and score it
against an aligned reference over voice-active segments.  All outputs
are written atomically (temp file, then rename), so a failing command
leaves nothing partial behind.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import atf as atf_mod
from . import metrics as metrics_mod
from . import simscene, steering, tracker as tracker_mod
from .audio_io import read_wav, write_wav
from .beamformer import BeamformerWeights, make_target, max_di_weights
from .metrics import TestCase, VaSegments
from .wola import StftConfig, process_stream


def _write_json_atomic(path: str | os.PathLike, obj) -> None:
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _require_file(path, what: str) -> str:
    if path is None:
        raise ValueError(f"{what} is required")
    p = os.fspath(path)
    if not os.path.isfile(p):
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


@dataclass(frozen=True)
class PipelineConfig:
    """Flat configuration for the enhancement pipeline (JSON-friendly)."""

    atf_path: str | None = None
    input_path: str | None = None
    output_path: str | None = None
    pose_path: str | None = None
    va_path: str | None = None
    target_id: str | None = None
    wearer_id: str | None = None
    ref_channel: int = 0
    loading: float = 1e-3
    frame_len: int = 1024
    hop: int = 512
    speed_of_sound: float = atf_mod.SPEED_OF_SOUND
    marker_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    passthrough: bool = False
    cache_weights: bool = True

    def __post_init__(self):
        if self.loading < 0.0:
            raise ValueError("loading must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "marker_offset" in d:
            d = dict(d, marker_offset=tuple(float(v) for v in d["marker_offset"]))
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "PipelineConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def with_overrides(self, **overrides) -> "PipelineConfig":
        set_overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **set_overrides) if set_overrides else self


class SteeredWeightProvider:
    """Per-frame weights for the grid direction nearest the tracked target.

    Weights are recomputed only when the selected direction index changes;
    previously solved directions are served from a cache (the cache can be
    disabled, which is sample-identical, only slower).  Selected indices
    are recorded for the run report.
    """

    def __init__(
        self,
        atf_set: atf_mod.AtfSet,
        cov: atf_mod.IsotropicCovariance,
        stft: StftConfig,
        wearer_track: steering.PoseTrack,
        target_track: steering.PoseTrack,
        ref_channel: int,
        loading: float,
        marker_offset=None,
        cache_weights: bool = True,
    ):
        self.atf_set = atf_set
        self.cov = cov
        self.stft = stft
        self.wearer_track = wearer_track
        self.target_track = target_track
        self.ref_channel = ref_channel
        self.loading = loading
        self.marker_offset = marker_offset
        self.cache_weights = cache_weights
        self.direction_indices: list[int] = []
        self._cache: dict[int, BeamformerWeights] = {}
        self._last: tuple[int, BeamformerWeights] | None = None

    def _weights_for(self, index: int) -> BeamformerWeights:
        if self.cache_weights and index in self._cache:
            return self._cache[index]
        target = make_target(self.atf_set, index, self.ref_channel)
        w = max_di_weights(self.cov, target, self.loading)
        if self.cache_weights:
            self._cache[index] = w
        return w

    def __call__(self, frame_index: int, start_time: float) -> BeamformerWeights:
        t_center = start_time + 0.5 * self.stft.frame_len / self.stft.sample_rate
        wearer = steering.pose_at(self.wearer_track, t_center)
        target = steering.pose_at(self.target_track, t_center)
        index = steering.steer(self.atf_set, wearer, target.position, self.marker_offset)
        self.direction_indices.append(index)
        if self._last is not None and self._last[0] == index and self.cache_weights:
            return self._last[1]
        w = self._weights_for(index)
        self._last = (index, w)
        return w


def selector_weights(n_bins: int, n_channels: int, channel: int) -> BeamformerWeights:
    """One-hot weights that pass a single input channel through unchanged."""
    w = np.zeros((n_bins, n_channels), dtype=np.complex128)
    w[:, channel] = 1.0
    return BeamformerWeights(n_bins=n_bins, weights=w)


def enhance_arrays(
    mixture: np.ndarray,
    sample_rate: float,
    atf_set: atf_mod.AtfSet,
    tracks: dict[str, steering.PoseTrack],
    target_id: str,
    wearer_id: str,
    stft: StftConfig | None = None,
    ref_channel: int = 0,
    loading: float = 1e-3,
    marker_offset=None,
    passthrough: bool = False,
    cache_weights: bool = True,
) -> tuple[np.ndarray, dict]:
    """Run the steered enhancement on in-memory arrays.

    Returns the mono output and a run report with the per-frame selected
    direction indices and stage timing.
    """
    t0 = time.perf_counter()
    x = np.asarray(mixture, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    stft = stft or StftConfig(sample_rate=sample_rate)
    if stft.sample_rate != sample_rate:
        raise ValueError("stft sample_rate disagrees with the signal sample rate")
    if x.shape[1] != atf_set.n_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels but the ATF set expects {atf_set.n_channels}"
        )
    if atf_set.n_bins != stft.n_bins:
        raise ValueError(
            f"ATF set has {atf_set.n_bins} bins but frame_len {stft.frame_len} "
            f"needs {stft.n_bins}"
        )
    if atf_set.sample_rate != sample_rate:
        raise ValueError(
            f"ATF set sample rate {atf_set.sample_rate} does not match input {sample_rate}"
        )
    if not 0 <= ref_channel < atf_set.n_channels:
        raise ValueError(f"ref_channel {ref_channel} out of range")

    if passthrough:
        fixed = selector_weights(stft.n_bins, atf_set.n_channels, ref_channel)
        provider = lambda fi, st: fixed  # noqa: E731
        indices: list[int] = []
    else:
        for pid in (wearer_id, target_id):
            if pid not in tracks:
                raise ValueError(f"pose track for participant '{pid}' not found")
        first_center = stft.frame_center_time(0)
        for pid in (wearer_id, target_id):
            if tracks[pid].start_time > first_center:
                raise steering.PoseGapError(
                    f"track '{pid}' starts at {tracks[pid].start_time:.6f}s, after the "
                    f"first frame center {first_center:.6f}s"
                )
        cov = atf_mod.isotropic_covariance(atf_set)
        provider = SteeredWeightProvider(
            atf_set,
            cov,
            stft,
            tracks[wearer_id],
            tracks[target_id],
            ref_channel,
            loading,
            marker_offset,
            cache_weights,
        )
        indices = provider.direction_indices
    t_setup = time.perf_counter()
    output = process_stream(x, stft, provider)
    t_done = time.perf_counter()
    report = {
        "n_frames": stft.n_frames(x.shape[0]),
        "n_output_samples": int(output.size),
        "sample_rate": sample_rate,
        "ref_channel": ref_channel,
        "loading": loading,
        "passthrough": passthrough,
        "direction_indices": list(indices),
        "timing_s": {
            "setup": t_setup - t0,
            "filter": t_done - t_setup,
            "total": t_done - t0,
        },
    }
    return output, report


def enhance(config: PipelineConfig) -> dict:
    """File-level enhance: read input and poses, steer, write mono output."""
    input_path = _require_file(config.input_path, "input audio")
    atf_path = _require_file(config.atf_path, "ATF set file")
    if config.output_path is None:
        raise ValueError("output_path is required")
    tracks: dict[str, steering.PoseTrack] = {}
    if not config.passthrough:
        pose_path = _require_file(config.pose_path, "pose file")
        if config.target_id is None or config.wearer_id is None:
            raise ValueError("target_id and wearer_id are required")
        tracks = steering.load_pose_tracks(pose_path)
    mixture, sample_rate = read_wav(input_path)
    atf_set = atf_mod.load_atf_set(atf_path)
    stft = StftConfig(frame_len=config.frame_len, hop=config.hop, sample_rate=sample_rate)
    offset = np.asarray(config.marker_offset, dtype=np.float64)
    output, report = enhance_arrays(
        mixture,
        sample_rate,
        atf_set,
        tracks,
        config.target_id or "",
        config.wearer_id or "",
        stft=stft,
        ref_channel=config.ref_channel,
        loading=config.loading,
        marker_offset=offset if np.any(offset) else None,
        passthrough=config.passthrough,
        cache_weights=config.cache_weights,
    )
    write_wav(config.output_path, output, int(sample_rate))
    report["input_path"] = input_path
    report["output_path"] = os.fspath(config.output_path)
    report["target_id"] = config.target_id
    report["wearer_id"] = config.wearer_id
    return report


# --- evaluation --------------------------------------------------------------


def _concat_active(x: np.ndarray, segments: VaSegments, sample_rate: float) -> np.ndarray:
    parts = []
    for a, b in segments.segments:
        i0 = max(0, int(round(a * sample_rate)))
        i1 = min(x.size, int(round(b * sample_rate)))
        if i1 > i0:
            parts.append(x[i0:i1])
    return np.concatenate(parts) if parts else np.zeros(0)


def _score_against_reference(
    degraded: np.ndarray,
    reference: np.ndarray,
    segments: VaSegments,
    sample_rate: float,
    case: TestCase,
    target_id: str,
) -> dict:
    """Project the degraded signal onto the clean reference and score.

    Without ground-truth stems the signal component is the least-squares
    reference image in the degraded signal; the residual is everything else.
    """
    y_a = _concat_active(degraded, segments, sample_rate)
    r_a = _concat_active(reference, segments, sample_rate)
    report = metrics_mod.metric_report(case, target_id, None, None, None)
    if y_a.size == 0 or float(np.dot(r_a, r_a)) == 0.0:
        return report
    alpha = float(np.dot(y_a, r_a) / np.dot(r_a, r_a))
    signal_full = alpha * reference
    residual_full = degraded - signal_full
    try:
        report["snr_db"] = metrics_mod.snr_db(alpha * r_a, y_a - alpha * r_a)
    except ValueError:
        pass
    try:
        report["seg_snr_db"] = metrics_mod.seg_snr_db(
            signal_full, residual_full, segments, sample_rate
        )
    except ValueError:
        pass
    try:
        report["si_sdr_db"] = metrics_mod.si_sdr_db(y_a, r_a)
    except ValueError:
        pass
    return report


def evaluate_arrays(
    enhanced: np.ndarray,
    reference: np.ndarray,
    mixture_ref_channel: np.ndarray,
    va: dict[str, VaSegments],
    target_id: str,
    wearer_id: str,
    case: TestCase,
    sample_rate: float,
    coarse_offset: int = 0,
    max_lag: int = 2400,
) -> dict:
    """Score the enhanced output and the raw reference-channel signal.

    The clean (close-microphone) reference is first aligned against the
    array reference channel, then both degraded signals are scored over
    the selected voice-active segments.
    """
    aligned = metrics_mod.align_to_reference(
        reference, mixture_ref_channel, coarse_offset=coarse_offset, max_lag=max_lag
    )
    n = min(enhanced.size, mixture_ref_channel.size, aligned.size)
    segments = metrics_mod.select_segments(va, target_id, wearer_id, case)
    return {
        "test_case": case.value,
        "target_id": target_id,
        "enhanced": _score_against_reference(
            enhanced[:n], aligned[:n], segments, sample_rate, case, target_id
        ),
        "reference_mic": _score_against_reference(
            mixture_ref_channel[:n], aligned[:n], segments, sample_rate, case, target_id
        ),
    }


def evaluate(
    enhanced_path,
    reference_path,
    mixture_path,
    va_path,
    target_id: str,
    wearer_id: str,
    case: TestCase,
    mixture_channel: int = 0,
    coarse_offset: int = 0,
    max_lag: int = 2400,
) -> dict:
    enhanced, fs_e = read_wav(_require_file(enhanced_path, "enhanced audio"))
    reference, fs_r = read_wav(_require_file(reference_path, "reference audio"))
    mixture, fs_m = read_wav(_require_file(mixture_path, "mixture audio"))
    if not fs_e == fs_r == fs_m:
        raise ValueError(f"sample rates differ: {fs_e}, {fs_r}, {fs_m}")
    va = metrics_mod.load_va(_require_file(va_path, "voice activity file"))
    if not 0 <= mixture_channel < mixture.shape[1]:
        raise ValueError(f"mixture_channel {mixture_channel} out of range")
    return evaluate_arrays(
        enhanced[:, 0],
        reference[:, 0],
        mixture[:, mixture_channel],
        va,
        target_id,
        wearer_id,
        case,
        fs_e,
        coarse_offset=coarse_offset,
        max_lag=max_lag,
    )


# --- simulation --------------------------------------------------------------


def _signal_from_spec(spec: dict, duration_s: float, sample_rate: float) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "speech_shaped_noise":
        sig = simscene.speech_shaped_noise(duration_s, sample_rate, int(spec.get("seed", 0)))
    elif kind == "wav":
        data, fs = read_wav(_require_file(spec.get("path"), "signal wav"))
        if fs != sample_rate:
            raise ValueError(f"signal wav rate {fs} does not match scene rate {sample_rate}")
        sig = data[:, 0]
    else:
        raise ValueError(f"unknown signal kind {kind!r}")
    gain = float(spec.get("gain", 1.0))
    return gain * sig


def _position_track(entries: list[dict]) -> list[tuple[float, np.ndarray]]:
    out = [(float(e["time"]), np.asarray(e["position"], dtype=np.float64)) for e in entries]
    if not out:
        raise ValueError("empty position track")
    times = [t for t, _ in out]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("position track timestamps must be strictly increasing")
    return out


def _positions_at(track: list[tuple[float, np.ndarray]], t: float) -> np.ndarray:
    times = np.array([tt for tt, _ in track])
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i < 0:
        raise ValueError(f"position track starts at {times[0]:.6f}s, after {t:.6f}s")
    return track[i][1]


def _wearer_track_from_manifest(manifest: dict) -> steering.PoseTrack:
    wearer = manifest.get("wearer", {})
    poses = wearer.get("poses") or [
        {"time": 0.0, "position": [0.0, 0.0, 0.0], "quaternion": [1.0, 0.0, 0.0, 0.0]}
    ]
    samples = tuple(
        steering.Pose(
            time=float(p["time"]),
            position=np.asarray(p["position"], dtype=np.float64),
            orientation=np.asarray(p.get("quaternion", [1.0, 0.0, 0.0, 0.0]), dtype=np.float64),
        )
        for p in poses
    )
    return steering.PoseTrack(participant_id=str(wearer.get("id", "wearer")), samples=samples)


def scene_from_manifest(manifest: dict, seed: int | None = None):
    """Build the scene a manifest describes.

    Returns (scene, pose_tracks, va): the rendered stems plus the pose
    tracks and voice-activity map that let the enhancement and evaluation
    stages run on the same scene.
    """
    sample_rate = float(manifest.get("sample_rate", 48000.0))
    duration_s = float(manifest["duration_s"])
    scene_seed = int(manifest.get("seed", 0) if seed is None else seed)
    stft = StftConfig(
        frame_len=int(manifest.get("frame_len", 1024)),
        hop=int(manifest.get("hop", 512)),
        sample_rate=sample_rate,
    )
    geometry = simscene.ArrayGeometry(
        mic_positions=np.asarray(manifest["geometry"]["mic_positions"], dtype=np.float64)
    )
    wearer_track = _wearer_track_from_manifest(manifest)

    n_samples = int(round(duration_s * sample_rate))
    n_frames = stft.n_frames(n_samples)
    if n_frames == 0:
        raise ValueError("scene shorter than one analysis frame")

    def direction_track(entries: list[dict]) -> list[tuple[float, atf_mod.Direction]]:
        pos_track = _position_track(entries)
        track = []
        for t in range(n_frames):
            t_c = stft.frame_center_time(t)
            wearer = steering.pose_at(wearer_track, t_c)
            direction = steering.relative_direction(wearer, _positions_at(pos_track, t_c))
            track.append((t_c, direction))
        return track

    target = manifest["target"]
    target_signal = _signal_from_spec(target["signal"], duration_s, sample_rate)[:n_samples]
    target_dirs = direction_track(target["positions"])

    interferer = manifest.get("interferer")
    interferer_signal = None
    interferer_dirs = None
    if interferer is not None:
        interferer_signal = _signal_from_spec(interferer["signal"], duration_s, sample_rate)
        interferer_signal = interferer_signal[:n_samples]
        interferer_dirs = direction_track(interferer["positions"])

    scene = simscene.build_scene(
        target_signal,
        target_dirs,
        interferer_signal,
        interferer_dirs,
        geometry,
        snr_db_target_to_noise=float(manifest.get("snr_db", 0.0)),
        seed=scene_seed,
        sample_rate=sample_rate,
        n_plane_waves=int(manifest.get("n_plane_waves", 64)),
        stft=stft,
        speed_of_sound=float(manifest.get("speed_of_sound", atf_mod.SPEED_OF_SOUND)),
    )

    out_dur = scene.mixture.shape[0] / sample_rate
    tracks = {wearer_track.participant_id: wearer_track}

    def pose_track_for(pid: str, entries: list[dict]) -> steering.PoseTrack:
        samples = tuple(
            steering.Pose(
                time=float(e["time"]),
                position=np.asarray(e["position"], dtype=np.float64),
                orientation=np.array([1.0, 0.0, 0.0, 0.0]),
            )
            for e in entries
        )
        return steering.PoseTrack(participant_id=pid, samples=samples)

    va = {}
    target_id = str(target.get("id", "target"))
    tracks[target_id] = pose_track_for(target_id, target["positions"])
    va[target_id] = VaSegments(target_id, ((0.0, out_dur),))
    if interferer is not None:
        interferer_id = str(interferer.get("id", "interferer"))
        tracks[interferer_id] = pose_track_for(interferer_id, interferer["positions"])
        va[interferer_id] = VaSegments(interferer_id, ((0.0, out_dur),))
    return scene, tracks, va


def simulate(manifest_path, out_dir, seed: int | None = None) -> dict:
    """Render a manifest to WAV stems plus pose/VA side files."""
    with open(_require_file(manifest_path, "scene manifest"), encoding="utf-8") as f:
        manifest = json.load(f)
    scene, tracks, va = scene_from_manifest(manifest, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    fs = int(scene.sample_rate)
    paths = {"mixture": os.path.join(out_dir, "mixture.wav")}
    write_wav(paths["mixture"], scene.mixture, fs)
    for name, stem in scene.stems.items():
        paths[f"stem_{name}"] = os.path.join(out_dir, f"stem_{name}.wav")
        write_wav(paths[f"stem_{name}"], stem, fs)
    paths["poses"] = os.path.join(out_dir, "poses.csv")
    steering.write_pose_tracks(paths["poses"], tracks)
    paths["va"] = os.path.join(out_dir, "va.json")
    metrics_mod.write_va(paths["va"], va)
    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    echo = dict(manifest)
    if seed is not None:
        echo["seed"] = seed
    _write_json_atomic(paths["manifest"], echo)
    return {
        "sample_rate": fs,
        "n_samples": int(scene.mixture.shape[0]),
        "stems": sorted(scene.stems),
        "paths": paths,
        "metadata": scene.metadata,
    }


# --- tracking ----------------------------------------------------------------


def track_file(
    detections_path,
    faces_path=None,
    config: tracker_mod.TrackerConfig | None = None,
) -> list[dict]:
    """Stream a detection file through the tracker and label the tracks."""
    config = config or tracker_mod.TrackerConfig()
    per_frame = tracker_mod.read_detections_jsonl(_require_file(detections_path, "detections"))
    faces = (
        tracker_mod.read_face_boxes_jsonl(_require_file(faces_path, "face boxes"))
        if faces_path is not None
        else {}
    )
    trk = tracker_mod.Tracker(config)
    if per_frame:
        lo, hi = min(per_frame), max(per_frame)
        for frame in range(lo, hi + 1):
            trk.step(per_frame.get(frame, []), frame=frame)
    labeled = tracker_mod.finalize(trk.all_trajectories(), faces, config)
    return tracker_mod.tracks_to_json(labeled)


# --- ATF utilities -----------------------------------------------------------


def atf_info(path) -> dict:
    s = atf_mod.load_atf_set(_require_file(path, "ATF set file"))
    return {
        "n_channels": s.n_channels,
        "sample_rate": s.sample_rate,
        "n_bins": s.n_bins,
        "n_directions": s.n_directions,
        "max_frequency_hz": float(s.frequencies()[-1]),
    }


def atf_convert(
    out_path,
    in_path=None,
    geometry_path=None,
    n_directions: int = 642,
    n_bins: int = 513,
    sample_rate: float = 48000.0,
    speed_of_sound: float = atf_mod.SPEED_OF_SOUND,
) -> dict:
    """Rewrite an ATF file, or synthesize a free-field set from a geometry JSON."""
    if (in_path is None) == (geometry_path is None):
        raise ValueError("exactly one of in_path or geometry_path is required")
    if in_path is not None:
        atf_set = atf_mod.load_atf_set(_require_file(in_path, "ATF set file"))
    else:
        with open(_require_file(geometry_path, "geometry file"), encoding="utf-8") as f:
            geo = json.load(f)
        geometry = simscene.ArrayGeometry(
            mic_positions=np.asarray(geo["mic_positions"], dtype=np.float64)
        )
        atf_set = simscene.free_field_atf_set(
            geometry,
            n_directions=n_directions,
            n_bins=n_bins,
            sample_rate=sample_rate,
            speed_of_sound=speed_of_sound,
        )
    atf_mod.write_atf_set(out_path, atf_set)
    return {"output_path": os.fspath(out_path), **atf_info(out_path)}
