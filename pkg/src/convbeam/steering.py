"""Pose-driven steering: from tracked wearer/target poses to grid directions.

Poses are world-frame positions plus unit quaternions giving the
world-from-device rotation.  The device frame is +x forward (boresight),
+y left, +z up; azimuth is counterclockwise from +x.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .atf import AtfSet, Direction, nearest_direction


class PoseGapError(ValueError):
    """Pose requested before the first sample of a track."""


class DegenerateDirectionError(ValueError):
    """Wearer and target positions coincide; no direction is defined."""


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Timestamped world-frame position and world-from-device orientation."""

    time: float
    position: np.ndarray  # (3,) meters
    orientation: np.ndarray  # (w, x, y, z) unit quaternion

    def __post_init__(self):
        if not math.isfinite(self.time):
            raise ValueError("pose time must be finite")
        p = np.array(self.position, dtype=np.float64)
        q = np.array(self.orientation, dtype=np.float64)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError(f"position must be a finite 3-vector, got {p}")
        if q.shape != (4,):
            raise ValueError(f"orientation must be (w, x, y, z), got shape {q.shape}")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"orientation quaternion norm {norm} is not 1 within 1e-6")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    def rotation(self) -> np.ndarray:
        return quaternion_to_matrix(self.orientation)


@dataclass(frozen=True)
class PoseTrack:
    """Time-ordered pose samples for one participant."""

    participant_id: str
    samples: tuple[Pose, ...]

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ValueError("pose track must contain at least one sample")
        times = np.array([s.time for s in samples])
        if np.any(np.diff(times) <= 0.0):
            raise ValueError(
                f"timestamps of track '{self.participant_id}' are not strictly increasing"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_times", times)

    @property
    def start_time(self) -> float:
        return self.samples[0].time


def pose_at(track: PoseTrack, t: float) -> Pose:
    """Zero-order hold: the latest sample with time <= t."""
    times = track._times
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i < 0:
        raise PoseGapError(
            f"track '{track.participant_id}' has no pose at t={t:.6f} "
            f"(first sample at {times[0]:.6f})"
        )
    return track.samples[i]


def relative_direction(
    wearer: Pose,
    target_position: np.ndarray,
    marker_offset: np.ndarray | None = None,
) -> Direction:
    """Device-frame direction from the wearer toward a world-frame point.

    ``marker_offset`` shifts the array origin off the tracked point, in
    device coordinates (e.g. tracking-marker center of mass vs array center).
    """
    target = np.asarray(target_position, dtype=np.float64)
    v_world = target - wearer.position
    v_dev = wearer.rotation().T @ v_world
    if marker_offset is not None:
        v_dev = v_dev - np.asarray(marker_offset, dtype=np.float64)
    norm = float(np.linalg.norm(v_dev))
    if norm <= 1e-6:
        raise DegenerateDirectionError(
            f"target within {norm:.2e} m of the wearer; direction undefined"
        )
    azimuth = math.atan2(v_dev[1], v_dev[0])
    inclination = math.acos(min(1.0, max(-1.0, v_dev[2] / norm)))
    return Direction(azimuth, inclination)


def steer(
    atf_set: AtfSet,
    wearer: Pose,
    target_position: np.ndarray,
    marker_offset: np.ndarray | None = None,
) -> int:
    """Grid index of the ATF closest to the wearer-relative target direction."""
    return nearest_direction(atf_set, relative_direction(wearer, target_position, marker_offset))


# ---------------------------------------------------------------------------
# Pose CSV: header time_s,participant_id,px,py,pz,qw,qx,qy,qz, one row per
# sample, time-sorted per participant.
# ---------------------------------------------------------------------------

POSE_CSV_FIELDS = ("time_s", "participant_id", "px", "py", "pz", "qw", "qx", "qy", "qz")


def load_pose_tracks(path: str | os.PathLike) -> dict[str, PoseTrack]:
    """Read pose tracks from CSV, one PoseTrack per participant id."""
    per_id: dict[str, list[Pose]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != POSE_CSV_FIELDS:
            raise ValueError(
                f"pose CSV header must be {','.join(POSE_CSV_FIELDS)}, got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            try:
                pose = Pose(
                    time=float(row["time_s"]),
                    position=np.array([float(row["px"]), float(row["py"]), float(row["pz"])]),
                    orientation=np.array(
                        [float(row["qw"]), float(row["qx"]), float(row["qy"]), float(row["qz"])]
                    ),
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"pose CSV line {row_no}: {exc}") from exc
            per_id.setdefault(row["participant_id"], []).append(pose)
    return {
        pid: PoseTrack(participant_id=pid, samples=tuple(samples))
        for pid, samples in per_id.items()
    }


def write_pose_tracks(path: str | os.PathLike, tracks: dict[str, PoseTrack]) -> None:
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(POSE_CSV_FIELDS)
            for pid in sorted(tracks):
                for s in tracks[pid].samples:
                    writer.writerow(
                        [s.time, pid, *(float(v) for v in s.position),
                         *(float(v) for v in s.orientation)]
                    )
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
