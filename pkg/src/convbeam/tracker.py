"""Head-tracklet association.

Trajectories are extended frame by frame by solving an assignment
problem over matching costs

    c[i, j] = ||box_j - motion(box_i)||_2 + alpha * ||feat_j - feat_i||_2

where only pairs with cost below a threshold may match (equivalently, a
maximum-weight matching on weights threshold - cost).  Matched
trajectories have their life refilled; unmatched ones coast at a
motion-predicted box while their life drains, and are removed when it
would drop below zero.  Track identities come from a majority vote over
per-frame face-box IoU matches.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Box = np.ndarray  # (4,) = (x1, y1, x2, y2), x1 < x2, y1 < y2


def _check_box(box) -> np.ndarray:
    b = np.asarray(box, dtype=np.float64)
    if b.shape != (4,) or not np.all(np.isfinite(b)):
        raise ValueError(f"box must be a finite 4-vector, got {box!r}")
    if not (b[0] < b[2] and b[1] < b[3]):
        raise ValueError(f"box corners must satisfy x1 < x2 and y1 < y2, got {b}")
    return b


@dataclass(frozen=True)
class Detection:
    """One head detection: pixel box, appearance feature, frame index."""

    box: np.ndarray
    feature: np.ndarray
    frame: int

    def __post_init__(self):
        b = _check_box(self.box)
        f = np.asarray(self.feature, dtype=np.float64).ravel()
        if not np.all(np.isfinite(f)):
            raise ValueError("feature contains non-finite values")
        b.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "box", b)
        object.__setattr__(self, "feature", f)


@dataclass
class TrackPoint:
    frame: int
    box: np.ndarray
    face_id: int | None = None


@dataclass
class Trajectory:
    """One tracked head with its life/age counters and box history."""

    track_id: int
    last_box: np.ndarray
    last_feature: np.ndarray
    age: int
    life: int
    history: list[TrackPoint] = field(default_factory=list)
    face_id: int | None = None

    def __len__(self) -> int:
        return len(self.history)


@dataclass(frozen=True)
class TrackerConfig:
    threshold_t: float = 100.0  # px; pairs with cost >= threshold never match
    alpha: float = 50.0  # px per unit appearance distance
    max_life: int = 20
    min_track_len: int = 5

    def __post_init__(self):
        if self.threshold_t <= 0:
            raise ValueError("threshold_t must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_life < 1:
            raise ValueError("max_life must be >= 1")
        if self.min_track_len < 1:
            raise ValueError("min_track_len must be >= 1")


@dataclass(frozen=True)
class MotionTransform:
    """Invertible 2-D affine map on pixel coordinates (camera motion)."""

    matrix: np.ndarray  # (2, 2)
    offset: np.ndarray  # (2,)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        t = np.array(self.offset, dtype=np.float64)
        if m.shape != (2, 2) or t.shape != (2,):
            raise ValueError(f"expected (2,2) matrix and (2,) offset, got {m.shape}, {t.shape}")
        if abs(float(np.linalg.det(m))) <= 1e-9:
            raise ValueError("motion transform is not invertible")
        m.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", t)

    @classmethod
    def identity(cls) -> "MotionTransform":
        return cls(matrix=np.eye(2), offset=np.zeros(2))

    @classmethod
    def fit(cls, src_points: np.ndarray, dst_points: np.ndarray) -> "MotionTransform":
        """Least-squares affine fit mapping src points onto dst points."""
        src = np.asarray(src_points, dtype=np.float64)
        dst = np.asarray(dst_points, dtype=np.float64)
        if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2 or src.shape[0] < 3:
            raise ValueError("need matching (n >= 3, 2) point arrays")
        a = np.hstack([src, np.ones((src.shape[0], 1))])
        sol, *_ = np.linalg.lstsq(a, dst, rcond=None)
        return cls(matrix=sol[:2].T, offset=sol[2])

    def inverse(self) -> "MotionTransform":
        inv = np.linalg.inv(self.matrix)
        return MotionTransform(matrix=inv, offset=-inv @ self.offset)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.offset

    def apply_box(self, box: np.ndarray) -> np.ndarray:
        """Map both corners; returns the raw 4-vector (no re-ordering)."""
        pts = self.apply_points(np.asarray(box, dtype=np.float64).reshape(2, 2))
        return pts.reshape(4)


def match_cost(
    traj: Trajectory,
    det: Detection,
    motion: MotionTransform,
    alpha: float,
) -> float:
    """Box displacement under camera motion plus weighted appearance distance."""
    if det.feature.shape != np.asarray(traj.last_feature).shape:
        raise ValueError(
            f"feature dimension mismatch: {det.feature.shape} vs "
            f"{np.asarray(traj.last_feature).shape}"
        )
    box_term = float(np.linalg.norm(det.box - motion.apply_box(traj.last_box)))
    feat_term = float(np.linalg.norm(det.feature - np.asarray(traj.last_feature)))
    return box_term + alpha * feat_term


def assign(costs: np.ndarray, threshold_t: float) -> list[tuple[int, int]]:
    """Optimal matching minimizing sum of (cost - threshold) over matched pairs.

    Only pairs with cost < threshold can improve the objective, so every
    returned pair satisfies that bound; rows and columns are used at most
    once.  Pairs are returned sorted lexicographically.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"costs must be 2-D, got shape {c.shape}")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    gain = np.minimum(c - threshold_t, 0.0)  # ineligible pairs contribute 0, like no match
    rows, cols = linear_sum_assignment(gain)
    return sorted(
        (int(i), int(j)) for i, j in zip(rows, cols) if c[i, j] < threshold_t
    )


def iou(a, b) -> float:
    """Intersection-over-union of two well-ordered boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = _check_box(a)
    bx1, by1, bx2, by2 = _check_box(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union)


def _ordered_box(raw: np.ndarray) -> np.ndarray:
    """Re-sort a warped corner 4-vector into a well-ordered box."""
    x1, x2 = sorted((raw[0], raw[2]))
    y1, y2 = sorted((raw[1], raw[3]))
    if x1 == x2:
        x2 = x1 + 1e-6
    if y1 == y2:
        y2 = y1 + 1e-6
    return np.array([x1, y1, x2, y2])


class Tracker:
    """Stateful frame-by-frame tracker; one instance per video stream."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.active: list[Trajectory] = []
        self.retired: list[Trajectory] = []
        self.last_frame: int | None = None
        self._next_track_id = 0

    def step(
        self,
        detections: Sequence[Detection],
        motion: MotionTransform | None = None,
        frame: int | None = None,
    ) -> list[Trajectory]:
        """Advance one frame: match, extend, coast, retire, spawn.

        All detections must carry the same frame index, one past the last
        processed frame.  ``frame`` is required only when there are no
        detections to carry it.
        """
        motion = motion or MotionTransform.identity()
        cfg = self.config
        if detections:
            frames = {d.frame for d in detections}
            if len(frames) != 1:
                raise ValueError(f"detections span multiple frames: {sorted(frames)}")
            det_frame = frames.pop()
            if frame is not None and frame != det_frame:
                raise ValueError(f"frame argument {frame} disagrees with detections ({det_frame})")
            frame = det_frame
        elif frame is None:
            if self.last_frame is None:
                raise ValueError("frame index required for the first step without detections")
            frame = self.last_frame + 1
        if self.last_frame is not None and frame != self.last_frame + 1:
            raise ValueError(
                f"frame {frame} does not follow last processed frame {self.last_frame}"
            )

        costs = np.zeros((len(self.active), len(detections)))
        for i, traj in enumerate(self.active):
            for j, det in enumerate(detections):
                costs[i, j] = match_cost(traj, det, motion, cfg.alpha)
        matches = assign(costs, cfg.threshold_t)
        matched_rows = {i for i, _ in matches}
        matched_cols = {j for _, j in matches}

        survivors: list[Trajectory] = []
        for i, traj in enumerate(self.active):
            if i in matched_rows:
                det = detections[next(j for r, j in matches if r == i)]
                traj.last_box = det.box.copy()
                traj.last_feature = det.feature.copy()
                traj.age += 1
                traj.life = cfg.max_life
                traj.history.append(TrackPoint(frame=frame, box=det.box.copy()))
                survivors.append(traj)
            elif traj.life > 0:
                predicted = _ordered_box(motion.inverse().apply_box(traj.last_box))
                traj.last_box = predicted
                traj.age += 1
                traj.life -= 1
                traj.history.append(TrackPoint(frame=frame, box=predicted))
                survivors.append(traj)
            else:
                # a further decrement would take life below zero
                self.retired.append(traj)

        for j, det in enumerate(detections):
            if j in matched_cols:
                continue
            survivors.append(
                Trajectory(
                    track_id=self._next_track_id,
                    last_box=det.box.copy(),
                    last_feature=det.feature.copy(),
                    age=1,
                    life=cfg.max_life,
                    history=[TrackPoint(frame=frame, box=det.box.copy())],
                )
            )
            self._next_track_id += 1

        self.active = survivors
        self.last_frame = frame
        return self.active

    def all_trajectories(self) -> list[Trajectory]:
        return sorted(self.retired + self.active, key=lambda t: t.track_id)


def finalize(
    trajectories: Sequence[Trajectory],
    face_boxes: Mapping[int, Sequence[tuple]],
    config: TrackerConfig,
) -> list[Trajectory]:
    """Suppress short tracks and label the rest by face-ID majority vote.

    Each head box is matched to the same-frame face box of maximum IoU
    (which must be positive); the modal face id labels the trajectory and
    every point in it.  Vote ties resolve to the lowest face id; tracks
    with no face match keep face_id None.
    """
    out = []
    for traj in trajectories:
        if len(traj.history) < config.min_track_len:
            continue
        votes = []
        for point in traj.history:
            best_iou = 0.0
            best_id = None
            for face_box, face_id in face_boxes.get(point.frame, ()):
                v = iou(point.box, face_box)
                if v > best_iou:
                    best_iou, best_id = v, face_id
            if best_id is not None:
                votes.append(best_id)
        label = None
        if votes:
            counts = Counter(votes)
            top = max(counts.values())
            label = min(fid for fid, n in counts.items() if n == top)
        out.append(
            replace(
                traj,
                face_id=label,
                history=[TrackPoint(p.frame, p.box.copy(), label) for p in traj.history],
            )
        )
    return out


# ---------------------------------------------------------------------------
# File formats: detections as JSON lines, output tracks as one JSON array.
# ---------------------------------------------------------------------------


def read_detections_jsonl(path: str | os.PathLike) -> dict[int, list[Detection]]:
    """Read {frame, x1, y1, x2, y2, feature} JSON lines, grouped by frame."""
    per_frame: dict[int, list[Detection]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                det = Detection(
                    box=np.array([obj["x1"], obj["y1"], obj["x2"], obj["y2"]], dtype=np.float64),
                    feature=np.asarray(obj.get("feature", []), dtype=np.float64),
                    frame=int(obj["frame"]),
                )
            except (json.JSONDecodeError, TypeError, KeyError, ValueError) as exc:
                raise ValueError(f"{os.fspath(path)}:{line_no}: {exc}") from exc
            per_frame.setdefault(det.frame, []).append(det)
    return per_frame


def read_face_boxes_jsonl(path: str | os.PathLike) -> dict[int, list[tuple]]:
    """Read {frame, x1, y1, x2, y2, face_id} JSON lines, grouped by frame."""
    per_frame: dict[int, list[tuple]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                box = _check_box([obj["x1"], obj["y1"], obj["x2"], obj["y2"]])
                per_frame.setdefault(int(obj["frame"]), []).append((box, int(obj["face_id"])))
            except (json.JSONDecodeError, TypeError, KeyError, ValueError) as exc:
                raise ValueError(f"{os.fspath(path)}:{line_no}: {exc}") from exc
    return per_frame


def tracks_to_json(trajectories: Sequence[Trajectory]) -> list[dict]:
    return [
        {
            "track_id": t.track_id,
            "face_id": t.face_id,
            "frames": [
                {"frame": p.frame, "box": [float(v) for v in p.box]} for p in t.history
            ],
        }
        for t in trajectories
    ]
