"""Head-tracklet association on a scripted two-person scene.

Two heads cross the frame while the camera pans; detections drop out for
a stretch in the middle.  The tracker bridges short gaps by coasting on
the camera-motion prediction, retires tracks whose life runs out, and
labels survivors by majority vote over per-frame face-box matches.
"""

import numpy as np

from convbeam import Detection, MotionTransform, Tracker, TrackerConfig, finalize


def box_at(x, y, size=40.0):
    return np.array([x, y, x + size, y + size])


def main():
    cfg = TrackerConfig(threshold_t=80.0, alpha=0.0, max_life=3, min_track_len=5)
    tracker = Tracker(cfg)
    pan = MotionTransform(matrix=np.eye(2), offset=np.array([2.0, 0.0]))  # camera pans right

    faces = {}
    rng = np.random.default_rng(3)
    for frame in range(40):
        detections = []
        # person A walks right; detector misses frames 15..17
        ax = 100.0 + 4.0 * frame
        if not 15 <= frame < 18:
            detections.append(Detection(box=box_at(ax, 200.0), feature=np.zeros(0), frame=frame))
        # person B appears from frame 10
        if frame >= 10:
            bx = 500.0 - 3.0 * frame
            detections.append(Detection(box=box_at(bx, 240.0), feature=np.zeros(0), frame=frame))
        # a flickering false alarm
        if frame % 11 == 0:
            fx, fy = rng.uniform(0, 600, 2)
            detections.append(Detection(box=box_at(fx, fy), feature=np.zeros(0), frame=frame))
        tracker.step(detections, motion=pan, frame=frame)

        faces[frame] = [(box_at(ax, 200.0), 1)]
        if frame >= 10:
            faces[frame] = faces[frame] + [(box_at(500.0 - 3.0 * frame, 240.0), 2)]

        if frame in (0, 10, 17, 20, 39):
            alive = ", ".join(
                f"#{t.track_id}(age {t.age}, life {t.life})" for t in tracker.active
            )
            print(f"frame {frame:2d}: {alive}")

    labeled = finalize(tracker.all_trajectories(), faces, cfg)
    print(f"\n{len(tracker.all_trajectories())} raw trajectories, "
          f"{len(labeled)} survive the {cfg.min_track_len}-frame minimum")
    for t in labeled:
        frames = [p.frame for p in t.history]
        print(
            f"track #{t.track_id}: frames {frames[0]}..{frames[-1]} "
            f"({len(frames)} long), face id {t.face_id}"
        )


if __name__ == "__main__":
    main()
