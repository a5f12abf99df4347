import itertools

import numpy as np
import pytest

from convbeam.tracker import (
    Detection,
    MotionTransform,
    Tracker,
    TrackerConfig,
    assign,
    finalize,
    iou,
    match_cost,
    read_detections_jsonl,
    read_face_boxes_jsonl,
    tracks_to_json,
)


def det(box, frame=0, feature=()):
    return Detection(box=np.asarray(box, float), feature=np.asarray(feature, float), frame=frame)


def brute_force_objective(costs, t):
    """Exhaustive enumeration over all partial matchings."""
    n, m = costs.shape
    best = 0.0
    for rows in itertools.chain.from_iterable(
        itertools.combinations(range(n), k) for k in range(min(n, m) + 1)
    ):
        for cols in itertools.permutations(range(m), len(rows)):
            best = min(best, sum(costs[i, j] - t for i, j in zip(rows, cols)))
    return best


# --- match_cost -------------------------------------------------------------------


def test_match_cost_zero_for_identical():
    t = Tracker()
    t.step([det([0, 0, 10, 10], 0, [1.0, 0.0])])
    traj = t.active[0]
    d = det([0, 0, 10, 10], 1, [1.0, 0.0])
    assert match_cost(traj, d, MotionTransform.identity(), alpha=1.0) == 0.0


def test_match_cost_box_offset():
    t = Tracker()
    t.step([det([0, 0, 10, 10], 0)])
    d = det([3, 4, 13, 14], 1)
    got = match_cost(t.active[0], d, MotionTransform.identity(), alpha=0.0)
    assert got == pytest.approx(np.sqrt(50.0))


def test_match_cost_feature_distance():
    t = Tracker()
    t.step([det([0, 0, 10, 10], 0, [1.0, 0.0])])
    d = det([0, 0, 10, 10], 1, [0.0, 1.0])
    got = match_cost(t.active[0], d, MotionTransform.identity(), alpha=1.0)
    assert got == pytest.approx(np.sqrt(2.0))


def test_match_cost_feature_mismatch():
    t = Tracker()
    t.step([det([0, 0, 10, 10], 0, [1.0, 0.0])])
    with pytest.raises(ValueError, match="dimension"):
        match_cost(t.active[0], det([0, 0, 10, 10], 1, [1.0]), MotionTransform.identity(), 1.0)


def test_match_cost_nonnegative():
    rng = np.random.default_rng(0)
    t = Tracker()
    t.step([det([0, 0, 5, 5], 0, rng.standard_normal(4))])
    for _ in range(100):
        b = np.sort(rng.uniform(0, 50, 4))
        d = det([b[0], b[1], b[2] + 1, b[3] + 2], 1, rng.standard_normal(4))
        assert match_cost(t.active[0], d, MotionTransform.identity(), alpha=0.5) >= 0.0


# --- MotionTransform ---------------------------------------------------------------


def test_motion_identity_and_inverse():
    m = MotionTransform(matrix=np.array([[1.1, 0.02], [-0.01, 0.98]]), offset=np.array([3.0, -2.0]))
    pts = np.array([[1.0, 2.0], [10.0, -4.0]])
    back = m.inverse().apply_points(m.apply_points(pts))
    np.testing.assert_allclose(back, pts, atol=1e-12)


def test_motion_rejects_singular():
    with pytest.raises(ValueError, match="invertible"):
        MotionTransform(matrix=np.zeros((2, 2)), offset=np.zeros(2))


def test_motion_fit_recovers_affine():
    rng = np.random.default_rng(1)
    true = MotionTransform(matrix=np.array([[0.9, 0.1], [-0.1, 1.05]]), offset=np.array([5.0, -3.0]))
    src = rng.uniform(0, 100, (20, 2))
    fitted = MotionTransform.fit(src, true.apply_points(src))
    np.testing.assert_allclose(fitted.matrix, true.matrix, atol=1e-9)
    np.testing.assert_allclose(fitted.offset, true.offset, atol=1e-7)


# --- assign -----------------------------------------------------------------------


def test_assign_single_pair_below_threshold():
    assert assign(np.array([[0.5]]), 1.0) == [(0, 0)]


def test_assign_single_pair_above_threshold():
    assert assign(np.array([[2.0]]), 1.0) == []


def test_assign_prefers_cheaper_pairing():
    costs = np.array([[1.0, 10.0], [10.0, 1.0]])
    assert assign(costs, 5.0) == [(0, 0), (1, 1)]


def test_assign_rows_cols_used_once():
    rng = np.random.default_rng(2)
    for _ in range(100):
        costs = rng.uniform(0, 2, (4, 4))
        out = assign(costs, rng.uniform(0.1, 2.0))
        assert len({i for i, _ in out}) == len(out)
        assert len({j for _, j in out}) == len(out)


def test_assign_matches_brute_force_enumeration():
    rng = np.random.default_rng(3)
    for trial in range(500):
        n, m = rng.integers(1, 5), rng.integers(1, 5)
        costs = rng.uniform(0, 2, (n, m))
        t = float(rng.uniform(0.1, 2.0))
        got = assign(costs, t)
        value = sum(costs[i, j] - t for i, j in got)
        assert all(costs[i, j] < t for i, j in got)
        assert value == pytest.approx(brute_force_objective(costs, t), abs=1e-12), f"trial {trial}"


def test_assign_empty():
    assert assign(np.zeros((0, 0)), 1.0) == []
    assert assign(np.zeros((3, 0)), 1.0) == []


# --- iou --------------------------------------------------------------------------


def test_iou_identical():
    assert iou([0, 0, 2, 2], [0, 0, 2, 2]) == 1.0


def test_iou_disjoint():
    assert iou([0, 0, 1, 1], [5, 5, 6, 6]) == 0.0


def test_iou_half_overlapping_unit_squares():
    assert iou([0, 0, 1, 1], [0.5, 0, 1.5, 1]) == pytest.approx(1.0 / 3.0)


def test_iou_bounds():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = np.sort(rng.uniform(0, 10, (2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        b = np.sort(rng.uniform(0, 10, (2, 2)), axis=0).T.ravel()[[0, 2, 1, 3]]
        a = [min(a[0], a[2]) - 0.1, min(a[1], a[3]) - 0.1, max(a[0], a[2]), max(a[1], a[3])]
        b = [min(b[0], b[2]) - 0.1, min(b[1], b[3]) - 0.1, max(b[0], b[2]), max(b[1], b[3])]
        v = iou(a, b)
        assert 0.0 <= v <= 1.0


# --- Tracker.step -----------------------------------------------------------------


def test_step_match_restores_life():
    cfg = TrackerConfig(threshold_t=50.0, alpha=0.0, max_life=20)
    t = Tracker(cfg)
    t.step([det([0, 0, 10, 10], 0)])
    for frame in range(1, 4):
        t.step([], frame=frame)  # coast: life drains
    assert t.active[0].life == 17
    t.step([det([1, 1, 11, 11], 4)])
    assert t.active[0].life == 20
    assert t.active[0].age == 5


def test_step_coast_keeps_box_under_identity_motion():
    t = Tracker(TrackerConfig(threshold_t=50.0, alpha=0.0))
    t.step([det([5, 5, 15, 15], 0)])
    t.step([], frame=1)
    np.testing.assert_allclose(t.active[0].last_box, [5, 5, 15, 15])
    assert t.active[0].life == t.config.max_life - 1


def test_step_coast_follows_inverse_motion():
    t = Tracker(TrackerConfig(threshold_t=50.0, alpha=0.0))
    t.step([det([10, 10, 20, 20], 0)])
    shift = MotionTransform(matrix=np.eye(2), offset=np.array([3.0, 0.0]))
    t.step([], motion=shift, frame=1)
    np.testing.assert_allclose(t.active[0].last_box, [7, 10, 17, 20])


def test_step_removal_after_max_life_plus_one_misses():
    cfg = TrackerConfig(threshold_t=50.0, alpha=0.0, max_life=20)
    t = Tracker(cfg)
    t.step([det([0, 0, 10, 10], 0)])
    for frame in range(1, 21):
        t.step([], frame=frame)
        assert len(t.active) == 1, f"alive through miss {frame}"
        assert t.active[0].life == 20 - frame
    t.step([], frame=21)  # miss number max_life + 1
    assert t.active == []
    assert len(t.retired) == 1
    assert t.retired[0].life == 0
    assert len(t.retired[0].history) == 21


def test_step_spawns_new_ids_never_reused():
    t = Tracker(TrackerConfig(threshold_t=5.0, alpha=0.0, max_life=1))
    t.step([det([0, 0, 10, 10], 0)])
    t.step([det([500, 500, 510, 510], 1)])  # too far: new track, old coasts
    t.step([], frame=2)
    t.step([det([0, 0, 10, 10], 3)])  # old ones are gone; brand-new id
    ids = [traj.track_id for traj in t.all_trajectories()]
    assert ids == [0, 1, 2]


def test_step_rejects_frame_gap():
    t = Tracker()
    t.step([det([0, 0, 10, 10], 0)])
    with pytest.raises(ValueError, match="frame"):
        t.step([det([0, 0, 10, 10], 5)])


def test_step_rejects_mixed_frames():
    t = Tracker()
    with pytest.raises(ValueError, match="frames"):
        t.step([det([0, 0, 10, 10], 0), det([20, 20, 30, 30], 1)])


def test_step_life_always_in_range():
    rng = np.random.default_rng(5)
    cfg = TrackerConfig(threshold_t=30.0, alpha=0.0, max_life=5)
    t = Tracker(cfg)
    for frame in range(60):
        dets = []
        for _ in range(rng.integers(0, 3)):
            x, y = rng.uniform(0, 100, 2)
            dets.append(det([x, y, x + 10, y + 10], frame))
        t.step(dets, frame=frame)
        for traj in t.active:
            assert 0 <= traj.life <= cfg.max_life
            assert traj.age == len(traj.history)


# --- finalize ----------------------------------------------------------------------


def test_finalize_drops_short_tracks():
    cfg = TrackerConfig(min_track_len=5)
    t = Tracker(cfg)
    for frame in range(4):
        t.step([det([0, 0, 10, 10], frame)])
    assert finalize(t.all_trajectories(), {}, cfg) == []


def test_finalize_majority_vote():
    cfg = TrackerConfig(threshold_t=50.0, alpha=0.0, min_track_len=3)
    t = Tracker(cfg)
    for frame in range(3):
        t.step([det([0, 0, 10, 10], frame)])
    faces = {
        0: [(np.array([0, 0, 10, 10.0]), 2)],
        1: [(np.array([1, 1, 11, 11.0]), 2)],
        2: [(np.array([0, 0, 10, 10.0]), 3)],
    }
    out = finalize(t.all_trajectories(), faces, cfg)
    assert out[0].face_id == 2
    assert all(p.face_id == 2 for p in out[0].history)


def test_finalize_vote_tie_takes_lowest_id():
    cfg = TrackerConfig(threshold_t=50.0, alpha=0.0, min_track_len=2)
    t = Tracker(cfg)
    for frame in range(2):
        t.step([det([0, 0, 10, 10], frame)])
    faces = {
        0: [(np.array([0, 0, 10, 10.0]), 7)],
        1: [(np.array([0, 0, 10, 10.0]), 4)],
    }
    assert finalize(t.all_trajectories(), faces, cfg)[0].face_id == 4


def test_finalize_no_face_matches_keeps_none():
    cfg = TrackerConfig(min_track_len=1)
    t = Tracker(cfg)
    t.step([det([0, 0, 10, 10], 0)])
    out = finalize(t.all_trajectories(), {0: [(np.array([100, 100, 110, 110.0]), 1)]}, cfg)
    assert out[0].face_id is None


def test_finalize_matches_independent_recomputation():
    # oracle: per-frame best-IoU vote recomputed from scratch
    rng = np.random.default_rng(6)
    for scene in range(100):
        cfg = TrackerConfig(threshold_t=40.0, alpha=0.0, max_life=3, min_track_len=3)
        t = Tracker(cfg)
        n_frames = int(rng.integers(4, 10))
        faces = {}
        for frame in range(n_frames):
            dets = []
            for k in range(rng.integers(0, 3)):
                x, y = rng.uniform(0, 80, 2)
                dets.append(det([x, y, x + 20, y + 20], frame))
            t.step(dets, frame=frame)
            frame_faces = []
            for _ in range(rng.integers(0, 3)):
                fx, fy = rng.uniform(0, 80, 2)
                frame_faces.append((np.array([fx, fy, fx + 20, fy + 20]), int(rng.integers(1, 4))))
            faces[frame] = frame_faces
        out = finalize(t.all_trajectories(), faces, cfg)
        for traj in out:
            assert len(traj.history) >= cfg.min_track_len
            votes = []
            for p in traj.history:
                best, best_id = 0.0, None
                for fb, fid in faces.get(p.frame, []):
                    v = iou(p.box, fb)
                    if v > best:
                        best, best_id = v, fid
                if best_id is not None:
                    votes.append(best_id)
            if votes:
                counts = {fid: votes.count(fid) for fid in set(votes)}
                top = max(counts.values())
                expected = min(fid for fid, n in counts.items() if n == top)
            else:
                expected = None
            assert traj.face_id == expected, f"scene {scene}"


# --- file formats -------------------------------------------------------------------


def test_detection_files_roundtrip(tmp_path):
    det_path = tmp_path / "dets.jsonl"
    det_path.write_text(
        '{"frame": 0, "x1": 0, "y1": 0, "x2": 10, "y2": 10, "feature": [0.1, 0.2]}\n'
        '{"frame": 1, "x1": 1, "y1": 1, "x2": 11, "y2": 11, "feature": [0.1, 0.2]}\n'
    )
    per_frame = read_detections_jsonl(det_path)
    assert sorted(per_frame) == [0, 1]
    assert per_frame[0][0].feature.tolist() == [0.1, 0.2]


def test_detection_file_reports_line_number(tmp_path):
    det_path = tmp_path / "bad.jsonl"
    det_path.write_text('{"frame": 0, "x1": 0, "y1": 0, "x2": 10, "y2": 10}\n{"frame": }\n')
    with pytest.raises(ValueError, match=":2"):
        read_detections_jsonl(det_path)


def test_face_boxes_and_tracks_json(tmp_path):
    faces_path = tmp_path / "faces.jsonl"
    faces_path.write_text('{"frame": 0, "x1": 0, "y1": 0, "x2": 10, "y2": 10, "face_id": 3}\n')
    faces = read_face_boxes_jsonl(faces_path)
    assert faces[0][0][1] == 3

    cfg = TrackerConfig(min_track_len=1)
    t = Tracker(cfg)
    t.step([det([0, 0, 10, 10], 0)])
    out = tracks_to_json(finalize(t.all_trajectories(), faces, cfg))
    assert out == [
        {"track_id": 0, "face_id": 3, "frames": [{"frame": 0, "box": [0.0, 0.0, 10.0, 10.0]}]}
    ]
