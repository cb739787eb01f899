import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajedit.scenes import (
    EDIT_MARKER_COLOR,
    PointTrack,
    Scene,
    SceneConfig,
    ShapeSpec,
    ground_truth_track,
    generate_scene,
    load_tracks,
    load_video,
    motion_center,
    random_color,
    random_scene_config,
    random_shape,
    save_tracks,
    save_video,
)


def flat_scene(shapes, n=8, size=64):
    return SceneConfig(num_frames=n, width=size, height=size,
                       background="flat", bg_colors=((0.2, 0.2, 0.2),),
                       shapes=shapes)


def square(motion, initial=(32.0, 32.0), size=10.0, color=(0.8, 0.3, 0.1)):
    return ShapeSpec("square", size, color, motion, initial)


# ---------------------------------------------------------------------------
# tracks


def test_static_square_has_zero_path_length():
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [0.0, 0.0]})]), 0)
    track = scene.point_track(32.0, 32.0)
    assert track.path_length == 0.0
    assert np.all(track.displacements == 0.0)


def test_linear_track_displacements():
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [1.0, 0.0]},
                                     initial=(20.0, 32.0))]), 0)
    track = scene.point_track(20.0, 32.0)
    assert np.allclose(track.displacements[1:], [[1.0, 0.0]] * 7)
    assert track.path_length == pytest.approx(7.0)


def test_sinusoid_centers_analytic():
    motion = {"kind": "sinusoid", "amplitude": [4.0, 2.0], "period": 8.0, "phase": 0.3}
    spec = square(motion, initial=(30.0, 30.0))
    centers = spec.centers(8)
    i = np.arange(8)
    arg = 2 * np.pi * i / 8.0 + 0.3
    assert np.allclose(centers[:, 0], 30.0 + 4.0 * np.sin(arg))
    assert np.allclose(centers[:, 1], 30.0 + 2.0 * np.sin(arg))


def test_waypoints_hit_endpoints():
    motion = {"kind": "waypoints", "points": [[40.0, 20.0], [24.0, 40.0]]}
    spec = square(motion, initial=(32.0, 32.0))
    centers = spec.centers(9)
    assert np.allclose(centers[0], [32.0, 32.0])
    assert np.allclose(centers[4], [40.0, 20.0])  # waypoint at the midpoint time
    assert np.allclose(centers[8], [24.0, 40.0])


def test_background_point_follows_drift():
    cfg = SceneConfig(num_frames=6, width=64, height=64,
                      background="scrolling_texture", drift=(0.0, -2.0),
                      shapes=[square({"kind": "linear", "velocity": [0.0, 0.0]},
                                     initial=(50.0, 50.0))])
    scene = Scene(cfg, 3)
    track = scene.point_track(10.0, 40.0)  # off the shape: background point
    assert np.allclose(track.displacements[1:], [[0.0, -2.0]] * 5)


def test_point_track_uses_topmost_shape():
    a = square({"kind": "linear", "velocity": [1.0, 0.0]}, initial=(30.0, 30.0))
    b = square({"kind": "linear", "velocity": [0.0, 1.0]}, initial=(31.0, 31.0))
    scene = Scene(flat_scene([a, b]), 0)
    track = scene.point_track(31.0, 31.0)  # covered by both; b is on top
    assert np.allclose(track.displacements[1], [0.0, 1.0])


def test_point_track_outside_frame_raises():
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [0.0, 0.0]})]), 0)
    with pytest.raises(ValueError):
        scene.point_track(-1.0, 5.0)


def test_track_field_matches_point_track():
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [1.0, -0.5]},
                                     initial=(32.0, 32.0))]), 0)
    field = scene.track_field()
    for x, y in [(32, 32), (5, 5), (60, 20)]:
        assert np.allclose(field.track_at(x, y).positions,
                           scene.point_track(float(x), float(y)).positions)


def test_ground_truth_track_entry_point():
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [0.5, 0.0]})]), 0)
    t = ground_truth_track(scene, (32.0, 32.0))
    assert t.num_frames == 8
    assert np.allclose(t.positions[-1] - t.positions[0], [3.5, 0.0])


# ---------------------------------------------------------------------------
# rendering


def test_render_deterministic():
    cfg = random_scene_config(np.random.default_rng(11))
    v1, f1, m1 = generate_scene(cfg, 99)
    v2, f2, m2 = generate_scene(cfg, 99)
    assert np.array_equal(v1, v2)
    assert np.array_equal(f1.positions, f2.positions)
    assert np.array_equal(m1, m2)


def test_shape_mask_centroid_tracks_center():
    spec = square({"kind": "linear", "velocity": [1.0, 0.5]}, initial=(24.0, 24.0),
                  size=11.0)
    scene = Scene(flat_scene([spec]), 0)
    masks = scene.shape_masks()
    centers = spec.centers(8)
    for i in range(8):
        ys, xs = np.nonzero(masks[0, i])
        assert abs(xs.mean() - centers[i, 0]) <= 0.5
        assert abs(ys.mean() - centers[i, 1]) <= 0.5


def test_shape_color_rendered_in_interior():
    color = (0.9, 0.1, 0.2)
    scene = Scene(flat_scene([square({"kind": "linear", "velocity": [0.0, 0.0]},
                                     color=color)]), 0)
    video = scene.video()
    assert np.allclose(video[:, :, 32, 32], np.asarray(color)[None], atol=1e-6)


def test_video_in_unit_range():
    cfg = random_scene_config(np.random.default_rng(5))
    video, _, _ = generate_scene(cfg, 5)
    assert video.min() >= 0.0 and video.max() <= 1.0
    assert video.dtype == np.float32


# ---------------------------------------------------------------------------
# validation


def test_path_exiting_frame_rejected():
    cfg = flat_scene([square({"kind": "linear", "velocity": [6.0, 0.0]},
                             initial=(50.0, 32.0))])
    with pytest.raises(ValueError, match="exits frame"):
        cfg.validate()


def test_scrolling_requires_drift():
    cfg = SceneConfig(background="scrolling_texture", drift=(0.0, 0.0),
                      shapes=[square({"kind": "linear", "velocity": [0.0, 0.0]})])
    with pytest.raises(ValueError, match="drift"):
        cfg.validate()


def test_flat_background_rejects_drift():
    cfg = SceneConfig(background="flat", drift=(1.0, 0.0),
                      shapes=[square({"kind": "linear", "velocity": [0.0, 0.0]})])
    with pytest.raises(ValueError, match="zero drift"):
        cfg.validate()


def test_scene_needs_a_shape():
    with pytest.raises(ValueError, match="at least one shape"):
        SceneConfig(shapes=[]).validate()


def test_unknown_motion_kind_rejected():
    with pytest.raises(ValueError, match="unknown motion kind"):
        motion_center({"kind": "spiral"}, (0.0, 0.0), 0)


def test_track_positions_must_be_finite():
    with pytest.raises(ValueError, match="finite"):
        PointTrack(np.array([[0.0, np.nan]]))


# ---------------------------------------------------------------------------
# randomized construction


def test_random_color_avoids_marker():
    rng = np.random.default_rng(0)
    marker = np.asarray(EDIT_MARKER_COLOR)
    for _ in range(200):
        c = np.asarray(random_color(rng))
        assert np.linalg.norm(c - marker) >= 0.5


def test_random_color_full_cube_when_unrestricted():
    rng = np.random.default_rng(0)
    hits = sum(
        np.linalg.norm(np.asarray(random_color(rng, avoid=None)) - EDIT_MARKER_COLOR) < 0.5
        for _ in range(500)
    )
    assert hits > 0  # the reserved neighborhood is reachable in training draws


def test_random_shape_respects_region():
    rng = np.random.default_rng(1)
    region = (10, 20, 30, 30)  # top, left, h, w
    for _ in range(50):
        s = random_shape(rng, 8, 64, 64, region=region)
        centers = s.centers(8)
        assert centers[:, 0].min() >= 20 and centers[:, 0].max() <= 49
        assert centers[:, 1].min() >= 10 and centers[:, 1].max() <= 39


def test_random_scene_config_validates():
    for seed in range(30):
        cfg = random_scene_config(np.random.default_rng(seed))
        cfg.validate()


# ---------------------------------------------------------------------------
# serialization


def test_video_round_trip(tmp_path):
    video, _, _ = generate_scene(random_scene_config(np.random.default_rng(2)), 2)
    save_video(video, tmp_path / "v")
    loaded = load_video(tmp_path / "v")
    assert loaded.shape == video.shape
    assert np.abs(loaded - video).max() <= 0.5 / 255.0 + 1e-6  # 8-bit quantization


def test_tracks_round_trip(tmp_path):
    tracks = [PointTrack(np.cumsum(np.random.default_rng(3).normal(size=(8, 2)), axis=0))]
    save_tracks(tracks, tmp_path / "t.json")
    loaded = load_tracks(tmp_path / "t.json")
    assert np.allclose(loaded[0].positions, tracks[0].positions)


def test_scene_config_dict_round_trip():
    cfg = random_scene_config(np.random.default_rng(4))
    again = SceneConfig.from_dict(cfg.to_dict())
    v1, _, _ = generate_scene(cfg, 7)
    v2, _, _ = generate_scene(again, 7)
    assert np.array_equal(v1, v2)


# ---------------------------------------------------------------------------
# properties


@given(
    vx=st.floats(-2, 2, allow_nan=False),
    vy=st.floats(-2, 2, allow_nan=False),
    i=st.integers(0, 50),
)
def test_linear_motion_is_affine_in_time(vx, vy, i):
    pos = motion_center({"kind": "linear", "velocity": [vx, vy]}, (5.0, 7.0), i)
    assert np.allclose(pos, [5.0 + vx * i, 7.0 + vy * i])


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)),
                min_size=2, max_size=12))
def test_displacement_round_trip(points):
    track = PointTrack(np.asarray(points, dtype=np.float64))
    again = PointTrack.from_displacements(points[0], track.displacements)
    assert np.allclose(again.positions, track.positions, atol=1e-9)


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_track_field_consistent_with_masks(seed):
    cfg = random_scene_config(np.random.default_rng(seed), max_shapes=1)
    scene = Scene(cfg, seed)
    masks = scene.shape_masks()
    field = scene.track_field()
    ys, xs = np.nonzero(masks[0, 0])
    if len(ys) == 0:
        return
    k = len(ys) // 2
    expected = scene.shape_track(0)
    got = field.track_at(int(xs[k]), int(ys[k]))
    # interior shape point moves with the shape center
    assert np.allclose(got.displacements, expected.displacements, atol=1e-9)
