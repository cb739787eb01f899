import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajedit.scenes import PointTrack, Scene, SceneConfig, ShapeSpec, TrackField
from trajedit.trajectory import (
    MotionCondition,
    TrackSamplerConfig,
    canonical_track,
    clamp_track,
    filter_by_threshold,
    in_bounds,
    load_trajectory_file,
    rasterize,
    sample_motion_condition,
    sample_tracks,
    sparsify_grid,
)


def straight_track(length: float, n: int = 8, start=(32.0, 32.0)) -> PointTrack:
    """Horizontal track of total path length `length`."""
    xs = start[0] + np.linspace(0.0, length, n)
    return PointTrack(np.stack([xs, np.full(n, start[1])], axis=1))


def uniform_field(n=8, h=64, w=64, velocity=(0.0, 0.0)) -> TrackField:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pos = np.empty((n, h, w, 2))
    for i in range(n):
        pos[i, ..., 0] = xs + i * velocity[0]
        pos[i, ..., 1] = ys + i * velocity[1]
    return TrackField(pos)


# ---------------------------------------------------------------------------
# sparsify


def test_sparsify_counts_64():
    tracks = sparsify_grid(uniform_field(), TrackSamplerConfig(grid_cell=8))
    assert len(tracks) == 64


def test_sparsify_counts_single_cell():
    tracks = sparsify_grid(uniform_field(), TrackSamplerConfig(grid_cell=64))
    assert len(tracks) == 1


def test_sparsify_counts_16_on_32px():
    tracks = sparsify_grid(uniform_field(h=32, w=32), TrackSamplerConfig(grid_cell=8))
    assert len(tracks) == 16


def test_sparsify_seeds_at_cell_centers():
    tracks = sparsify_grid(uniform_field(), TrackSamplerConfig(grid_cell=8))
    starts = {tuple(t.positions[0]) for t in tracks}
    assert (4.0, 4.0) in starts and (60.0, 60.0) in starts


def test_sparsify_region_confines_seeds():
    region = np.zeros((64, 64), dtype=bool)
    region[20:40, 30:50] = True
    tracks = sparsify_grid(uniform_field(), TrackSamplerConfig(grid_cell=8, region=region))
    assert tracks  # some cells intersect
    for t in tracks:
        x, y = t.positions[0]
        assert region[int(y), int(x)]


def test_sparsify_empty_region_raises():
    region = np.zeros((64, 64), dtype=bool)
    with pytest.raises(ValueError, match="empty sampling region"):
        sparsify_grid(uniform_field(), TrackSamplerConfig(region=region))


def test_sparsify_region_shape_mismatch_raises():
    with pytest.raises(ValueError, match="region shape"):
        sparsify_grid(uniform_field(), TrackSamplerConfig(region=np.ones((8, 8), bool)))


# ---------------------------------------------------------------------------
# threshold filter


def test_filter_keeps_above_mean():
    cands = [straight_track(l) for l in (2.0, 4.0, 6.0)]
    kept = filter_by_threshold(cands)
    assert [t.path_length for t in kept] == pytest.approx([6.0])


def test_filter_all_equal_falls_back_to_all():
    cands = [straight_track(5.0) for _ in range(3)]
    assert len(filter_by_threshold(cands)) == 3


def test_filter_zero_zero_ten():
    cands = [straight_track(0.0), straight_track(0.0), straight_track(10.0)]
    kept = filter_by_threshold(cands)
    assert len(kept) == 1 and kept[0].path_length == pytest.approx(10.0)


def test_filter_empty_raises():
    with pytest.raises(ValueError):
        filter_by_threshold([])


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 20.0), min_size=1, max_size=12))
def test_filter_matches_brute_force(lengths):
    cands = [straight_track(l) for l in lengths]
    kept = {id(t) for t in filter_by_threshold(cands)}
    mean = np.mean(lengths)
    expect = {id(t) for t, l in zip(cands, lengths) if l > mean}
    if not expect:
        top = max(lengths)
        expect = {id(t) for t, l in zip(cands, lengths) if l == top}
    assert kept == expect


# ---------------------------------------------------------------------------
# weighted sampling


def test_sample_clamps_to_population():
    cands = [straight_track(float(l)) for l in (1, 2, 3)]
    out = sample_tracks(cands, 10, np.random.default_rng(0))
    assert len(out) == 3 and {id(t) for t in out} == {id(t) for t in cands}


def test_sample_zero_lengths_uniform():
    cands = [straight_track(0.0) for _ in range(4)]
    out = sample_tracks(cands, 2, np.random.default_rng(0))
    assert len(out) == 2


def test_sample_frequencies_follow_lengths():
    cands = [straight_track(1.0), straight_track(9.0)]
    rng = np.random.default_rng(123)
    hits = sum(
        sample_tracks(cands, 1, rng)[0].path_length > 5.0 for _ in range(10_000)
    )
    assert abs(hits / 10_000 - 0.9) <= 0.01


def test_sample_bad_n_raises():
    with pytest.raises(ValueError):
        sample_tracks([straight_track(1.0)], 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# rasterization


def test_rasterize_empty_list_gives_zero_maps():
    cond = rasterize([], (8, 64, 64), sigma=3.0)
    assert cond.maps.shape == (8, 2, 64, 64)
    assert np.all(cond.maps == 0.0)


def test_rasterize_static_track_gives_zero_maps():
    cond = rasterize([straight_track(0.0)], (8, 64, 64), sigma=3.0)
    assert np.all(cond.maps == 0.0)


def test_rasterize_write_position_and_value():
    # one step of (3, 0) from (20, 30): frame-1 map holds mass 3 around the
    # frame-0 position, channel 0 only
    track = PointTrack(np.array([[20.0, 30.0], [23.0, 30.0]]))
    cond = rasterize([track], (2, 64, 64), sigma=0.25)  # tight kernel
    m = cond.maps[1]
    assert m[0].sum() == pytest.approx(3.0, abs=1e-4)
    assert np.all(m[1] == 0.0)
    assert m[0, 30, 20] == pytest.approx(3.0, abs=5e-3)  # nearly all mass at the write px


def test_rasterize_mass_preserved_by_smoothing():
    track = straight_track(7.0, n=8, start=(28.0, 30.0))  # interior: no kernel clipping
    cond = rasterize([track], (8, 64, 64), sigma=3.0)
    disp = track.displacements
    for i in range(1, 8):
        assert cond.maps[i, 0].sum() == pytest.approx(disp[i, 0], abs=1e-4)
        assert cond.maps[i, 1].sum() == pytest.approx(disp[i, 1], abs=1e-4)


def test_rasterize_coincident_tracks_sum():
    t = straight_track(7.0)
    one = rasterize([t], (8, 64, 64), sigma=3.0)
    two = rasterize([t, t], (8, 64, 64), sigma=3.0)
    assert np.allclose(two.maps, 2.0 * one.maps, atol=1e-6)


def test_rasterize_linear_in_track_list():
    a = straight_track(5.0, start=(20.0, 20.0))
    b = straight_track(3.0, start=(44.0, 44.0))
    both = rasterize([a, b], (8, 64, 64), sigma=3.0)
    summed = rasterize([a], (8, 64, 64), 3.0).maps + rasterize([b], (8, 64, 64), 3.0).maps
    assert np.allclose(both.maps, summed, atol=1e-6)


def test_rasterize_first_map_zero():
    cond = rasterize([straight_track(7.0)], (8, 64, 64), sigma=3.0)
    assert np.all(cond.maps[0] == 0.0)


def test_rasterize_rejects_out_of_frame_track():
    track = PointTrack(np.array([[2.0, 2.0], [-5.0, 2.0], [2.0, 2.0]]))
    with pytest.raises(ValueError, match="outside frame"):
        rasterize([track], (3, 64, 64), sigma=3.0)


def test_rasterize_rejects_wrong_length_track():
    with pytest.raises(ValueError, match="frames"):
        rasterize([straight_track(1.0, n=5)], (8, 64, 64), sigma=3.0)


def test_motion_condition_validates_first_map():
    maps = np.zeros((4, 2, 8, 8), np.float32)
    maps[0, 0, 3, 3] = 1.0
    with pytest.raises(ValueError, match="all-zero"):
        MotionCondition(maps)


# ---------------------------------------------------------------------------
# bounds helpers and the assembled pipeline


def test_in_bounds_and_clamp():
    t = PointTrack(np.array([[0.0, 0.0], [70.0, 5.0]]))
    assert not in_bounds(t, 64, 64)
    c = clamp_track(t, 64, 64)
    assert in_bounds(c, 64, 64)
    assert c.positions[1, 0] == 63.0


def test_sample_motion_condition_region_confinement():
    shape = ShapeSpec("square", 12.0, (0.9, 0.2, 0.2),
                      {"kind": "linear", "velocity": [1.0, 0.0]}, (26.0, 30.0))
    scene = Scene(SceneConfig(shapes=[shape]), 0)
    region = np.zeros((64, 64), dtype=bool)
    region[22:40, 18:44] = True
    cfg = TrackSamplerConfig(region=region)
    cond, chosen = sample_motion_condition(scene.track_field(), cfg, 4, np.random.default_rng(0))
    assert cond.maps.shape == (8, 2, 64, 64)
    for t in chosen:
        x, y = t.positions[0]
        assert region[int(y), int(x)]
        assert t.path_length == pytest.approx(7.0)  # region picks the moving shape


def test_sample_motion_condition_static_scene_zero_maps():
    shape = ShapeSpec("square", 12.0, (0.9, 0.2, 0.2),
                      {"kind": "linear", "velocity": [0.0, 0.0]}, (32.0, 32.0))
    scene = Scene(SceneConfig(shapes=[shape]), 0)
    cond, chosen = sample_motion_condition(
        scene.track_field(), TrackSamplerConfig(), 3, np.random.default_rng(0))
    assert np.all(cond.maps == 0.0)  # all-max fallback keeps zero-length tracks
    assert len(chosen) == 3


# ---------------------------------------------------------------------------
# trajectory files


def test_canonical_track_positions_form():
    t = canonical_track({"positions": [[1.0, 2.0], [3.0, 4.0]]})
    assert np.allclose(t.positions, [[1, 2], [3, 4]])


def test_canonical_track_displacement_form():
    t = canonical_track({"start": [1.0, 2.0],
                         "displacements": [[0.0, 0.0], [2.0, 2.0]]})
    assert np.allclose(t.positions, [[1, 2], [3, 4]])


def test_canonical_track_rejects_nonzero_first_displacement():
    with pytest.raises(ValueError, match=r"displacements\[0\]"):
        canonical_track({"start": [0.0, 0.0], "displacements": [[1.0, 0.0]]})


def test_canonical_track_rejects_unknown_form():
    with pytest.raises(ValueError):
        canonical_track({"velocity": [1.0, 0.0]})


def test_load_trajectory_file(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('[{"positions": [[1, 2], [3, 4]]}]')
    tracks = load_trajectory_file(p)
    assert len(tracks) == 1 and np.allclose(tracks[0].positions, [[1, 2], [3, 4]])


def test_load_trajectory_file_rejects_non_list(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"positions": [[1, 2]]}')
    with pytest.raises(ValueError, match="JSON list"):
        load_trajectory_file(p)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=30)
@given(
    seed=st.integers(0, 10_000),
    n_tracks=st.integers(1, 5),
)
def test_rasterize_mass_matches_displacement_sums(seed, n_tracks):
    rng = np.random.default_rng(seed)
    tracks = []
    for _ in range(n_tracks):
        start = rng.uniform(24, 40, size=2)
        steps = rng.uniform(-1.5, 1.5, size=(6, 2))
        pos = np.vstack([start, start + np.cumsum(steps, axis=0)])
        tracks.append(PointTrack(pos))
    cond = rasterize(tracks, (7, 64, 64), sigma=2.0)
    total = sum(t.displacements for t in tracks)
    for i in range(1, 7):
        for c in range(2):
            expect = total[i, c]
            tol = max(1e-3 * abs(expect), 1e-4)
            assert abs(cond.maps[i, c].sum() - expect) <= tol
