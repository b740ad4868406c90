import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from animbiped import animio
from animbiped.animio import Frame, Motion, MotionLibrary


def make_motion(times, keyframes=None, mode="standing", motion_id="m", dof=20):
    rng = np.random.default_rng(0)
    n = len(times)
    if keyframes is None:
        keyframes = [True] + [False] * (n - 2) + [True]
    frames = [Frame(t=t, q=rng.standard_normal(dof), keyframe=k)
              for t, k in zip(times, keyframes)]
    return Motion(id=motion_id, mode=mode, emotion="test", frames=frames)


# ---------------------------------------------------------------------------
# validation

def test_duplicate_time_rejected():
    with pytest.raises(animio.MotionError, match="frame 2"):
        make_motion([0.0, 0.2, 0.2, 0.4])


def test_last_frame_must_be_keyframe():
    with pytest.raises(animio.MotionError, match="last frame"):
        make_motion([0.0, 0.1, 0.2], keyframes=[True, False, False])


def test_first_frame_at_zero():
    with pytest.raises(animio.MotionError, match="t = 0"):
        make_motion([0.1, 0.2, 0.3])


def test_dof_mismatch_rejected():
    frames = [Frame(t=0.0, q=np.zeros(20), keyframe=True),
              Frame(t=0.1, q=np.zeros(19), keyframe=True)]
    with pytest.raises(animio.MotionError, match="DoF"):
        Motion(id="m", mode="standing", emotion="", frames=frames)


def test_missing_mode_tag_rejected(tmp_path):
    doc = animio.motion_to_dict(make_motion([0.0, 0.5]))
    del doc["mode"]
    p = tmp_path / "bad.motion"
    p.write_text(json.dumps(doc))
    with pytest.raises(animio.MotionError, match="mode"):
        animio.parse_motion(p)


def test_parse_error_carries_frame_context(tmp_path):
    doc = animio.motion_to_dict(make_motion([0.0, 0.5, 1.0]))
    del doc["frames"][1]["q"]
    p = tmp_path / "bad.motion"
    p.write_text(json.dumps(doc))
    with pytest.raises(animio.MotionError, match=r"frames\[1\]"):
        animio.parse_motion(p)


def test_bundled_tired_nod_fixture():
    from animbiped.assets import motions_dir
    m = animio.parse_motion(motions_dir() / "tired_nod.motion")
    assert m.mode == "standing"
    assert m.emotion == "tired"
    assert m.keyframe_flags.sum() >= 3


# ---------------------------------------------------------------------------
# interpolation

def _kfs(times, values):
    return [Frame(t=t, q=np.atleast_1d(v), keyframe=True)
            for t, v in zip(times, values)]


@pytest.mark.parametrize("rate", [10.0, 25.0, 60.0])
def test_linear_two_keyframes_convex_combination(rate):
    kfs = _kfs([0.0, 1.0], [np.zeros(20), np.ones(20)])
    m = animio.interpolate_keyframes(kfs, "linear", rate)
    for f in m.frames:
        np.testing.assert_allclose(f.q, f.t / 1.0 * np.ones(20), atol=1e-12)


@pytest.mark.parametrize("method", ["linear", "bezier"])
def test_constant_keyframes_reproduced(method):
    v = 0.7 * np.ones(20)
    kfs = _kfs([0.0, 0.4, 1.1], [v, v, v])
    m = animio.interpolate_keyframes(kfs, method, 25.0)
    for f in m.frames:
        np.testing.assert_allclose(f.q, v, atol=1e-12)


def test_bezier_keyframe_times_exact():
    rng = np.random.default_rng(1)
    kts = [0.0, 0.37, 0.9]
    kqs = [rng.standard_normal(20) for _ in kts]
    m = animio.interpolate_keyframes(_kfs(kts, kqs), "bezier", 25.0)
    for kt, kq in zip(kts, kqs):
        match = [f for f in m.frames if abs(f.t - kt) < 1e-9]
        assert len(match) == 1 and match[0].keyframe
        assert np.abs(match[0].q - kq).max() < 1e-12


def test_frame_count_formula():
    kts = [0.0, 0.333, 1.0]   # middle keyframe off the 25 Hz grid
    m = animio.interpolate_keyframes(_kfs(kts, [np.zeros(2)] * 3), "linear", 25.0)
    off_grid = 1
    assert len(m.frames) == int(np.floor(1.0 * 25.0)) + 1 + off_grid


def test_default_rate_matches_reference_node_density():
    kfs = _kfs([0.0, 7.5, 15.0], [np.zeros(20)] * 3)
    m = animio.interpolate_keyframes(kfs, "linear", animio.DEFAULT_RATE_HZ)
    assert abs(len(m.frames) - 373) <= 5


def test_too_few_keyframes():
    with pytest.raises(animio.MotionError, match="2 keyframes"):
        animio.interpolate_keyframes(_kfs([0.0], [np.zeros(2)]), "linear", 25.0)


# ---------------------------------------------------------------------------
# library round-trips

def test_library_put_get_round_trip(tmp_path):
    lib = MotionLibrary(tmp_path / "lib")
    m = make_motion([0.0, 0.04, 0.08, 0.5])
    lib.put(m)
    m2 = lib.get("m")
    assert animio.motion_equal(m, m2)


def test_library_survives_restart(tmp_path):
    lib = MotionLibrary(tmp_path / "lib")
    lib.put(make_motion([0.0, 0.5], motion_id="a"))
    lib2 = MotionLibrary(tmp_path / "lib")
    assert lib2.ids() == ["a"]
    assert animio.motion_equal(lib2.get("a"), make_motion([0.0, 0.5], motion_id="a"))


def test_library_unknown_id(tmp_path):
    lib = MotionLibrary(tmp_path / "lib")
    with pytest.raises(animio.MotionNotFound):
        lib.get("nope")


def test_library_duplicate_put_rejected(tmp_path):
    lib = MotionLibrary(tmp_path / "lib")
    lib.put(make_motion([0.0, 0.5]))
    with pytest.raises(animio.MotionError, match="already"):
        lib.put(make_motion([0.0, 0.5]))
    lib.put(make_motion([0.0, 0.7]), overwrite=True)
    assert lib.get("m").duration == pytest.approx(0.7)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_serialize_parse_round_trip(tmp_path_factory, data):
    n = data.draw(st.integers(min_value=2, max_value=8))
    dts = data.draw(st.lists(st.floats(0.01, 2.0), min_size=n - 1, max_size=n - 1))
    times = np.concatenate([[0.0], np.cumsum(dts)])
    flags = [True] + [data.draw(st.booleans()) for _ in range(n - 2)] + [True]
    vals = data.draw(st.lists(
        st.floats(-1e6, 1e6, allow_nan=False), min_size=n * 4, max_size=n * 4))
    frames = [Frame(t=float(times[i]), q=np.array(vals[4 * i:4 * i + 4]),
                    keyframe=flags[i],
                    eye_state=data.draw(st.sampled_from([None, "happy", "sad"])))
              for i in range(n)]
    m = Motion(id="prop", mode=data.draw(st.sampled_from(["standing", "walking"])),
               emotion=data.draw(st.text(max_size=6)), frames=frames)
    p = tmp_path_factory.mktemp("rt") / "m.motion"
    animio.save_motion(m, p)
    assert animio.motion_equal(m, animio.parse_motion(p))


def test_gait_parameter_track_constant_velocity():
    t = np.arange(0, 2.0, 0.04)
    frames = []
    for i, ti in enumerate(t):
        q = np.zeros(20)
        q[0] = 0.3 * ti
        q[1] = -0.1 * ti
        q[2] = 0.9
        frames.append(Frame(t=ti, q=q, keyframe=(i in (0, len(t) - 1))))
    m = Motion(id="w", mode="walking", emotion="", frames=frames)
    _, p, pdot = animio.gait_parameter_track(m)
    np.testing.assert_allclose(p[:, 0], 0.3, atol=1e-9)
    np.testing.assert_allclose(p[:, 1], -0.1, atol=1e-9)
    np.testing.assert_allclose(p[:, 2], 0.9, atol=1e-12)
    np.testing.assert_allclose(pdot, 0.0, atol=1e-7)
