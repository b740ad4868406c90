"""Motion data model: keyframed motions, interpolation, motion library.

Motions are stored as JSON ``.motion`` documents (schema in
``docs/formats.md``).  A motion library is a directory of motion files plus
an ``index.json``; retrieval returns a motion bit-identical to what was
stored (JSON float round-tripping is exact).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import layout

MOTION_FORMAT = "animbiped-motion/1"
DEFAULT_RATE_HZ = 25.0   # matches the reference animation node density
MODES = ("standing", "walking")

_TIME_EPS = 1e-9


class MotionError(ValueError):
    """Malformed motion data; message carries frame/field context."""


class MotionNotFound(KeyError):
    """Requested motion id is not in the library."""


@dataclass(frozen=True)
class Frame:
    t: float
    q: np.ndarray
    keyframe: bool = False
    eye_state: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))


@dataclass
class Motion:
    id: str
    mode: str
    emotion: str
    frames: list[Frame]
    rate: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise MotionError(f"motion {self.id!r}: mode must be one of "
                              f"{MODES}, got {self.mode!r}")
        if self.rate <= 0:
            raise MotionError(f"motion {self.id!r}: rate must be > 0")
        if not self.frames:
            raise MotionError(f"motion {self.id!r}: no frames")
        dof = self.frames[0].q.shape
        for i, f in enumerate(self.frames):
            if f.t < 0:
                raise MotionError(f"motion {self.id!r} frame {i}: t < 0")
            if f.q.shape != dof:
                raise MotionError(f"motion {self.id!r} frame {i}: DoF count "
                                  f"{f.q.shape} != {dof}")
            if i and f.t <= self.frames[i - 1].t:
                raise MotionError(f"motion {self.id!r} frame {i}: time "
                                  f"{f.t} not after previous {self.frames[i-1].t}")
        if abs(self.frames[0].t) > _TIME_EPS:
            raise MotionError(f"motion {self.id!r}: first frame must be at t = 0")
        if not self.frames[0].keyframe:
            raise MotionError(f"motion {self.id!r}: first frame must be a keyframe")
        if not self.frames[-1].keyframe:
            raise MotionError(f"motion {self.id!r}: last frame must be a keyframe")

    @property
    def duration(self) -> float:
        return self.frames[-1].t - self.frames[0].t

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    @property
    def configs(self) -> np.ndarray:
        return np.stack([f.q for f in self.frames])

    @property
    def keyframe_flags(self) -> np.ndarray:
        return np.array([f.keyframe for f in self.frames])

    def sample(self, t: float) -> np.ndarray:
        """Linearly interpolated configuration at time t (clamped)."""
        times = self.times
        t = min(max(t, times[0]), times[-1])
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), len(times) - 2)
        a, b = self.frames[i], self.frames[i + 1]
        w = (t - a.t) / (b.t - a.t)
        return (1.0 - w) * a.q + w * b.q


def motion_equal(a: Motion, b: Motion) -> bool:
    if (a.id, a.mode, a.emotion, a.rate, len(a.frames)) != \
            (b.id, b.mode, b.emotion, b.rate, len(b.frames)):
        return False
    return all(fa.t == fb.t and fa.keyframe == fb.keyframe
               and fa.eye_state == fb.eye_state and np.array_equal(fa.q, fb.q)
               for fa, fb in zip(a.frames, b.frames))


# ---------------------------------------------------------------------------
# serialization

def motion_to_dict(m: Motion) -> dict:
    return {
        "format": MOTION_FORMAT,
        "id": m.id,
        "mode": m.mode,
        "emotion": m.emotion,
        "rate": m.rate,
        "frames": [
            {"t": f.t, "q": f.q.tolist(), "keyframe": bool(f.keyframe),
             **({"eye_state": f.eye_state} if f.eye_state is not None else {})}
            for f in m.frames
        ],
    }


def motion_from_dict(doc: dict, source: str = "<dict>") -> Motion:
    if not isinstance(doc, dict) or doc.get("format") != MOTION_FORMAT:
        raise MotionError(f"{source}: not a {MOTION_FORMAT} document")
    for key in ("id", "mode", "frames"):
        if key not in doc:
            raise MotionError(f"{source}: missing field {key!r}")
    frames = []
    for i, fd in enumerate(doc["frames"]):
        try:
            frames.append(Frame(t=float(fd["t"]),
                                q=np.array(fd["q"], dtype=float),
                                keyframe=bool(fd.get("keyframe", False)),
                                eye_state=fd.get("eye_state")))
        except (KeyError, TypeError, ValueError) as e:
            raise MotionError(f"{source}: frames[{i}]: {e}") from e
    try:
        return Motion(id=str(doc["id"]), mode=str(doc["mode"]),
                      emotion=str(doc.get("emotion", "")), frames=frames,
                      rate=float(doc.get("rate", DEFAULT_RATE_HZ)))
    except MotionError as e:
        raise MotionError(f"{source}: {e}") from e


def save_motion(m: Motion, path: str | Path) -> None:
    Path(path).write_text(json.dumps(motion_to_dict(m), indent=1))


def parse_motion(path: str | Path) -> Motion:
    """Load and validate a ``.motion`` file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise MotionError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return motion_from_dict(doc, source=str(path))


# ---------------------------------------------------------------------------
# keyframe interpolation

def _catmull_rom_tangents(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-keyframe tangents: central slopes inside, one-sided at the ends."""
    m = np.empty_like(values)
    m[0] = (values[1] - values[0]) / (times[1] - times[0])
    m[-1] = (values[-1] - values[-2]) / (times[-1] - times[-2])
    if len(times) > 2:
        m[1:-1] = ((values[2:] - values[:-2]).T / (times[2:] - times[:-2])).T
    return m


def _bezier_segment(t, t0, t1, p0, p1, m0, m1):
    """Cubic Bezier with control points derived from Hermite tangents."""
    dt = t1 - t0
    c0, c3 = p0, p1
    c1 = p0 + m0 * (dt / 3.0)
    c2 = p1 - m1 * (dt / 3.0)
    s = (t - t0) / dt
    r = 1.0 - s
    return (r ** 3) * c0 + 3 * (r ** 2) * s * c1 + 3 * r * (s ** 2) * c2 + (s ** 3) * c3


def interpolate_keyframes(keyframes: list[Frame], method: str = "bezier",
                          rate_hz: float = DEFAULT_RATE_HZ, *,
                          id: str = "interpolated", mode: str = "standing",
                          emotion: str = "") -> Motion:
    """Fill a keyframe sequence to a frame grid at ``rate_hz``.

    The output contains every input keyframe exactly (flagged) plus frames at
    1/rate spacing from the first keyframe; both methods reproduce keyframe
    values exactly at keyframe times.
    """
    if len(keyframes) < 2:
        raise MotionError("need at least 2 keyframes to interpolate")
    if rate_hz <= 0:
        raise MotionError("rate must be > 0")
    if method not in ("linear", "bezier"):
        raise MotionError(f"unknown interpolation method {method!r}")
    kt = np.array([k.t for k in keyframes])
    if np.any(np.diff(kt) <= 0):
        raise MotionError("keyframe times must be strictly increasing")
    kq = np.stack([k.q for k in keyframes])

    n_grid = int(np.floor((kt[-1] - kt[0]) * rate_hz + _TIME_EPS)) + 1
    grid = kt[0] + np.arange(n_grid) / rate_hz
    off_grid = [t for t in kt if np.min(np.abs(grid - t)) > _TIME_EPS]
    times = np.sort(np.concatenate([grid, off_grid]))
    is_kf = np.min(np.abs(times[:, None] - kt[None, :]), axis=1) <= _TIME_EPS

    if method == "linear":
        qs = np.stack([np.interp(times, kt, kq[:, d])
                       for d in range(kq.shape[1])], axis=1)
    else:
        tangents = _catmull_rom_tangents(kt, kq)
        seg = np.clip(np.searchsorted(kt, times, side="right") - 1, 0, len(kt) - 2)
        qs = np.empty((len(times), kq.shape[1]))
        for i, (t, s) in enumerate(zip(times, seg)):
            qs[i] = _bezier_segment(t, kt[s], kt[s + 1], kq[s], kq[s + 1],
                                    tangents[s], tangents[s + 1])
    # reproduce keyframe values exactly (no float noise at the knots)
    kf_of_time = {i: int(np.argmin(np.abs(kt - t)))
                  for i, t in enumerate(times) if is_kf[i]}
    eye_by_kf = {i: k.eye_state for i, k in enumerate(keyframes)}
    frames = []
    for i, t in enumerate(times):
        if i in kf_of_time:
            j = kf_of_time[i]
            frames.append(Frame(t=kt[j] - kt[0], q=kq[j], keyframe=True,
                                eye_state=eye_by_kf[j]))
        else:
            frames.append(Frame(t=t - kt[0], q=qs[i], keyframe=False))
    return Motion(id=id, mode=mode, emotion=emotion, frames=frames, rate=rate_hz)


# ---------------------------------------------------------------------------
# motion library

@dataclass
class MotionLibrary:
    """Directory-backed motion store with an index file."""
    path: Path
    _index: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.path = Path(self.path)
        self.path.mkdir(parents=True, exist_ok=True)
        idx = self.path / "index.json"
        if idx.exists():
            doc = json.loads(idx.read_text())
            if doc.get("format") != "animbiped-motion-library/1":
                raise MotionError(f"{idx}: not a motion library index")
            self._index = dict(doc["motions"])

    def _save_index(self):
        (self.path / "index.json").write_text(json.dumps(
            {"format": "animbiped-motion-library/1", "motions": self._index},
            indent=1, sort_keys=True))

    def ids(self) -> list[str]:
        return sorted(self._index)

    def __contains__(self, motion_id: str) -> bool:
        return motion_id in self._index

    def put(self, motion: Motion, overwrite: bool = False) -> None:
        if motion.id in self._index and not overwrite:
            raise MotionError(f"motion id {motion.id!r} already in library "
                              "(pass overwrite=True to replace)")
        fname = f"{motion.id}.motion"
        save_motion(motion, self.path / fname)
        self._index[motion.id] = fname
        self._save_index()

    def get(self, motion_id: str) -> Motion:
        if motion_id not in self._index:
            raise MotionNotFound(motion_id)
        return parse_motion(self.path / self._index[motion_id])

    def catalog(self) -> list[dict]:
        out = []
        for mid in self.ids():
            m = self.get(mid)
            out.append({"id": m.id, "mode": m.mode, "emotion": m.emotion,
                        "duration": m.duration, "frames": len(m.frames)})
        return out


def library_put(lib: MotionLibrary, motion: Motion, overwrite: bool = False):
    lib.put(motion, overwrite=overwrite)


def library_get(lib: MotionLibrary, motion_id: str) -> Motion:
    return lib.get(motion_id)


# ---------------------------------------------------------------------------
# target rigs (animation-side pose targets consumed by the IK)

@dataclass(frozen=True)
class TargetRig:
    """Pose targets for one animation frame.

    pelvis_pose: 6-vector [x y z roll pitch yaw]; foot_targets: world foot
    center targets per side; leg_yaw_targets: per-leg yaw in the pelvis
    frame's horizontal plane (drives the hip yaw joints).
    """
    pelvis_pose: np.ndarray
    foot_targets: dict[str, np.ndarray]
    leg_yaw_targets: dict[str, float]

    def __post_init__(self):
        object.__setattr__(self, "pelvis_pose",
                           np.asarray(self.pelvis_pose, dtype=float))
        if self.pelvis_pose.shape != (6,):
            raise MotionError("pelvis_pose must be a 6-vector")
        ft = {s: np.asarray(v, dtype=float) for s, v in self.foot_targets.items()}
        object.__setattr__(self, "foot_targets", ft)
        for s in ("left", "right"):
            if s not in ft or ft[s].shape != (3,):
                raise MotionError(f"foot_targets[{s!r}] must be a 3-vector")
            if s not in self.leg_yaw_targets:
                raise MotionError(f"leg_yaw_targets missing {s!r}")
        vals = np.concatenate([self.pelvis_pose] + [ft[s] for s in ft]
                              + [[self.leg_yaw_targets[s] for s in ("left", "right")]])
        if not np.all(np.isfinite(vals)):
            raise MotionError("rig targets must be finite")


def rig_to_dict(rig: TargetRig) -> dict:
    return {"format": "animbiped-rig/1",
            "pelvis_pose": rig.pelvis_pose.tolist(),
            "foot_targets": {s: rig.foot_targets[s].tolist()
                             for s in ("left", "right")},
            "leg_yaw_targets": {s: float(rig.leg_yaw_targets[s])
                                for s in ("left", "right")}}


def rig_from_dict(doc: dict, source: str = "<dict>") -> TargetRig:
    if doc.get("format") != "animbiped-rig/1":
        raise MotionError(f"{source}: not an animbiped-rig/1 document")
    return TargetRig(pelvis_pose=np.array(doc["pelvis_pose"], dtype=float),
                     foot_targets={s: np.array(v, dtype=float)
                                   for s, v in doc["foot_targets"].items()},
                     leg_yaw_targets={s: float(v)
                                      for s, v in doc["leg_yaw_targets"].items()})


# ---------------------------------------------------------------------------
# gait-parameter extraction for walking-mode motions

def gait_parameter_track(motion: Motion):
    """Commanded gait parameters [vx, vy, h] over time from a walking motion.

    Velocities are central differences of the pelvis translation; the first
    derivative track is differentiated the same way.  Returns (times, p, pdot)
    with p of shape (n, 3).
    """
    if motion.mode != "walking":
        raise MotionError(f"motion {motion.id!r} is not a walking motion")
    t = motion.times
    qs = motion.configs
    p = np.empty((len(t), 3))
    p[:, 0] = np.gradient(qs[:, layout.X], t)
    p[:, 1] = np.gradient(qs[:, layout.Y], t)
    p[:, 2] = qs[:, layout.Z]
    pdot = np.stack([np.gradient(p[:, i], t) for i in range(3)], axis=1)
    return t, p, pdot
