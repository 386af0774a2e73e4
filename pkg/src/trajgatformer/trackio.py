"""Tracked-object files, pixel-to-world homography, and windowed datasets.

Track files carry one detection per line as ``frame,class,id,x,y`` (commas or
whitespace).  ``#`` lines are comments and a leading header line is skipped.
"""
from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import (
    ConfigError, InsufficientDataError, IntegrityError, ParseError,
    PointAtInfinityError, PreconditionError, SingularSystemError,
)

T_OBS = 8
T_PRED = 12
DEFAULT_FPS = 2.5
DATASET_FORMAT = "trajgatformer-dataset/1"


class AgentClass(str, enum.Enum):
    WORKER = "Worker"
    OBSTACLE = "Obstacle"


class Unit(str, enum.Enum):
    PIXEL = "Pixel"
    WORLD = "World"


_CLASS_ALIASES = {
    "worker": AgentClass.WORKER,
    "obstacle": AgentClass.OBSTACLE,
    "panel": AgentClass.OBSTACLE,
}


def parse_class(text):
    try:
        return _CLASS_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown class {text!r}") from None


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    cls: AgentClass
    id: int
    pos_x: float
    pos_y: float
    unit: Unit = Unit.WORLD


@dataclass(frozen=True)
class Scene:
    records: tuple
    fps: float = DEFAULT_FPS
    name: str = "scene"

    @property
    def unit(self):
        return self.records[0].unit if self.records else Unit.WORLD

    def tracks(self, cls=None):
        """Map ``(class, id)`` to ``{frame: (x, y)}``."""
        out = defaultdict(dict)
        for r in self.records:
            if cls is None or r.cls == cls:
                out[(r.cls, r.id)][r.frame] = (r.pos_x, r.pos_y)
        return dict(out)


def _to_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def parse_track_lines(lines, unit=Unit.WORLD, fps=DEFAULT_FPS, name="scene", path=None):
    unit = Unit(unit)
    records = []
    seen = set()
    first = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if first and fields and fields[0].lower() in ("frame", "frame_number", "frame number"):
            first = False
            continue
        first = False
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}", line=lineno, path=path)
        try:
            frame = _to_int(fields[0])
            cls = parse_class(fields[1])
            ident = _to_int(fields[2])
            x, y = float(fields[3]), float(fields[4])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
        if frame < 0 or ident < 0:
            raise ParseError("frame and id must be non-negative", line=lineno, path=path)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError("non-finite coordinate", line=lineno, path=path)
        key = (frame, cls, ident)
        if key in seen:
            raise IntegrityError(f"line {lineno}: duplicate record for frame {frame}, "
                                 f"{cls.value} {ident}")
        seen.add(key)
        records.append(TrackRecord(frame, cls, ident, x, y, unit))
    records.sort(key=lambda r: (r.frame, r.cls != AgentClass.WORKER, r.id))
    return Scene(tuple(records), fps=fps, name=name)


def parse_track_file(path, unit=Unit.WORLD, fps=DEFAULT_FPS):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_track_lines(fh, unit=unit, fps=fps, name=path.stem, path=path)


def format_track_lines(records):
    return "".join(f"{r.frame},{r.cls.value.lower()},{r.id},{float(r.pos_x)!r},{float(r.pos_y)!r}\n"
                   for r in records)


def write_track_file(path, records, header=True):
    text = "# frame,class,id,x,y\n" if header else ""
    return atomic_write_text(path, text + format_track_lines(records))


# homography -----------------------------------------------------------------

@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.shape != (3, 3):
            raise ConfigError(f"homography must be 3x3, got {h.shape}")
        if abs(np.linalg.det(h)) < 1e-14:
            raise SingularSystemError("homography is not invertible")
        object.__setattr__(self, "h", h)

    def inverse(self):
        inv = np.linalg.inv(self.h)
        if abs(inv[2, 2]) > 1e-12:
            inv = inv / inv[2, 2]
        return Homography(inv)

    def to_json(self):
        return json.dumps({"homography": self.h.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(np.asarray(json.loads(text)["homography"], dtype=np.float64))


def _check_configuration(points, label):
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (4, 2):
        raise ConfigError(f"{label} needs exactly 4 (x, y) points, got shape {pts.shape}")
    scale = max(np.abs(pts).max(), 1.0)
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(pts[i] - pts[j]) <= 1e-12 * scale:
                raise SingularSystemError(f"{label} points {i} and {j} coincide")
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b = pts[j] - pts[i], pts[k] - pts[i]
        cross = a[0] * b[1] - a[1] * b[0]
        if abs(cross) <= 1e-10 * np.linalg.norm(a) * np.linalg.norm(b):
            raise SingularSystemError(f"{label} points {i}, {j}, {k} are collinear")
    return pts


def estimate_homography(src, dst):
    """Exact 4-point homography with ``h[2][2]`` fixed to 1."""
    src = _check_configuration(src, "source")
    dst = _check_configuration(dst, "target")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for n, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * n] = [x, y, 1, 0, 0, 0, -x * u, -y * u]
        a[2 * n + 1] = [0, 0, 0, x, y, 1, -x * v, -y * v]
        b[2 * n], b[2 * n + 1] = u, v
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"calibration system is singular: {exc}") from None
    return Homography(np.append(sol, 1.0).reshape(3, 3))


def apply_homography(h, p):
    """Map a point (or an ``(n, 2)`` array of points) through ``h``."""
    mat = h.h if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ mat.T
    w = hom[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinityError("point maps to infinity under the homography")
    out = hom[:, :2] / w[:, None]
    return out[0] if single else out


def read_calibration(path):
    """Read ``px,py,wx,wy`` lines; returns ``(pixel points, world points)``."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 4:
                raise ParseError(f"expected 4 fields, got {len(fields)}", line=lineno, path=path)
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    if len(rows) != 4:
        raise ParseError(f"calibration needs exactly 4 correspondences, found {len(rows)}", path=path)
    arr = np.asarray(rows)
    return arr[:, :2], arr[:, 2:]


def scene_to_world(scene, h):
    if scene.unit == Unit.WORLD:
        return scene
    xy = np.array([[r.pos_x, r.pos_y] for r in scene.records]).reshape(-1, 2)
    world = apply_homography(h, xy) if len(xy) else xy
    records = tuple(TrackRecord(r.frame, r.cls, r.id, float(w[0]), float(w[1]), Unit.WORLD)
                    for r, w in zip(scene.records, world))
    return Scene(records, fps=scene.fps, name=scene.name)


# windows ----------------------------------------------------------------------

@dataclass(frozen=True)
class AgentTrack:
    cls: AgentClass
    id: int
    observed: np.ndarray
    future: np.ndarray

    def to_dict(self):
        return {"class": self.cls.value, "id": self.id,
                "observed": self.observed.tolist(), "future": self.future.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(AgentClass(d["class"]), int(d["id"]),
                   np.asarray(d["observed"], dtype=np.float64).reshape(-1, 2),
                   np.asarray(d["future"], dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True)
class WindowSample:
    scene_window_id: int
    agents: tuple
    obstacles: tuple = ()
    start_frame: int = 0
    scene: str = "scene"

    def to_dict(self):
        return {"id": self.scene_window_id, "scene": self.scene, "start_frame": self.start_frame,
                "agents": [a.to_dict() for a in self.agents],
                "obstacles": [a.to_dict() for a in self.obstacles]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), tuple(AgentTrack.from_dict(a) for a in d["agents"]),
                   tuple(AgentTrack.from_dict(a) for a in d["obstacles"]),
                   int(d.get("start_frame", 0)), d.get("scene", "scene"))


def build_windows(scene, t_obs=T_OBS, t_pred=T_PRED, stride=1, first_id=0):
    """Slide a ``t_obs + t_pred`` window over the scene.

    A window exists at a start frame when at least one worker is present in
    every frame of the span; agents with gaps are left out of that window.
    """
    if scene.unit != Unit.WORLD:
        raise PreconditionError("build_windows needs a scene in world units")
    if not scene.records:
        return []
    span = t_obs + t_pred
    tracks = scene.tracks()
    lo = min(r.frame for r in scene.records)
    hi = max(r.frame for r in scene.records)
    ordered = sorted(tracks, key=lambda k: (k[0] != AgentClass.WORKER, k[1]))
    windows = []
    for start in range(lo, hi - span + 2, stride):
        frames = range(start, start + span)
        agents, obstacles = [], []
        for cls, ident in ordered:
            pts = tracks[(cls, ident)]
            if all(f in pts for f in frames):
                xy = np.array([pts[f] for f in frames], dtype=np.float64)
                track = AgentTrack(cls, ident, xy[:t_obs], xy[t_obs:])
                (agents if cls == AgentClass.WORKER else obstacles).append(track)
        if agents:
            windows.append(WindowSample(first_id + len(windows), tuple(agents), tuple(obstacles),
                                        start, scene.name))
    return windows


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    test: tuple
    ratios: tuple = (0.70, 0.20, 0.10)
    meta: dict = field(default_factory=dict)

    def to_json(self):
        doc = {"format": DATASET_FORMAT, "ratios": list(self.ratios), "meta": self.meta}
        for part in ("train", "val", "test"):
            doc[part] = [w.to_dict() for w in getattr(self, part)]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != DATASET_FORMAT:
            raise ConfigError(f"unknown dataset format {doc.get('format')!r}")
        parts = {p: tuple(WindowSample.from_dict(w) for w in doc[p]) for p in ("train", "val", "test")}
        return cls(ratios=tuple(doc["ratios"]), meta=doc.get("meta", {}), **parts)

    def save(self, path):
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def split_sizes(n, ratios):
    """Floor for train and val, remainder to test, then no split left empty."""
    sizes = [math.floor(n * ratios[0]), math.floor(n * ratios[1])]
    sizes.append(n - sum(sizes))
    for i in range(3):
        if sizes[i] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1
    return tuple(sizes)


def split_dataset(windows, ratios=(0.70, 0.20, 0.10), seed=0, temporal=True):
    """Split windows into train/val/test.

    The default temporal split sends the earliest windows to train and the
    latest to test.  ``temporal=False`` shuffles with ``seed`` instead.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    windows = list(windows)
    if len(windows) < 3:
        raise InsufficientDataError(f"need at least 3 windows to split, got {len(windows)}")
    if temporal:
        ordered = sorted(windows, key=lambda w: (w.start_frame, w.scene, w.scene_window_id))
    else:
        order = np.random.default_rng(seed).permutation(len(windows))
        ordered = [windows[i] for i in order]
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    return DatasetSplit(tuple(ordered[:n_train]), tuple(ordered[n_train:n_train + n_val]),
                        tuple(ordered[n_train + n_val:]), ratios)
