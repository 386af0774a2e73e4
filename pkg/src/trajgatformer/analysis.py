"""Walking-speed statistics and figure output."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import PreconditionError
from .trackio import AgentClass

STOP_THRESHOLD = 0.4


def _pair_speeds(track, fps):
    pts = np.asarray(track, dtype=np.float64)
    if len(pts) < 2:
        raise PreconditionError("speed statistics need at least 2 points")
    if fps <= 0:
        raise PreconditionError(f"fps must be positive, got {fps}")
    return np.linalg.norm(np.diff(pts, axis=0), axis=1) * fps


def mean_walking_speed(track, fps=2.5):
    """Average of the consecutive-point speeds, in m/s."""
    return float(_pair_speeds(track, fps).mean())


def stop_fraction(track, fps=2.5, thresh=STOP_THRESHOLD):
    """Share of consecutive-point speeds strictly below ``thresh``."""
    speeds = _pair_speeds(track, fps)
    return int((speeds < thresh).sum()) / len(speeds)


def moving_fraction(track, fps=2.5, thresh=STOP_THRESHOLD):
    speeds = _pair_speeds(track, fps)
    return int((speeds >= thresh).sum()) / len(speeds)


@dataclass
class AgentSpeed:
    id: int
    mean_speed: float
    stop_fraction: float
    n_points: int


@dataclass
class SpeedStats:
    agents: list = field(default_factory=list)
    threshold: float = STOP_THRESHOLD
    fps: float = 2.5

    def to_json(self):
        return json.dumps({"threshold": self.threshold, "fps": self.fps,
                           "agents": [asdict(a) for a in self.agents]}, indent=2)


def speed_stats(scene, thresh=STOP_THRESHOLD, cls=AgentClass.WORKER):
    """Per-agent speed statistics over each agent's frame-ordered points.

    Frames are assumed evenly spaced at the scene's fps.
    """
    stats = SpeedStats(threshold=thresh, fps=scene.fps)
    for (_, ident), pts in sorted(scene.tracks(cls).items(), key=lambda kv: kv[0][1]):
        xy = np.array([pts[f] for f in sorted(pts)])
        if len(xy) < 2:
            continue
        stats.agents.append(AgentSpeed(ident, mean_walking_speed(xy, scene.fps),
                                       stop_fraction(xy, scene.fps, thresh), len(xy)))
    return stats


class PlotKind(str, enum.Enum):
    TRAJECTORY_OVERLAY = "trajectory_overlay"
    LOSS_CURVE = "loss_curve"
    SPEED_BARS = "speed_bars"


@dataclass
class PlotSpec:
    kind: PlotKind
    # name -> (n, 2) points; for SPEED_BARS each point is (agent id, value)
    series: dict
    output: Path
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""


def _series_csv(series):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "x", "y"])
    for name, pts in series.items():
        for x, y in np.asarray(pts, dtype=np.float64).reshape(-1, 2):
            writer.writerow([name, repr(float(x)), repr(float(y))])
    return buf.getvalue()


def emit_plot(spec):
    """Write ``spec.output`` as SVG plus a ``.csv`` of the plotted series.

    Returns the SVG path.
    """
    if not spec.series or any(len(np.asarray(v)) == 0 for v in spec.series.values()):
        raise PreconditionError("plot needs at least one non-empty series")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(spec.output).with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    kind = PlotKind(spec.kind)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    try:
        if kind == PlotKind.SPEED_BARS:
            n = len(spec.series)
            width = 0.8 / n
            for k, (name, pts) in enumerate(spec.series.items()):
                pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
                ax.bar(pts[:, 0] + (k - (n - 1) / 2) * width, pts[:, 1], width, label=name)
        else:
            marker = "o" if kind == PlotKind.TRAJECTORY_OVERLAY else None
            for name, pts in spec.series.items():
                pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
                ax.plot(pts[:, 0], pts[:, 1], marker=marker, markersize=3, label=name)
            if kind == PlotKind.TRAJECTORY_OVERLAY:
                ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel(spec.xlabel)
        ax.set_ylabel(spec.ylabel)
        if spec.title:
            ax.set_title(spec.title)
        ax.legend(fontsize="small")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    atomic_write_text(out, buf.getvalue())
    atomic_write_text(out.with_suffix(".csv"), _series_csv(spec.series))
    return out
