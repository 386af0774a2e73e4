"""Displacement metrics, knowledge-based baselines and comparison tables."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, NumericError, PreconditionError, ShapeError
from .trackio import AgentClass


class MetricMode(str, enum.Enum):
    STANDARD = "standard"
    PAPER_LITERAL = "paper_literal"


class BaselineKind(str, enum.Enum):
    CONSTANT_VELOCITY = "constant_velocity"
    KALMAN_CV = "kalman_cv"


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.ndim != 3 or pred.shape[-1] != 2:
        raise ShapeError(f"expected (agents, steps, 2), got {pred.shape}")
    return pred, truth


def ade(pred, truth, mode=MetricMode.STANDARD):
    """Average displacement error in metres.

    ``standard`` averages over every predicted point.  ``paper_literal``
    divides the same sum by ``N * (horizon - 1)``, i.e. 11 for 12 steps.
    """
    pred, truth = _pair(pred, truth)
    standard = float(np.linalg.norm(pred - truth, axis=-1).mean())
    if MetricMode(mode) == MetricMode.STANDARD:
        return standard
    horizon = pred.shape[1]
    if horizon < 2:
        raise ShapeError("paper-literal ADE needs a horizon of at least 2 steps")
    return standard * horizon / (horizon - 1)


def fde(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.linalg.norm(pred[:, -1] - truth[:, -1], axis=-1).mean())


def constant_velocity_predict(observed, horizon=12):
    obs = np.asarray(observed, dtype=np.float64)
    if len(obs) < 2:
        raise PreconditionError("constant-velocity prediction needs at least 2 observed points")
    vel = obs[-1] - obs[-2]
    steps = np.arange(1, horizon + 1, dtype=np.float64)[:, None]
    return obs[-1] + steps * vel


def kalman_filter(observed, q=1e-2, r=1e-1):
    """Filter a track with a 4-state constant-velocity model (unit time step).

    The state starts from the first two points; the remaining points are
    folded in by predict/update cycles.  Returns the final state, its
    covariance and the covariance trace after each update.
    """
    z = np.asarray(observed, dtype=np.float64)
    if len(z) < 2:
        raise PreconditionError("Kalman prediction needs at least 2 observed points")
    f = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
    h = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0]])
    g = np.array([[0.5, 0], [0, 0.5], [1, 0], [0, 1]])
    qm = q * g @ g.T
    rm = r * np.eye(2)
    x = np.concatenate([z[1], z[1] - z[0]])
    p = np.array([[r, 0, r, 0], [0, r, 0, r], [r, 0, 2 * r, 0], [0, r, 0, 2 * r]])
    traces = [float(np.trace(p))]
    for obs in z[2:]:
        x = f @ x
        p = f @ p @ f.T + qm
        s = h @ p @ h.T + rm
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            raise NumericError("innovation covariance is not positive definite") from None
        k = np.linalg.solve(s, h @ p).T
        x = x + k @ (obs - h @ x)
        ikh = np.eye(4) - k @ h
        p = ikh @ p @ ikh.T + k @ rm @ k.T
        traces.append(float(np.trace(p)))
    return x, p, traces


def kalman_predict(observed, horizon=12, q=1e-2, r=1e-1):
    x, _, _ = kalman_filter(observed, q, r)
    steps = np.arange(1, horizon + 1, dtype=np.float64)[:, None]
    return x[:2] + steps * x[2:]


def baseline_predictor(kind, horizon=12, q=1e-2, r=1e-1):
    """Return ``window -> {(class, id): (horizon, 2)}`` for a baseline."""
    kind = BaselineKind(kind)

    def predict(window):
        out = {}
        for a in tuple(window.agents) + tuple(window.obstacles):
            if kind == BaselineKind.CONSTANT_VELOCITY:
                out[(a.cls, a.id)] = constant_velocity_predict(a.observed, horizon)
            else:
                out[(a.cls, a.id)] = kalman_predict(a.observed, horizon, q, r)
        return out

    return predict


@dataclass
class ClassMetrics:
    ade: float
    fde: float
    n_agents: int
    n_windows: int


@dataclass
class MetricReport:
    per_class: dict = field(default_factory=dict)
    mode: MetricMode = MetricMode.STANDARD
    predictor: str = ""

    def __getitem__(self, cls):
        return self.per_class[AgentClass(cls)]

    def to_dict(self):
        return {
            "predictor": self.predictor,
            "mode": MetricMode(self.mode).value,
            "per_class": {c.value: {"ade": m.ade, "fde": m.fde, "n_agents": m.n_agents,
                                    "n_windows": m.n_windows}
                          for c, m in self.per_class.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        per = {AgentClass(k): ClassMetrics(**v) for k, v in d["per_class"].items()}
        return cls(per, MetricMode(d["mode"]), d.get("predictor", ""))


def _model_predictions(model, windows):
    from .model import pack_windows

    batch = pack_windows(list(windows), model.config, require_future=False)
    pred = model.autoregressive(batch)
    out = [dict() for _ in windows]
    for k, wi in enumerate(batch.window_of):
        out[wi][(batch.classes[k], batch.ids[k])] = pred[k]
    return out


def evaluate(predictor, test, mode=MetricMode.STANDARD, classes=None, name=None):
    """ADE/FDE per agent class over ``test`` windows.

    ``predictor`` is a model, a checkpoint, a :class:`BaselineKind` (or its
    string value) or any ``window -> {(class, id): prediction}`` callable.
    Models decode autoregressively.
    """
    test = list(test)
    if not test:
        raise PreconditionError("evaluation needs at least one test window")
    mode = MetricMode(mode)
    label = name
    model = None
    if hasattr(predictor, "model") and hasattr(predictor, "model_config"):
        model = predictor.model()
    elif hasattr(predictor, "autoregressive"):
        model = predictor
    if model is not None:
        label = label or model.config.variant
        if classes is not None and AgentClass.OBSTACLE in {AgentClass(c) for c in classes} \
                and not model.config.with_obstacle:
            raise ConfigError("a worker-only model cannot report obstacle metrics")
        if model.config.with_obstacle:
            test = [w for w in test if w.obstacles]
            if not test:
                raise ConfigError("no test window carries obstacle tracks")
        predictions = _model_predictions(model, test)
    else:
        if isinstance(predictor, (str, BaselineKind)):
            label = label or BaselineKind(predictor).value
            predictor = baseline_predictor(predictor, horizon=len(test[0].agents[0].future))
        label = label or getattr(predictor, "__name__", "predictor")
        predictions = [predictor(w) for w in test]
    wanted = None if classes is None else {AgentClass(c) for c in classes}
    preds, truths, windows = {}, {}, {}
    for wi, (w, pw) in enumerate(zip(test, predictions)):
        for a in tuple(w.agents) + tuple(w.obstacles):
            key = (a.cls, a.id)
            if key not in pw or (wanted is not None and a.cls not in wanted):
                continue
            preds.setdefault(a.cls, []).append(np.asarray(pw[key], dtype=np.float64))
            truths.setdefault(a.cls, []).append(a.future)
            windows.setdefault(a.cls, set()).add(wi)
    report = MetricReport(mode=mode, predictor=label or "")
    for cls in (AgentClass.WORKER, AgentClass.OBSTACLE):
        if cls not in preds:
            continue
        p, t = np.stack(preds[cls]), np.stack(truths[cls])
        report.per_class[cls] = ClassMetrics(ade(p, t, mode), fde(p, t), len(p), len(windows[cls]))
    return report


def load_references(cls=AgentClass.WORKER):
    """Published ``{model: (ade, fde)}`` for one agent class."""
    text = resources.files(__package__).joinpath("references.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    return {k: tuple(v) for k, v in doc[AgentClass(cls).value].items()}


def improvement(ours, ref):
    """Percentage reduction of ``ours`` relative to ``ref``."""
    return (ref - ours) / ref * 100.0


@dataclass
class ComparisonTable:
    header: list
    rows: list

    def to_text(self):
        cells = [self.header] + [[_fmt(c) for c in r] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.header))]
        lines = []
        for n, row in enumerate(cells):
            lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                   for i, (c, w) in enumerate(zip(row, widths))).rstrip())
            if n == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)
        return buf.getvalue()


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _ade_fde(report, cls):
    if isinstance(report, MetricReport):
        m = report.per_class[AgentClass(cls)]
        return m.ade, m.fde
    return tuple(report)


def comparison_table(reports, references=None, cls=AgentClass.WORKER):
    """One row per (report, reference) pair with improvement percentages.

    Without references the table lists ADE and FDE only.
    """
    if not reports:
        raise PreconditionError("comparison needs at least one report")
    if not references:
        rows = [[name, *_ade_fde(r, cls)] for name, r in reports.items()]
        return ComparisonTable(["model", "ade", "fde"], rows)
    header = ["model", "ade", "fde", "reference", "ref_ade", "ref_fde",
              "ade_improvement_pct", "fde_improvement_pct"]
    rows = []
    for name, r in reports.items():
        a, f = _ade_fde(r, cls)
        for ref_name, (ra, rf) in references.items():
            rows.append([name, a, f, ref_name, ra, rf, improvement(a, ra), improvement(f, rf)])
    return ComparisonTable(header, rows)
