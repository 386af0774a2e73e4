"""L2 training loop, checkpoints and transfer initialisation."""
from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._io import atomic_write_text
from .errors import (
    ConfigError, PreconditionError, ShapeError, TrainingFailure, TransferIncompatible,
)
from .model import WORKER_ONLY, ModelConfig, TrajGATFormer, pack_windows, parameter_shapes
from .numerics import AdamState, Tape, Tensor, adam_step, as_tensor, clip_grad_norm, noam_lr, serialize
from .numerics.tensor import mul, tsum

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    # worker tracks per batch for the worker-only model
    batch_size: int = 4
    # tracks per class per batch for the obstacle model
    class_batch: tuple = (("workers", 3), ("panels", 1))
    warmup: int = 4000
    factor: float = 1.0
    seed: int = 0
    teacher_forcing: bool = True
    # chance that a decoder input step is replaced by the model's own rollout
    sampling_prob: float = 0.0
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.warmup < 1:
            raise ConfigError("warmup must be >= 1")
        if not 0.0 <= self.sampling_prob <= 1.0:
            raise ConfigError(f"sampling_prob must be in [0, 1], got {self.sampling_prob}")
        object.__setattr__(self, "class_batch", tuple(sorted(dict(self.class_batch).items())))

    def to_dict(self):
        d = asdict(self)
        d["class_batch"] = dict(self.class_batch)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "class_batch" in d:
            d["class_batch"] = tuple(dict(d["class_batch"]).items())
        return cls(**d)


def l2_loss(pred, truth):
    """Mean over agents and steps of the squared Euclidean error."""
    pred = as_tensor(pred)
    truth_data = np.asarray(truth.data if isinstance(truth, Tensor) else truth, dtype=np.float64)
    if pred.shape != truth_data.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth_data.shape} differ")
    diff = pred - truth_data
    sq = tsum(mul(diff, diff), axis=-1)
    return sq.mean()


def make_batches(windows, model_cfg, train_cfg, rng):
    """Shuffle windows and pack them greedily up to the per-batch track budget."""
    order = rng.permutation(len(windows))
    if model_cfg.with_obstacle:
        budget = dict(train_cfg.class_batch)
        need_w, need_o = budget.get("workers", 3), budget.get("panels", 1)
    else:
        need_w, need_o = train_cfg.batch_size, 0
    batches, cur, nw, no = [], [], 0, 0
    for i in order:
        w = windows[i]
        cur.append(w)
        nw += len(w.agents)
        no += len(w.obstacles) if model_cfg.with_obstacle else 0
        if nw >= need_w and no >= need_o:
            batches.append(cur)
            cur, nw, no = [], 0, 0
    if cur:
        batches.append(cur)
    return batches


@dataclass
class Checkpoint:
    params: dict
    optimizer_state: AdamState
    step: int
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int = 0
    loss_history: list = field(default_factory=list)

    @property
    def variant(self):
        return self.model_config.variant

    def model(self):
        m = TrajGATFormer(self.model_config, params={})
        m.load_arrays(self.params)
        return m

    def meta(self):
        return {"variant": self.variant, "model_config": self.model_config.to_dict(),
                "train_config": self.train_config.to_dict(), "step": self.step,
                "epoch": self.epoch, "loss_history": [list(r) for r in self.loss_history]}

    def save(self, path):
        return serialize.save(path, self.params, self.meta(), self.optimizer_state)

    def dumps(self):
        return serialize.dumps(self.params, self.meta(), self.optimizer_state)

    @classmethod
    def load(cls, path):
        params, meta, adam = serialize.load(path)
        cfg = ModelConfig.from_dict(meta["model_config"])
        expected = parameter_shapes(cfg)
        bad = [k for k in expected if k not in params or params[k].shape != expected[k]]
        if bad or set(params) - set(expected):
            raise ShapeError("checkpoint tensors do not match its model config: " + ", ".join(bad))
        return cls(params, adam or AdamState.for_params([]), meta["step"], cfg,
                   TrainConfig.from_dict(meta["train_config"]), meta.get("epoch", 0),
                   [tuple(r) for r in meta.get("loss_history", [])])


def mixed_tokens(model, batch, prob, rng):
    """Decoder inputs with each step after the start token swapped, with
    probability ``prob``, for the model's own free-running prediction.

    The rollout is computed without gradients, so the loss stays a plain
    teacher-forced pass over the mixed inputs.
    """
    tokens = model.target_tokens(batch)
    if prob <= 0.0:
        return tokens
    own = model.target_tokens(batch, future=model.autoregressive(batch))
    swap = rng.random(tokens.shape[:2]) < prob
    swap[:, 0] = False
    return np.where(swap[..., None], own, tokens)


def train_epoch(model, data, config, state, rng):
    """One pass over ``data``; returns ``(mean batch loss, last learning rate)``."""
    if not data:
        raise PreconditionError("train_epoch needs at least one window")
    if not config.teacher_forcing:
        raise ConfigError("free-running training is not differentiable here; "
                          "keep teacher_forcing on")
    params = model.parameters()
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match model parameters")
    losses = []
    lr = 0.0
    for batch_windows in make_batches(list(data), model.config, config, rng):
        batch = pack_windows(batch_windows, model.config)
        tokens = mixed_tokens(model, batch, config.sampling_prob, rng)
        with Tape() as tape:
            pred = model.teacher_forced(batch, training=True, rng=rng, tokens=tokens)
            loss = l2_loss(pred, batch.future)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingFailure(f"non-finite loss {value}", step=state.step + 1)
        grads = tape.backward(loss, params)
        if config.clip_norm is not None:
            clip_grad_norm(grads, config.clip_norm)
        lr = noam_lr(state.step + 1, model.config.d_model, config.warmup, config.factor)
        adam_step(params, grads, state, lr)
        losses.append(value)
    return float(np.mean(losses)), lr


def validation_loss(model, windows):
    """Autoregressive L2 loss over ``windows`` in one packed batch."""
    if not windows:
        return math.nan
    batch = pack_windows(list(windows), model.config)
    pred = model.autoregressive(batch)
    return float(l2_loss(pred, batch.future).data)


def _snapshot(model):
    return {k: v.data.copy() for k, v in model.params.items()}


def fit(model, split, config=TrainConfig(), log_path=None, optimizer_state=None,
        progress=None):
    """Train ``model`` and return the checkpoint with the lowest validation loss.

    Validation decodes autoregressively.  Without validation windows the
    training loss picks the checkpoint.  On return the model holds the best
    parameters.
    """
    train = list(split.train)
    if model.config.with_obstacle:
        kept = [w for w in train if w.obstacles]
        if not kept:
            raise ConfigError("the obstacle variant needs windows with obstacle tracks")
        train = kept
    if not train:
        raise PreconditionError("training split is empty")
    val = [w for w in split.val if w.obstacles or not model.config.with_obstacle]
    seeds = np.random.SeedSequence(config.seed).spawn(1)
    rng = np.random.default_rng(seeds[0])
    state = optimizer_state or AdamState.for_params(model.parameters())
    history = []
    best = None
    for epoch in range(1, config.epochs + 1):
        train_loss, lr = train_epoch(model, train, config, state, rng)
        val_loss = validation_loss(model, val) if val else train_loss
        history.append((epoch, train_loss, val_loss, lr))
        if progress is not None:
            progress(epoch, train_loss, val_loss, lr)
        if best is None or val_loss < best[0]:
            best = (val_loss, epoch, _snapshot(model), copy.deepcopy(state))
    _, best_epoch, params, best_state = best
    model.load_arrays(params)
    ckpt = Checkpoint(params, best_state, best_state.step, model.config, config, best_epoch,
                      history)
    if log_path is not None:
        write_training_log(log_path, history)
    return ckpt


def write_training_log(path, history):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "lr_at_epoch_end"])
    for epoch, tr, va, lr in history:
        writer.writerow([epoch, repr(tr), repr(va), repr(lr)])
    return atomic_write_text(path, buf.getvalue())


def transfer_init(target_config, base):
    """Copy a worker-only base checkpoint's parameters into a new model.

    The optimizer restarts from a fresh state.  Any tensor the two configs do
    not share with identical shape makes the transfer fail.
    """
    mismatches = []
    if base.variant != WORKER_ONLY:
        mismatches.append(f"variant (base is {base.variant})")
    if target_config.variant != WORKER_ONLY:
        mismatches.append(f"variant (target is {target_config.variant})")
    target = parameter_shapes(target_config)
    for name, shape in target.items():
        have = base.params.get(name)
        if have is None:
            mismatches.append(f"{name} (missing in base)")
        elif tuple(have.shape) != shape:
            mismatches.append(f"{name} {tuple(have.shape)} -> {shape}")
    mismatches += [f"{n} (not in target)" for n in base.params if n not in target]
    if mismatches:
        raise TransferIncompatible(mismatches)
    model = TrajGATFormer(target_config, params={})
    model.load_arrays({k: base.params[k] for k in target})
    return model, AdamState.for_params(model.parameters())
