"""TrajGATFormer and its obstacle-aware variant.

Both variants share the embedding, encoder, graph-attention and decoder
blocks.  The worker-only model encodes worker tracks, adds a social vector
from one GAT layer to every encoded step, and decodes.  The obstacle variant
also encodes panel tracks with a second encoder and appends them to the
decoder memory; panels are forecast with the same decoder.

Several scene windows are processed together by packing their agents along
one axis.  Block-diagonal masks keep attention (GAT and cross-attention)
inside each window, so a packed batch gives the same numbers as running the
windows one by one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from ..numerics import Tensor, dropout, matmul, reshape
from ..trackio import AgentClass
from .layers import (
    decoder_forward, embed_positions, encoder_forward, fuse_memory, gat_layer,
    positional_encoding, timestamp,
)

WORKER_ONLY = "worker_only"
WITH_OBSTACLE = "with_obstacle"
VARIANTS = (WORKER_ONLY, WITH_OBSTACLE)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 512
    n_heads: int = 8
    d_k: int = 256
    worker_encoder_layers: int = 1
    obstacle_encoder_layers: int = 1
    decoder_layers: int = 1
    dropout: float = 0.1
    ffn_hidden: int = 2048
    t_obs: int = 8
    t_pred: int = 12
    variant: str = WORKER_ONLY
    # offsets instead of raw coordinates at the model boundary
    normalize: bool = True
    # GAT edges join workers closer than this (metres); self-loops always
    gat_radius: float = math.inf
    gat_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "gat_radius", float(self.gat_radius))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        counts = (self.d_model, self.n_heads, self.d_k, self.worker_encoder_layers,
                  self.obstacle_encoder_layers, self.decoder_layers, self.ffn_hidden,
                  self.t_obs, self.t_pred)
        if min(counts) < 1:
            raise ConfigError("model sizes and layer counts must all be >= 1")
        if self.d_model % self.n_heads or self.d_k % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} and d_k={self.d_k} must both divide "
                              f"by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for the positional encoding")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def with_obstacle(self):
        return self.variant == WITH_OBSTACLE

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["gat_radius"]):
            d["gat_radius"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(cfg):
    """Ordered ``name -> shape`` for every learnable tensor of ``cfg``."""
    d, dk, hid = cfg.d_model, cfg.d_k, cfg.ffn_hidden
    shapes = {"embed.worker.w_x": (2, d)}
    if cfg.with_obstacle:
        shapes["embed.obstacle.w_x"] = (2, d)
    shapes["embed.target.w_x"] = (2, d)

    def attention(prefix):
        shapes.update({prefix + "w_q": (d, dk), prefix + "w_k": (d, dk),
                       prefix + "w_v": (d, dk), prefix + "w_o": (dk, d)})

    def norm(prefix):
        shapes.update({prefix + "gain": (d,), prefix + "bias": (d,)})

    def ffn(prefix):
        shapes.update({prefix + "w1": (d, hid), prefix + "b1": (hid,),
                       prefix + "w2": (hid, d), prefix + "b2": (d,)})

    encoders = [("enc.worker.", cfg.worker_encoder_layers)]
    if cfg.with_obstacle:
        encoders.append(("enc.obstacle.", cfg.obstacle_encoder_layers))
    for base, n in encoders:
        for layer in range(n):
            p = f"{base}{layer}."
            attention(p + "attn.")
            norm(p + "ln1.")
            ffn(p + "ffn.")
            norm(p + "ln2.")
    shapes["gat.w"] = (d, d)
    shapes["gat.a"] = (2 * d,)
    for layer in range(cfg.decoder_layers):
        p = f"dec.{layer}."
        attention(p + "self_attn.")
        norm(p + "ln1.")
        attention(p + "cross_attn.")
        norm(p + "ln2.")
        ffn(p + "ffn.")
        norm(p + "ln3.")
    shapes["out.w"] = (d, 2)
    shapes["out.b"] = (2,)
    return shapes


def init_params(cfg, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm gains."""
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gain":
            data = np.ones(shape)
        elif leaf in ("bias", "b1", "b2", "b"):
            data = np.zeros(shape)
        else:
            fan_in = shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


@dataclass
class PackedBatch:
    """Agents of several windows laid out along one axis.

    Order: all workers (window by window, ids ascending), then all
    obstacles when the variant predicts them.
    """
    observed: np.ndarray          # (A, t_obs, 2)
    future: np.ndarray | None     # (A, t_pred, 2)
    classes: list
    ids: list
    window_of: np.ndarray         # (A,) index into the window list
    n_workers: int
    gat_adjacency: np.ndarray     # (n_workers, n_workers)
    memory_mask: np.ndarray       # (A, 1, 1, A * t_obs)

    @property
    def n_agents(self):
        return len(self.classes)


def pack_windows(windows, cfg, require_future=True):
    workers, obstacles = [], []
    for wi, w in enumerate(windows):
        workers.extend((wi, a) for a in w.agents)
        if cfg.with_obstacle:
            if not w.obstacles:
                raise ConfigError(f"window {w.scene_window_id} has no obstacle tracks, "
                                  "which the obstacle variant requires")
            obstacles.extend((wi, a) for a in w.obstacles)
    agents = workers + obstacles
    if not workers:
        raise ShapeError("no worker tracks to forecast")
    observed = np.stack([a.observed for _, a in agents])
    if observed.shape[1] != cfg.t_obs:
        raise ShapeError(f"observed length {observed.shape[1]} != t_obs {cfg.t_obs}")
    future = None
    if require_future or all(a.future is not None and len(a.future) for _, a in agents):
        future = np.stack([a.future for _, a in agents])
        if future.shape[1] != cfg.t_pred:
            raise ShapeError(f"future length {future.shape[1]} != t_pred {cfg.t_pred}")
    window_of = np.array([wi for wi, _ in agents])
    nw = len(workers)
    ww = window_of[:nw]
    adj = ww[:, None] == ww[None, :]
    if math.isfinite(cfg.gat_radius):
        last = observed[:nw, -1]
        dist = np.linalg.norm(last[:, None] - last[None, :], axis=-1)
        adj &= dist <= cfg.gat_radius
    adj |= np.eye(nw, dtype=bool)
    mem_window = np.repeat(window_of, cfg.t_obs)
    mask = (window_of[:, None] == mem_window[None, :])[:, None, None, :]
    return PackedBatch(observed, future, [a.cls for _, a in agents], [a.id for _, a in agents],
                       window_of, nw, adj, mask)


def _input_tokens(observed, normalize):
    if not normalize:
        return observed
    tokens = np.zeros_like(observed)
    tokens[:, 1:] = np.diff(observed, axis=1)
    return tokens


@dataclass
class EncodedState:
    h_encoded: Tensor       # (A, t_obs, D), workers first then obstacles
    n_workers: int
    n_obstacles: int
    gat_alpha: Tensor | None = None


class TrajGATFormer:
    """Transformer encoder-decoder with a graph-attention social module.

    ``ModelConfig.variant`` selects worker-only or obstacle-aware behaviour.
    """

    def __init__(self, config=None, params=None, seed=0):
        self.config = config or ModelConfig()
        if params is None:
            params = init_params(self.config, np.random.default_rng(seed))
        self.params = params
        self._pe = positional_encoding(max(self.config.t_obs, self.config.t_pred),
                                       self.config.d_model)

    @property
    def variant(self):
        return self.config.variant

    def parameters(self):
        return list(self.params.values())

    def named_arrays(self):
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays):
        expected = parameter_shapes(self.config)
        problems = [k for k in expected if k not in arrays or tuple(arrays[k].shape) != expected[k]]
        problems += [k for k in arrays if k not in expected]
        if problems:
            raise ShapeError("checkpoint does not fit model config: " + ", ".join(sorted(problems)))
        for k, v in arrays.items():
            self.params[k] = Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)

    # blocks -----------------------------------------------------------------

    def encode(self, batch, training=False, rng=None):
        cfg, p = self.config, self.params
        drop = cfg.dropout
        tokens = _input_tokens(batch.observed, cfg.normalize)
        pe = self._pe[:cfg.t_obs]
        nw = batch.n_workers
        xi_w = timestamp(embed_positions(tokens[:nw], p["embed.worker.w_x"]), pe)
        enc_w = encoder_forward(dropout(xi_w, drop, training, rng), p, "enc.worker.",
                                cfg.worker_encoder_layers, cfg.n_heads, drop, training, rng)
        fused, alpha = social_fusion(enc_w, xi_w[:, -1, :], batch.gat_adjacency, p["gat.w"],
                                     p["gat.a"], cfg.gat_slope, return_alpha=True)
        enc_o = None
        n_obs = batch.n_agents - nw
        if cfg.with_obstacle and n_obs:
            xi_o = timestamp(embed_positions(tokens[nw:], p["embed.obstacle.w_x"]), pe)
            enc_o = encoder_forward(dropout(xi_o, drop, training, rng), p, "enc.obstacle.",
                                    cfg.obstacle_encoder_layers, cfg.n_heads, drop, training, rng)
        return EncodedState(fuse_memory(fused, enc_o), nw, n_obs, alpha)

    def decode(self, state, batch, tokens, training=False, rng=None):
        """Decode ``tokens`` ``(A, t, 2)`` to per-step offsets ``(A, t, 2)``."""
        cfg, p = self.config, self.params
        a, t = tokens.shape[0], tokens.shape[1]
        mem = state.h_encoded
        # each agent's own last encoded row tells the shared decoder whose
        # trajectory it is producing
        anchor = reshape(mem[:, -1, :], (a, 1, cfg.d_model))
        x = timestamp(embed_positions(tokens, p["embed.target.w_x"]), self._pe[:t]) + anchor
        x = dropout(x, cfg.dropout, training, rng)
        memory = reshape(mem, (1, a * cfg.t_obs, cfg.d_model))
        h = decoder_forward(x, memory, p, "dec.", cfg.decoder_layers, cfg.n_heads,
                            batch.memory_mask, cfg.dropout, training, rng)
        return matmul(h, p["out.w"]) + p["out.b"]

    def _start_tokens(self, batch):
        if self.config.normalize:
            return np.zeros((batch.n_agents, 1, 2))
        return batch.observed[:, -1:, :].copy()

    def _offsets_to_positions(self, batch, offsets):
        t = offsets.shape[1]
        cum = np.tril(np.ones((t, t)))
        return matmul(cum, offsets) + batch.observed[:, -1:, :]

    # public ---------------------------------------------------------------------

    def target_tokens(self, batch, future=None):
        """Ground-truth decoder inputs: the start token then the shifted targets."""
        future = batch.future if future is None else future
        if future is None:
            raise ShapeError("teacher forcing needs future tracks")
        if self.config.normalize:
            shifted = np.diff(np.concatenate([batch.observed[:, -1:], future], axis=1),
                              axis=1)[:, :-1]
            return np.concatenate([self._start_tokens(batch), shifted], axis=1)
        return np.concatenate([batch.observed[:, -1:], future[:, :-1]], axis=1)

    def teacher_forced(self, batch, training=False, rng=None, tokens=None):
        """Predicted positions ``(A, t_pred, 2)`` given ground-truth shifted targets.

        ``tokens`` overrides the decoder inputs (see ``target_tokens``).
        """
        if tokens is None:
            tokens = self.target_tokens(batch)
        state = self.encode(batch, training, rng)
        offsets = self.decode(state, batch, tokens, training, rng)
        return self._offsets_to_positions(batch, offsets)

    def autoregressive(self, batch, steps=None):
        """Roll the decoder forward feeding back its own predictions.

        The token buffer always has ``steps`` rows; rows not yet generated are
        zero and hidden by the causal mask.  Keeping the shape fixed means
        every step runs the same kernels as a teacher-forced pass.
        """
        steps = steps or self.config.t_pred
        if steps > len(self._pe):
            raise ConfigError(f"cannot roll out {steps} steps; the encoding covers {len(self._pe)}")
        state = self.encode(batch)
        tokens = np.zeros((batch.n_agents, steps, 2))
        tokens[:, :1] = self._start_tokens(batch)
        offsets = np.zeros((batch.n_agents, steps, 2))
        last = batch.observed[:, -1, :]
        for k in range(steps):
            out = self.decode(state, batch, tokens).data[:, k, :]
            offsets[:, k] = out
            last = last + out
            if k + 1 < steps:
                tokens[:, k + 1] = out if self.config.normalize else last
        return batch.observed[:, -1:, :] + np.cumsum(offsets, axis=1)

    def forecast(self, window, mode="autoregressive"):
        """Forecast one window; returns ``{(class, id): (t_pred, 2) array}``."""
        batch = pack_windows([window], self.config, require_future=(mode == "teacher_forced"))
        if mode == "teacher_forced":
            pred = self.teacher_forced(batch).data
        elif mode == "autoregressive":
            pred = self.autoregressive(batch)
        else:
            raise ConfigError(f"unknown forecast mode {mode!r}")
        return {(c, i): pred[k] for k, (c, i) in enumerate(zip(batch.classes, batch.ids))}


def TrajGATFormerObstacle(config=None, params=None, seed=0):
    """Obstacle-aware variant: same class, ``variant='with_obstacle'``."""
    cfg = config or ModelConfig(variant=WITH_OBSTACLE)
    if cfg.variant != WITH_OBSTACLE:
        cfg = ModelConfig(**{**asdict(cfg), "variant": WITH_OBSTACLE})
    return TrajGATFormer(cfg, params, seed)


def social_fusion(worker_enc, worker_xi_last, adjacency, w, a, slope=0.2, return_alpha=False):
    """Add each worker's GAT vector to every time step of its encoding."""
    n = worker_enc.shape[0]
    if worker_xi_last.shape[0] != n:
        raise ShapeError(f"{n} encoded workers but {worker_xi_last.shape[0]} GAT nodes")
    social, alpha = gat_layer(worker_xi_last, adjacency, w, a, slope, return_alpha=True)
    fused = worker_enc + reshape(social, (n, 1, worker_enc.shape[-1]))
    return (fused, alpha) if return_alpha else fused


__all__ = [
    "AgentClass", "EncodedState", "ModelConfig", "PackedBatch", "TrajGATFormer",
    "TrajGATFormerObstacle", "VARIANTS", "WITH_OBSTACLE", "WORKER_ONLY",
    "init_params", "pack_windows", "parameter_shapes", "social_fusion",
]
