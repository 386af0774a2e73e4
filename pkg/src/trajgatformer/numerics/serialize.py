"""JSON checkpoint container for named float64 parameters.

Layout::

    {"format": "trajgatformer-checkpoint/1",
     "meta": {...},
     "params": {name: {"shape": [...], "data": [...]}},
     "adam": {"step": k, "m": {name: [...]}, "v": {name: [...]}}}

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.
"""
from __future__ import annotations

import json

import numpy as np

from .._io import atomic_write_text
from ..errors import ConfigError
from .optim import AdamState

FORMAT_TAG = "trajgatformer-checkpoint/1"


def _flat(a):
    return np.asarray(a, dtype=np.float64).ravel().tolist()


def dumps(named, meta=None, adam=None):
    doc = {
        "format": FORMAT_TAG,
        "meta": meta or {},
        "params": {k: {"shape": list(v.shape), "data": _flat(v)} for k, v in named.items()},
    }
    if adam is not None:
        names = list(named)
        doc["adam"] = {
            "step": adam.step,
            "beta1": adam.beta1, "beta2": adam.beta2, "epsilon": adam.epsilon,
            "m": {k: _flat(m) for k, m in zip(names, adam.m)},
            "v": {k: _flat(v) for k, v in zip(names, adam.v)},
        }
    return json.dumps(doc, sort_keys=True)


def save(path, named, meta=None, adam=None):
    return atomic_write_text(path, dumps(named, meta, adam))


def loads(text):
    """Return ``(named arrays, meta, AdamState or None)``."""
    doc = json.loads(text)
    if doc.get("format") != FORMAT_TAG:
        raise ConfigError(f"unknown checkpoint format {doc.get('format')!r}")
    named = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
             for k, v in doc["params"].items()}
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        adam = AdamState(
            step=a["step"], beta1=a["beta1"], beta2=a["beta2"], epsilon=a["epsilon"],
            m=[np.asarray(a["m"][k]).reshape(named[k].shape) for k in named],
            v=[np.asarray(a["v"][k]).reshape(named[k].shape) for k in named],
        )
    return named, doc["meta"], adam


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
