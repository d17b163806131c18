"""Classifiers over temporal filter outputs.

Every model exposes the same small surface used by the trainer:

* ``params()``: dict of trainable arrays (mutated in place by the optimizer)
* ``forward(x) -> (probs, cache)``
* ``backward(cache, dlogits) -> GradientBundle``: one entry per trainable
  array plus ``"x"`` for the input sequence

Filter outputs are concatenated in (filter m, tap i, feature d) order, i.e. a
row-major flatten of the (M, N, D) read result.
"""
from __future__ import annotations

import copy
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .filterbank import (
    FeatureSequence,
    FilterParams,
    absolute_params,
    backward_filters,
    forward_filters,
    params_array,
)
from .pooling import POOL_MODES, global_pool, global_pool_backward, pyramid_params

GradientBundle = Dict[str, np.ndarray]

MODEL_KINDS = ("max", "sum", "mean", "pyramid", "static", "lstm")
CHECKPOINT_FORMAT = "tafilter.checkpoint"
CHECKPOINT_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _as_data(x) -> np.ndarray:
    if isinstance(x, FeatureSequence):
        return x.data
    data = np.ascontiguousarray(x, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"expected a T x D sequence, got shape {data.shape}")
    return data


def _gaussian(rng, shape, fan_in):
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)


@dataclass
class MlpHead:
    """relu hidden layer followed by class scores."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, in_dim: int, hidden: int, classes: int, rng) -> "MlpHead":
        return cls(
            W1=_gaussian(rng, (hidden, in_dim), in_dim),
            b1=np.zeros(hidden),
            W2=_gaussian(rng, (classes, hidden), hidden),
            b2=np.zeros(classes),
        )

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def classes(self) -> int:
        return self.W2.shape[0]

    def arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def forward(self, v):
        if v.shape != (self.in_dim,):
            raise ValueError(f"head expects a {self.in_dim}-vector, got shape {v.shape}")
        pre = self.W1 @ v + self.b1
        h = np.maximum(pre, 0.0)
        logits = self.W2 @ h + self.b2
        return logits, (v, pre, h)

    def backward(self, cache, dlogits):
        v, pre, h = cache
        dh = self.W2.T @ dlogits
        dpre = dh * (pre > 0)
        grads = {
            "W1": np.outer(dpre, v),
            "b1": dpre,
            "W2": np.outer(dlogits, h),
            "b2": np.array(dlogits, dtype=np.float64),
        }
        return grads, self.W1.T @ dpre


@dataclass
class ForwardCache:
    data: np.ndarray
    logits: np.ndarray
    head: Any
    steps: list = field(default_factory=list)
    # per-iteration filter params (M, 3) with absolute log sigma^2
    trace: list = field(default_factory=list)


class _Model:
    kind: str
    head: MlpHead

    def params(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def arrays(self) -> Dict[str, np.ndarray]:
        return self.params()

    def dims(self) -> Dict[str, Any]:
        raise NotImplementedError

    @property
    def classes(self) -> int:
        return self.head.classes

    def predict(self, x) -> int:
        probs, _ = self.forward(x)
        return int(np.argmax(probs))

    def copy(self):
        return copy.deepcopy(self)

    def _finish(self, data, v, steps, trace=()):
        logits, hc = self.head.forward(v)
        return softmax(logits), ForwardCache(data, logits, hc, steps, list(trace))


class PooledModel(_Model):
    """Global max/sum/mean pooling followed by the MLP head."""

    def __init__(self, mode: str, head: MlpHead):
        if mode not in POOL_MODES:
            raise ValueError(f"unknown pooling mode {mode!r}")
        self.kind = mode
        self.mode = mode
        self.head = head

    def params(self):
        return self.head.arrays()

    def dims(self):
        return {"D": self.head.in_dim, "hidden": self.head.hidden, "classes": self.classes}

    def forward(self, x):
        data = _as_data(x)
        if data.shape[1] != self.head.in_dim:
            raise ValueError(f"model expects D={self.head.in_dim}, input has D={data.shape[1]}")
        return self._finish(data, global_pool(data, self.mode), [])

    def backward(self, cache, dlogits) -> GradientBundle:
        grads, dv = self.head.backward(cache.head, dlogits)
        grads["x"] = global_pool_backward(cache.data, self.mode, dv)
        return grads


class StaticModel(_Model):
    """M filters shared by all sequences, concatenated into the MLP head.

    With ``learn_filters=False`` the filters are fixed (the pyramid baseline)
    and only the head is trained.
    """

    def __init__(self, filters, N: int, head: MlpHead, learn_filters=True,
                 relative_width=False, kind="static", pyramid_level=None):
        if isinstance(filters, (list, tuple)) and filters and isinstance(filters[0], FilterParams):
            filters = params_array(filters)
        self.filters = np.array(filters, dtype=np.float64).reshape(-1, 3)
        if len(self.filters) < 1:
            raise ValueError("a static model needs at least one filter")
        self.N = int(N)
        self.head = head
        self.learn_filters = bool(learn_filters)
        self.relative_width = bool(relative_width)
        self.kind = kind
        self.pyramid_level = pyramid_level

    @classmethod
    def pyramid(cls, level: int, N: int, head: MlpHead) -> "StaticModel":
        return cls(params_array(pyramid_params(level, N)), N, head, learn_filters=False,
                   relative_width=True, kind="pyramid", pyramid_level=level)

    @property
    def M(self) -> int:
        return self.filters.shape[0]

    @property
    def D(self) -> int:
        return self.head.in_dim // (self.M * self.N)

    def filter_params(self) -> list:
        return [FilterParams(*row, relative_width=self.relative_width) for row in self.filters]

    def params(self):
        out = {"filters": self.filters} if self.learn_filters else {}
        out.update(self.head.arrays())
        return out

    def arrays(self):
        return {"filters": self.filters, **self.head.arrays()}

    def dims(self):
        return {"M": self.M, "N": self.N, "D": self.D, "hidden": self.head.hidden,
                "classes": self.classes, "learn_filters": self.learn_filters,
                "relative_width": self.relative_width, "pyramid_level": self.pyramid_level}

    def forward(self, x):
        data = _as_data(x)
        if data.shape[1] * self.M * self.N != self.head.in_dim:
            raise ValueError(f"model expects D={self.D}, input has D={data.shape[1]}")
        p = absolute_params(self.filters, data.shape[0], self.relative_width)
        weights, mu, rowsum, out = forward_filters(p, self.N, data)
        steps = [(p, weights, mu, rowsum)]
        return self._finish(data, out.reshape(-1), steps, [p])

    def backward(self, cache, dlogits) -> GradientBundle:
        grads, dv = self.head.backward(cache.head, dlogits)
        p, weights, mu, rowsum = cache.steps[0]
        dp, dx = backward_filters(p, weights, mu, rowsum, cache.data,
                                  dv.reshape(self.M, self.N, -1))
        if self.learn_filters:
            grads["filters"] = dp
        grads["x"] = dx
        return grads


class LstmModel(_Model):
    """Filters re-placed each iteration from the previous LSTM hidden state.

    Iteration s reads the sequence with params ``Wp @ h_{s-1} + bp`` (one
    triple per filter, h_0 = 0); the concatenated read ``v_s`` is the LSTM
    input. After S iterations ``v_S`` goes to the MLP head. Gate order in
    ``Wx``/``Wh``/``bl`` is (input, forget, output, candidate).
    """

    kind = "lstm"

    def __init__(self, Wx, Wh, bl, Wp, bp, head: MlpHead, M: int, N: int, S: int):
        self.Wx = np.asarray(Wx, dtype=np.float64)
        self.Wh = np.asarray(Wh, dtype=np.float64)
        self.bl = np.asarray(bl, dtype=np.float64)
        self.Wp = np.asarray(Wp, dtype=np.float64)
        self.bp = np.asarray(bp, dtype=np.float64)
        self.head = head
        self.M, self.N, self.S = int(M), int(N), int(S)
        if self.S < 1:
            raise ValueError("LSTM model needs S >= 1 iterations")
        H = self.Wh.shape[1]
        if self.Wx.shape[0] != 4 * H or self.Wh.shape != (4 * H, H) or self.bl.shape != (4 * H,):
            raise ValueError("inconsistent LSTM cell shapes")
        if self.Wp.shape != (3 * self.M, H) or self.bp.shape != (3 * self.M,):
            raise ValueError("parameter head must map the hidden state to 3*M values")
        if self.Wx.shape[1] != head.in_dim:
            raise ValueError("LSTM input width must equal the classifier input width")

    @classmethod
    def init(cls, M, N, D, lstm_hidden, hidden, classes, S, rng) -> "LstmModel":
        in_dim = M * N * D
        H = lstm_hidden
        Wx = _gaussian(rng, (4 * H, in_dim), in_dim)
        Wh = _gaussian(rng, (4 * H, H), H)
        bl = np.zeros(4 * H)
        bl[H:2 * H] = 1.0
        head = MlpHead.init(in_dim, hidden, classes, rng)
        # zero map + zero bias: centred, full-span filters with sigma^2 = 1 on iteration 1
        return cls(Wx, Wh, bl, np.zeros((3 * M, H)), np.zeros(3 * M), head, M, N, S)

    @property
    def lstm_hidden(self) -> int:
        return self.Wh.shape[1]

    @property
    def D(self) -> int:
        return self.head.in_dim // (self.M * self.N)

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "bl": self.bl, "Wp": self.Wp, "bp": self.bp,
                **self.head.arrays()}

    def dims(self):
        return {"M": self.M, "N": self.N, "D": self.D, "S": self.S,
                "lstm_hidden": self.lstm_hidden, "hidden": self.head.hidden,
                "classes": self.classes}

    def _cell(self, v, h, c):
        H = self.lstm_hidden
        z = self.Wx @ v + self.Wh @ h + self.bl
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H:2 * H])
        o = _sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        return o * tc, c_new, (i, f, o, g, tc)

    def forward(self, x):
        data = _as_data(x)
        if data.shape[1] * self.M * self.N != self.head.in_dim:
            raise ValueError(f"model expects D={self.D}, input has D={data.shape[1]}")
        H = self.lstm_hidden
        h = np.zeros(H)
        c = np.zeros(H)
        steps = []
        trace = []
        for s in range(self.S):
            p = np.ascontiguousarray((self.Wp @ h + self.bp).reshape(self.M, 3))
            weights, mu, rowsum, out = forward_filters(p, self.N, data)
            v = out.reshape(-1)
            trace.append(p)
            step = {"p": p, "weights": weights, "mu": mu, "rowsum": rowsum, "h_prev": h, "c_prev": c}
            # h_S has no consumer, so the cell is skipped on the final iteration
            if s < self.S - 1:
                h, c, gates = self._cell(v, h, c)
                step.update(v=v, gates=gates, c=c)
            steps.append(step)
        return self._finish(data, v, steps, trace)

    def backward(self, cache, dlogits) -> GradientBundle:
        H = self.lstm_hidden
        grads, dv = self.head.backward(cache.head, dlogits)
        dWx = np.zeros_like(self.Wx)
        dWh = np.zeros_like(self.Wh)
        dbl = np.zeros_like(self.bl)
        dWp = np.zeros_like(self.Wp)
        dbp = np.zeros_like(self.bp)
        dx = np.zeros_like(cache.data)
        dh = np.zeros(H)  # gradient w.r.t. the hidden state this step produced
        dc = np.zeros(H)
        for s in range(self.S - 1, -1, -1):
            step = cache.steps[s]
            if s < self.S - 1:
                i, f, o, g, tc = step["gates"]
                dct = dc + dh * o * (1.0 - tc * tc)
                dz = np.concatenate([
                    dct * g * i * (1.0 - i),
                    dct * step["c_prev"] * f * (1.0 - f),
                    dh * tc * o * (1.0 - o),
                    dct * i * (1.0 - g * g),
                ])
                dWx += np.outer(dz, step["v"])
                dWh += np.outer(dz, step["h_prev"])
                dbl += dz
                dv = self.Wx.T @ dz
                dh_prev = self.Wh.T @ dz
                dc = dct * f
            else:
                dh_prev = np.zeros(H)
            dp, dxs = backward_filters(step["p"], step["weights"], step["mu"], step["rowsum"],
                                       cache.data, dv.reshape(self.M, self.N, -1))
            dx += dxs
            dp = dp.reshape(-1)
            dWp += np.outer(dp, step["h_prev"])
            dbp += dp
            dh = dh_prev + self.Wp.T @ dp
        grads.update(Wx=dWx, Wh=dWh, bl=dbl, Wp=dWp, bp=dbp, x=dx)
        return grads

    def filter_trace(self, x) -> list:
        """Per-iteration list of M FilterParams for sequence ``x``."""
        _, cache = self.forward(x)
        return [[FilterParams(*row) for row in p] for p in cache.trace]


class OneVsAll:
    """C binary models; predicts the class whose model is most confident."""

    kind = "one_vs_all"

    def __init__(self, models):
        self.models = list(models)
        if len(self.models) < 2:
            raise ValueError("one-vs-all needs at least 2 member models")

    @property
    def classes(self) -> int:
        return len(self.models)

    @property
    def base_kind(self) -> str:
        return self.models[0].kind

    def positive_scores(self, x) -> np.ndarray:
        return np.array([m.forward(x)[0][1] for m in self.models])

    def predict(self, x) -> int:
        # np.argmax breaks ties toward the lowest class index
        return int(np.argmax(self.positive_scores(x)))


@dataclass
class ModelSpec:
    """Architecture choices; ``None`` fields take per-kind defaults."""

    kind: str = "static"
    filters: Optional[int] = None
    taps: Optional[int] = None
    pyramid_level: int = 4
    hidden: int = 256
    lstm_hidden: int = 128
    steps: int = 4
    g_init_std: float = 0.4
    log_sigma_sq_init: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.filters is None:
            self.filters = 3 if self.kind == "lstm" else 15
        if self.taps is None:
            self.taps = 5 if self.kind == "lstm" else 1
        if self.filters < 1 or self.taps < 1 or self.pyramid_level < 1 or self.steps < 1:
            raise ValueError("filters, taps, pyramid level and steps must all be >= 1")


def build_model(spec: ModelSpec, D: int, classes: int, rng):
    """Freshly initialized model for ``spec`` on D-dim features."""
    if spec.kind in POOL_MODES:
        return PooledModel(spec.kind, MlpHead.init(D, spec.hidden, classes, rng))
    if spec.kind == "pyramid":
        n_filters = 2 ** spec.pyramid_level - 1
        head = MlpHead.init(n_filters * spec.taps * D, spec.hidden, classes, rng)
        return StaticModel.pyramid(spec.pyramid_level, spec.taps, head)
    if spec.kind == "static":
        M = spec.filters
        filters = np.zeros((M, 3))
        filters[:, 0] = rng.normal(0.0, spec.g_init_std, size=M)
        filters[:, 2] = spec.log_sigma_sq_init
        head = MlpHead.init(M * spec.taps * D, spec.hidden, classes, rng)
        return StaticModel(filters, spec.taps, head)
    return LstmModel.init(spec.filters, spec.taps, D, spec.lstm_hidden, spec.hidden, classes,
                          spec.steps, rng)


# -- checkpoints -------------------------------------------------------------

def _encode(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def _decode(obj):
    return np.array(obj["values"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(model) -> dict:
    if isinstance(model, OneVsAll):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": OneVsAll.kind,
            "members": [checkpoint_dict(m) for m in model.models],
        }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "dims": model.dims(),
        "arrays": {name: _encode(a) for name, a in model.arrays().items()},
    }


def model_from_dict(doc: dict):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a tafilter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    kind = doc["kind"]
    if kind == OneVsAll.kind:
        return OneVsAll([model_from_dict(m) for m in doc["members"]])
    dims = doc["dims"]
    a = {name: _decode(v) for name, v in doc["arrays"].items()}
    head = MlpHead(a["W1"], a["b1"], a["W2"], a["b2"])
    if kind in POOL_MODES:
        return PooledModel(kind, head)
    if kind in ("static", "pyramid"):
        return StaticModel(a["filters"], dims["N"], head, learn_filters=dims["learn_filters"],
                           relative_width=dims["relative_width"], kind=kind,
                           pyramid_level=dims.get("pyramid_level"))
    if kind == "lstm":
        return LstmModel(a["Wx"], a["Wh"], a["bl"], a["Wp"], a["bp"], head,
                         dims["M"], dims["N"], dims["S"])
    raise ValueError(f"unknown model kind {kind!r} in checkpoint")


def save_checkpoint(model, path, extra: Optional[dict] = None) -> None:
    """Write a JSON checkpoint atomically.

    Floats are written with ``repr`` so every stored value reloads bit-exactly.
    """
    doc = checkpoint_dict(model)
    if extra:
        doc["extra"] = extra
    text = json.dumps(doc, allow_nan=False)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)
