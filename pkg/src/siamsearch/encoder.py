"""Two-layer tanh perceptron shared by both views, with hand-written backprop."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .synth import make_rng

CHECKPOINT_FORMAT = "siamsearch-encoder"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(eq=False)
class EncoderParams:
    W1: np.ndarray  # (d_hidden, d_in)
    b1: np.ndarray  # (d_hidden,)
    W2: np.ndarray  # (d_emb, d_hidden)
    b2: np.ndarray  # (d_emb,)
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        h, d_in = self.W1.shape
        e, h2 = self.W2.shape
        if self.b1.shape != (h,) or self.b2.shape != (e,) or h2 != h:
            raise DimensionMismatch("inconsistent encoder parameter shapes")
        for name in PARAM_NAMES:
            self.velocity.setdefault(name, np.zeros_like(getattr(self, name)))

    @property
    def d_in(self):
        return self.W1.shape[1]

    @property
    def d_hidden(self):
        return self.W1.shape[0]

    @property
    def d_emb(self):
        return self.W2.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return EncoderParams(
            *(getattr(self, n).copy() for n in PARAM_NAMES),
            velocity={k: v.copy() for k, v in self.velocity.items()},
        )


@dataclass
class ForwardCache:
    X: np.ndarray
    hidden: np.ndarray  # tanh activations, (B, d_hidden)


def init_params(d_in, d_hidden, d_emb, seed):
    """Gaussian fan-in initialisation (std 1/sqrt(fan_in)); zero biases."""
    if min(d_in, d_hidden, d_emb) < 1:
        raise ValueError("all layer sizes must be >= 1")
    rng = make_rng(seed, "init")
    W1 = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_hidden, d_in))
    W2 = rng.normal(0.0, 1.0 / np.sqrt(d_hidden), size=(d_emb, d_hidden))
    return EncoderParams(W1, np.zeros(d_hidden), W2, np.zeros(d_emb))


def forward(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise DimensionMismatch(f"expected (B, {params.d_in}) input, got {X.shape}")
    hidden = np.tanh(X @ params.W1.T + params.b1)
    F = hidden @ params.W2.T + params.b2
    return F, ForwardCache(X, hidden)


def backward(params, cache, dF):
    """Gradients of ``<dF, F>`` w.r.t. every parameter and the input."""
    dF = np.asarray(dF, dtype=np.float64)
    if dF.shape != (cache.X.shape[0], params.d_emb):
        raise DimensionMismatch(f"dF has shape {dF.shape}, forward output was "
                                f"{(cache.X.shape[0], params.d_emb)}")
    grads = {
        "W2": dF.T @ cache.hidden,
        "b2": dF.sum(axis=0),
    }
    dpre = (dF @ params.W2) * (1.0 - cache.hidden**2)
    grads["W1"] = dpre.T @ cache.X
    grads["b1"] = dpre.sum(axis=0)
    dX = dpre @ params.W1
    return grads, dX


def add_grads(a, b):
    if a is None:
        return b
    return {k: a[k] + b[k] for k in a}


def sgd_step(params, grads, lr, momentum=0.9, weight_decay=5e-4):
    """In-place SGD with heavy-ball momentum; weight decay on matrices only."""
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    for name in PARAM_NAMES:
        w = getattr(params, name)
        g = grads[name]
        if name.startswith("W") and weight_decay:
            g = g + weight_decay * w
        v = params.velocity[name]
        v *= momentum
        v += g
        w -= lr * v


def save_checkpoint(params, path, extra=None):
    """JSON dump; Python float repr round-trips float64 exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shapes": {"d_in": params.d_in, "d_hidden": params.d_hidden, "d_emb": params.d_emb},
        "params": {n: getattr(params, n).tolist() for n in PARAM_NAMES},
        "velocity": {n: params.velocity[n].tolist() for n in PARAM_NAMES},
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an encoder checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    arrays = {n: np.asarray(payload["params"][n], dtype=np.float64) for n in PARAM_NAMES}
    velocity = {n: np.asarray(payload["velocity"][n], dtype=np.float64) for n in PARAM_NAMES}
    return EncoderParams(**arrays, velocity=velocity)
