"""Small fully connected networks with hand-written reverse mode.

Parameters live in one flat float64 vector so that optimizers, checkpoints and
finite-difference checks all work on plain arrays.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_MAGIC = b"ICPSNET1"
FORMAT_VERSION = 1

OUTPUTS = ("identity", "softmax", "relu")


class MLP:
    """Tanh hidden layers, configurable output head.

    Weights of layer ``i`` are stored row-major as ``(in, out)`` followed by the
    ``out`` biases, layer after layer.
    """

    def __init__(self, sizes, output="identity", params=None, rng=None, out_scale=0.01):
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        if output not in OUTPUTS:
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.output = output
        self._slices = []
        offset = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((w, b, n_in, n_out))
        self.n_params = offset
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params.copy()
        else:
            self.params = self.init_params(rng or np.random.default_rng(0), out_scale)

    @property
    def activations(self) -> list[str]:
        return ["tanh"] * (len(self.sizes) - 2) + [self.output]

    def init_params(self, rng, out_scale=0.01) -> np.ndarray:
        p = np.zeros(self.n_params)
        last = len(self._slices) - 1
        for i, (w, b, n_in, n_out) in enumerate(self._slices):
            scale = out_scale if i == last else math.sqrt(2.0 / n_in)
            p[w] = rng.normal(0.0, scale, n_in * n_out)
        return p

    def layers(self, params):
        for w, b, n_in, n_out in self._slices:
            yield params[w].reshape(n_in, n_out), params[b]

    def forward(self, x, params=None):
        return self.forward_cache(x, params)[0]

    def forward_cache(self, x, params=None):
        p = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        n_layers = len(self._slices)
        for i, (W, b) in enumerate(self.layers(p)):
            z = acts[-1] @ W + b
            if i < n_layers - 1:
                h = np.tanh(z)
            elif self.output == "relu":
                h = np.maximum(z, 0.0)
            elif self.output == "softmax":
                e = np.exp(z - z.max(axis=1, keepdims=True))
                h = e / e.sum(axis=1, keepdims=True)
            else:
                h = z
            acts.append(h)
        out = acts[-1][0] if single else acts[-1]
        return out, (acts, single, p)

    def backward(self, cache, cotangent):
        """Vector-Jacobian product: returns (parameter gradient, input gradient)."""
        acts, single, p = cache
        g = np.asarray(cotangent, dtype=np.float64)
        g = g[None, :] if single else g
        grad = np.zeros(self.n_params)
        layers = list(self.layers(p))
        n_layers = len(layers)
        for i in range(n_layers - 1, -1, -1):
            out = acts[i + 1]
            if i < n_layers - 1:
                g = g * (1.0 - out * out)
            elif self.output == "relu":
                g = g * (out > 0.0)
            elif self.output == "softmax":
                g = out * (g - np.sum(g * out, axis=1, keepdims=True))
            w, b, _, _ = self._slices[i]
            grad[w] = (acts[i].T @ g).ravel()
            grad[b] = g.sum(axis=0)
            g = g @ layers[i][0].T
        return grad, (g[0] if single else g)

    def gradient(self, x, cotangent, params=None) -> np.ndarray:
        _, cache = self.forward_cache(x, params)
        return self.backward(cache, cotangent)[0]

    # -- checkpoint ----------------------------------------------------------
    def header(self) -> dict:
        return {"version": FORMAT_VERSION, "widths": list(self.sizes),
                "activations": self.activations, "n_params": self.n_params}

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        body = self.params.astype("<f8").tobytes()
        return _MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MLP":
        if blob[:8] != _MAGIC:
            raise ValueError("not a network checkpoint")
        (n,) = struct.unpack("<I", blob[8:12])
        head = json.loads(blob[12:12 + n])
        if head["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {head['version']}")
        params = np.frombuffer(blob[12 + n:], dtype="<f8").astype(np.float64)
        if params.size != head["n_params"]:
            raise ValueError("checkpoint parameter count mismatch")
        return cls(head["widths"], output=head["activations"][-1], params=params)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_bytes(Path(path).read_bytes())


def forward(net: MLP, x, params=None):
    return net.forward(x, params)


def gradient(net: MLP, x, cotangent, params=None):
    return net.gradient(x, cotangent, params)


# -- optimizers --------------------------------------------------------------

@dataclass
class SGD:
    lr: float

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params, grad):
        return params - self.lr * grad


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def sgd_update(params, grad, optimizer):
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient lengths differ")
    return optimizer.step(params, grad)


def clip_by_norm(grad, max_norm):
    n = float(np.linalg.norm(grad))
    return grad * (max_norm / n) if n > max_norm else grad


# -- policy heads ------------------------------------------------------------

def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True))


def categorical_log_prob(logits, actions):
    lp = log_softmax(logits)
    a = np.asarray(actions, dtype=np.int64)
    return np.take_along_axis(lp, a[..., None], axis=-1)[..., 0]


def categorical_log_prob_grad(logits, actions):
    """d log p(a) / d logits = onehot(a) - softmax(logits)."""
    probs = np.exp(log_softmax(logits))
    a = np.asarray(actions, dtype=np.int64)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, a[..., None], 1.0, axis=-1)
    return onehot - probs


def categorical_head(logits, rng=None, deterministic=False):
    """Sample (or take the mode of) categorical distributions over the last axis."""
    lp = log_softmax(logits)
    if deterministic:
        a = np.argmax(lp, axis=-1)
    else:
        cdf = np.cumsum(np.exp(lp), axis=-1)
        u = rng.random(lp.shape[:-1] + (1,))
        a = np.minimum(np.sum(cdf < u * cdf[..., -1:], axis=-1), lp.shape[-1] - 1)
    return a, np.take_along_axis(lp, np.asarray(a)[..., None], axis=-1)[..., 0]


def _log1m_tanh2(z):
    """log(1 - tanh(z)^2), stable for large |z|."""
    z = np.abs(z)
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


def squash(z, low, high):
    return low + (high - low) * 0.5 * (np.tanh(z) + 1.0)


def unsquash(y, low, high):
    t = 2.0 * (np.asarray(y, dtype=np.float64) - low) / (high - low) - 1.0
    return np.arctanh(np.clip(t, -1.0 + 1e-12, 1.0 - 1e-12))


def squashed_log_prob(mean, log_std, z, low, high):
    """Log density of y = squash(z), z ~ N(mean, exp(log_std)^2), elementwise."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    eps = (z - mean) / np.exp(log_std)
    gauss = -0.5 * eps * eps - log_std - _HALF_LOG_2PI
    return gauss - math.log(0.5 * (high - low)) - _log1m_tanh2(z)


def squashed_log_prob_grad(mean, log_std, z):
    """Gradients of squashed_log_prob w.r.t. (mean, log_std) for fixed z."""
    clipped = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    eps = (z - mean) / np.exp(clipped)
    d_mean = eps / np.exp(clipped)
    d_log_std = (eps * eps - 1.0) * ((log_std >= LOG_STD_MIN) & (log_std <= LOG_STD_MAX))
    return d_mean, d_log_std


def gaussian_head(mean, log_std, bounds, rng=None, deterministic=False):
    """Tanh-squashed Gaussian; returns (sample, log_prob, pre-squash z)."""
    low, high = bounds
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        z = mean.copy()
    else:
        z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return squash(z, low, high), squashed_log_prob(mean, log_std, z, low, high), z
