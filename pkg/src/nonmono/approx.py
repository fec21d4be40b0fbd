"""Minimal feed-forward nets with hand-derived gradients.

All learners share this: fully connected layers, relu or tanh hidden
activations, linear or bound-scaled tanh outputs, exact reverse-mode
gradients, and an Adam-style moment-based update. Inputs may be single
vectors (d,) or batches (n, d); gradients are summed over the batch so
the caller owns any averaging.

Parameters live in one flat buffer per net; the per-layer weight and
bias arrays are reshaped views into it, which keeps the optimizer and
target-net updates to a few whole-buffer vector operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


class ShapeMismatch(ValueError):
    """Input or upstream dimension does not match the network."""


class NonFiniteGradient(ValueError):
    """A gradient contained NaN or infinite entries."""


def _layer_views(data: np.ndarray, sizes: Sequence[int]):
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = data[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = data[offset:offset + fan_out]
        offset += fan_out
        weights.append(w)
        biases.append(b)
    return weights, biases


def _param_count(sizes: Sequence[int]) -> int:
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass
class NetParams:
    data: np.ndarray                   # flat parameter buffer
    weights: List[np.ndarray]          # views, each (fan_in, fan_out)
    biases: List[np.ndarray]           # views, each (fan_out,)
    hidden_act: str = "relu"           # 'relu' | 'tanh'
    out_act: str = "linear"            # 'linear' | 'tanh'
    out_scale: float = 1.0             # output bound for tanh heads

    @property
    def sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.data.dtype

    def copy(self) -> "NetParams":
        data = self.data.copy()
        weights, biases = _layer_views(data, self.sizes)
        return NetParams(data=data, weights=weights, biases=biases,
                         hidden_act=self.hidden_act, out_act=self.out_act,
                         out_scale=self.out_scale)

    def flat(self) -> np.ndarray:
        return self.data.copy()


def net_from_arrays(weights, biases, hidden_act="relu", out_act="linear",
                    out_scale=1.0, dtype=np.float64) -> NetParams:
    """Build a net from explicit per-layer arrays (copied into the buffer)."""
    sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    data = np.empty(_param_count(sizes), dtype=dtype)
    views_w, views_b = _layer_views(data, sizes)
    for vw, w in zip(views_w, weights):
        if vw.shape != np.shape(w):
            raise ShapeMismatch(f"weight shape {np.shape(w)} != {vw.shape}")
        vw[:] = w
    for vb, b in zip(views_b, biases):
        if vb.shape != np.shape(b):
            raise ShapeMismatch(f"bias shape {np.shape(b)} != {vb.shape}")
        vb[:] = b
    return NetParams(data=data, weights=views_w, biases=views_b,
                     hidden_act=hidden_act, out_act=out_act,
                     out_scale=out_scale)


@dataclass
class NetGrads:
    data: np.ndarray
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def scale(self, factor: float) -> "NetGrads":
        out = _empty_grads_like(self)
        np.multiply(self.data, factor, out=out.data)
        return out

    def add(self, other: "NetGrads") -> "NetGrads":
        out = _empty_grads_like(self)
        np.add(self.data, other.data, out=out.data)
        return out


def _empty_grads(sizes: Sequence[int], dtype=np.float64) -> NetGrads:
    data = np.empty(_param_count(sizes), dtype=dtype)
    weights, biases = _layer_views(data, sizes)
    return NetGrads(data=data, weights=weights, biases=biases)


def _empty_grads_like(g: NetGrads) -> NetGrads:
    sizes = [g.weights[0].shape[0]] + [w.shape[1] for w in g.weights]
    return _empty_grads(sizes, dtype=g.data.dtype)


def init_net(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_act: str = "relu",
    out_act: str = "linear",
    out_scale: float = 1.0,
    dtype=np.float64,
) -> NetParams:
    """He-style initialization; final layer small-uniform for near-zero output."""
    data = np.zeros(_param_count(sizes), dtype=dtype)
    weights, biases = _layer_views(data, sizes)
    n_layers = len(sizes) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        fan_in = sizes[i]
        if i == n_layers - 1:
            w[:] = rng.uniform(-3e-3, 3e-3, size=w.shape)
        else:
            w[:] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=w.shape)
            # Small random bias keeps hidden units off the relu kink.
            b[:] = rng.uniform(-0.1, 0.1, size=b.shape)
    return NetParams(data=data, weights=weights, biases=biases,
                     hidden_act=hidden_act, out_act=out_act,
                     out_scale=out_scale)


def _as_batch(x: np.ndarray, dim: int, what: str,
              dtype=np.float64) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeMismatch(f"{what} has shape {x.shape}, expected (*, {dim})")
    return x, single


def _forward_acts(p: NetParams, x: np.ndarray) -> List[np.ndarray]:
    """Activations per layer, input included; output is acts[-1]."""
    acts = [x]
    h = x
    last = len(p.weights) - 1
    hidden_tanh = p.hidden_act == "tanh"
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w
        z += b
        if i < last:
            h = np.tanh(z) if hidden_tanh else np.maximum(z, 0.0, out=z)
        elif p.out_act == "tanh":
            h = np.tanh(z)
            h *= p.out_scale
        else:
            h = z
        acts.append(h)
    return acts


def forward(p: NetParams, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; (d,) -> (out,) or (n, d) -> (n, out)."""
    xb, single = _as_batch(x, p.weights[0].shape[0], "input", p.dtype)
    out = _forward_acts(p, xb)[-1]
    return out[0] if single else out


def forward_cached(p: NetParams, x: np.ndarray):
    """Batch forward that also returns the cache backward_cached needs."""
    acts = _forward_acts(p, np.asarray(x, dtype=p.dtype))
    return acts[-1], acts


def backward_cached(p: NetParams, acts, upstream: np.ndarray):
    """Reverse pass reusing a forward_cached cache; batch only."""
    return _backprop(p, acts, np.asarray(upstream, dtype=p.dtype))


def backward(p: NetParams, x: np.ndarray, upstream: np.ndarray):
    """Exact reverse-mode gradients of forward.

    Returns (NetGrads, input_grad). upstream is dLoss/doutput with the
    same leading shape as the input; batch gradients are summed.
    """
    xb, single = _as_batch(x, p.weights[0].shape[0], "input", p.dtype)
    ub, u_single = _as_batch(upstream, p.weights[-1].shape[1], "upstream",
                             p.dtype)
    if single != u_single or xb.shape[0] != ub.shape[0]:
        raise ShapeMismatch("input and upstream batch shapes disagree")
    acts = _forward_acts(p, xb)
    grads, delta = _backprop(p, acts, ub)
    input_grad = delta[0] if single else delta
    return grads, input_grad


def _backprop(p: NetParams, acts, ub: np.ndarray):
    last = len(p.weights) - 1
    grads = _empty_grads(p.sizes, dtype=p.dtype)
    hidden_tanh = p.hidden_act == "tanh"
    if p.out_act == "tanh":
        t = acts[-1] / p.out_scale          # tanh(z) recovered from output
        delta = ub * (p.out_scale * (1.0 - t * t))
    else:
        delta = np.asarray(ub, dtype=p.dtype)
    for i in range(last, -1, -1):
        np.matmul(acts[i].T, delta, out=grads.weights[i])
        np.sum(delta, axis=0, out=grads.biases[i])
        delta = delta @ p.weights[i].T
        if i > 0:
            a = acts[i]
            if hidden_tanh:
                delta *= 1.0 - a * a
            else:
                delta *= a > 0.0
    return grads, delta


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step_size: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optim(p: NetParams, step_size: float) -> OptimState:
    return OptimState(m=np.zeros_like(p.data), v=np.zeros_like(p.data),
                      step_size=step_size)


def opt_step(p: NetParams, o: OptimState, grad: NetGrads):
    """One Adam update in place; returns (p, o)."""
    g = grad.data
    if not np.isfinite(g).all():
        raise NonFiniteGradient("gradient has non-finite entries")
    o.t += 1
    bc1 = 1.0 - o.beta1 ** o.t
    bc2 = 1.0 - o.beta2 ** o.t
    o.m *= o.beta1
    o.m += (1.0 - o.beta1) * g
    o.v *= o.beta2
    o.v += (1.0 - o.beta2) * (g * g)
    denom = np.sqrt(o.v / bc2)
    denom += o.eps
    p.data -= (o.step_size / bc1) * o.m / denom
    return p, o


def soft_update(target: NetParams, live: NetParams, tau: float) -> None:
    """target <- tau*live + (1-tau)*target, elementwise and exact."""
    target.data *= 1.0 - tau
    target.data += tau * live.data


# ----------------------------------------------------------------------
# Checkpoints: text, shapes first then row-major values.
# ----------------------------------------------------------------------

def save_net(p: NetParams, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"net {p.hidden_act} {p.out_act} {p.out_scale!r} {len(p.weights)}\n")
        for w, b in zip(p.weights, p.biases):
            fh.write(f"layer {w.shape[0]} {w.shape[1]}\n")
            fh.write(" ".join(repr(float(v)) for v in w.ravel()) + "\n")
            fh.write(" ".join(repr(float(v)) for v in b.ravel()) + "\n")


def load_net(path: str) -> NetParams:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != "net":
            raise ValueError(f"{path}: not a checkpoint file")
        hidden_act, out_act = header[1], header[2]
        out_scale = float(header[3])
        n_layers = int(header[4])
        weights, biases = [], []
        for _ in range(n_layers):
            tag, fan_in, fan_out = fh.readline().split()
            if tag != "layer":
                raise ValueError(f"{path}: malformed layer header")
            fan_in, fan_out = int(fan_in), int(fan_out)
            w = np.fromiter(map(float, fh.readline().split()),
                            dtype=float).reshape(fan_in, fan_out)
            b = np.fromiter(map(float, fh.readline().split()), dtype=float)
            if b.shape != (fan_out,):
                raise ValueError(f"{path}: bias length mismatch")
            weights.append(w)
            biases.append(b)
    return net_from_arrays(weights, biases, hidden_act=hidden_act,
                           out_act=out_act, out_scale=out_scale)
