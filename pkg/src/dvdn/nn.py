"""Feed-forward Q-networks on flat parameter vectors, with exact backprop and Adam.

Parameter layout: for each layer in order, the weight matrix of shape
``(fan_in, fan_out)`` in row-major order followed by the bias of length
``fan_out``. Hidden layers use ReLU, the output layer is linear.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple = (64,)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")

    @cached_property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_dims)

    @cached_property
    def _slices(self):
        out, off = [], 0
        for fi, fo in self.layer_dims:
            out.append((off, off + fi * fo, off + fi * fo + fo, (fi, fo)))
            off += (fi + 1) * fo
        return out

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer into ``params`` (no copy)."""
        if params.shape != (self.n_params,):
            raise ValueError(f"expected parameter vector of length {self.n_params}, got {params.shape}")
        return [(params[a:b].reshape(shape), params[b:c]) for a, b, c, shape in self._slices]


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    params = np.zeros(spec.n_params)
    for W, _ in spec.unflatten(params):
        bound = 1.0 / np.sqrt(W.shape[0])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _as_batch(spec: NetworkSpec, obs) -> tuple[np.ndarray, bool]:
    x = obs if type(obs) is np.ndarray and obs.dtype == np.float64 else np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"observation dim {x.shape[-1]} does not match input_dim {spec.input_dim}")
    return x, single


def forward_cache(spec: NetworkSpec, params: np.ndarray, obs) -> list[np.ndarray]:
    """Layer activations ``[x, h1, ..., out]`` for a batch (2-D) of observations."""
    x, _ = _as_batch(spec, obs)
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected parameter vector of length {spec.n_params}, got {params.shape}")
    acts = [x]
    slices = spec._slices
    last = len(slices) - 1
    for k, (a, b, c, shape) in enumerate(slices):
        z = np.dot(x, params[a:b].reshape(shape))
        z += params[b:c]
        if k < last:
            np.maximum(z, 0.0, out=z)
        acts.append(z)
        x = z
    return acts


def forward(spec: NetworkSpec, params: np.ndarray, obs) -> np.ndarray:
    """Q-values for one observation (1-D) or a batch (2-D)."""
    _, single = _as_batch(spec, obs)
    out = forward_cache(spec, params, obs)[-1]
    return out[0] if single else out


def backward_cache(spec: NetworkSpec, params: np.ndarray, acts: list[np.ndarray], output_error) -> np.ndarray:
    """Gradient of ``sum(output * output_error)`` given cached activations.

    For a batch the per-sample gradients are summed.
    """
    delta = output_error if type(output_error) is np.ndarray else np.asarray(output_error, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != acts[-1].shape:
        raise ValueError(f"output_error shape {delta.shape} does not match output {acts[-1].shape}")
    grad = np.empty(spec.n_params)
    slices = spec._slices
    for k in range(len(slices) - 1, -1, -1):
        a, b, c, shape = slices[k]
        np.dot(acts[k].T, delta, out=grad[a:b].reshape(shape))
        np.sum(delta, axis=0, out=grad[b:c])
        if k > 0:
            delta = np.dot(delta, params[a:b].reshape(shape).T) * (acts[k] > 0.0)
    return grad


def backward(spec: NetworkSpec, params: np.ndarray, obs, output_error) -> np.ndarray:
    return backward_cache(spec, params, forward_cache(spec, params, obs), output_error)


def clip_grad_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if not max_norm:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1, self.beta2, self.eps, self.step_count)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam; mutates ``state`` and returns new parameters."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment lengths must match")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    denom = np.sqrt(state.v / (1.0 - state.beta2 ** t))
    denom += state.eps
    step = state.m / (1.0 - state.beta1 ** t)
    step /= denom
    step *= state.lr
    return params - step


_MAGIC = b"DVPV"


def dumps_params(spec: NetworkSpec, params: np.ndarray) -> bytes:
    """Binary checkpoint: magic, layer count, layer sizes (uint32 LE), float64 LE values."""
    dims = (spec.input_dim, *spec.hidden_dims, spec.output_dim)
    header = _MAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    return header + np.asarray(params, dtype="<f8").tobytes()


def loads_params(blob: bytes) -> tuple[NetworkSpec, np.ndarray]:
    if blob[:4] != _MAGIC:
        raise ValueError("not a parameter vector file")
    (n,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{n}I", blob, 8)
    spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
    params = np.frombuffer(blob, dtype="<f8", offset=8 + 4 * n).astype(np.float64)
    if params.shape != (spec.n_params,):
        raise ValueError("parameter payload length does not match header")
    return spec, params
