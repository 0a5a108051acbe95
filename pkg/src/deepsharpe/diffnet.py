"""Single-layer LSTM with a softmax head, hand-differentiated.

Everything is float64 numpy. Gate blocks are stored side by side in the
order input, forget, output, cell candidate (sigmoid gates first), so ``W_x`` is ``(2n, 4H)``,
``W_h`` is ``(H, 4H)`` and ``b`` is ``(4H,)``. The head maps the final hidden
state to ``n`` logits. Each window is processed from a zero initial state.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, IOFailure, TrainingError

PARAM_ORDER = ("W_x", "W_h", "b", "W_out", "b_out")
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @property
    def n_assets(self) -> int:
        return self.W_out.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.W_x.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in PARAM_ORDER]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ContractError(f"flat vector has {vec.size} entries, expected {self.size}")
        out, pos = {}, 0
        for k, a in zip(PARAM_ORDER, self.arrays()):
            out[k] = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return ModelParams(**out)

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))


def param_count(n_assets: int, hidden: int) -> int:
    return 4 * (2 * n_assets * hidden + hidden * hidden + hidden) + hidden * n_assets + n_assets


def init_params(n_assets: int, hidden: int, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget bias 1, other biases 0."""
    if hidden < 1:
        raise ConfigError(f"hidden width must be >= 1, got {hidden}")
    if n_assets < 1:
        raise ConfigError(f"n_assets must be >= 1, got {n_assets}")
    rng = np.random.default_rng(seed)
    d, H = 2 * n_assets, hidden

    def u(fan_in, shape):
        s = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    W_x = u(d, (d, 4 * H))
    W_h = u(H, (H, 4 * H))
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    W_out = u(H, (H, n_assets))
    b_out = np.zeros(n_assets)
    return ModelParams(W_x, W_h, b, W_out, b_out)


@dataclass
class ForwardTrace:
    """Activations from one batched forward pass; ``B`` samples, ``k`` steps."""

    inputs: np.ndarray   # (B, k, D)
    gates: np.ndarray    # (B, k, 4H) post-nonlinearity i, f, o, g
    cells: np.ndarray    # (B, k+1, H); index 0 is the zero initial state
    hidden: np.ndarray   # (B, k+1, H)
    tanh_cells: np.ndarray  # (B, k, H)
    raw: np.ndarray      # (B, n) head logits
    weights: np.ndarray  # (B, n) softmax outputs

    def __len__(self):
        return self.inputs.shape[0]

    @staticmethod
    def concat(traces: Sequence["ForwardTrace"]) -> "ForwardTrace":
        names = ("inputs", "gates", "cells", "hidden", "tanh_cells", "raw", "weights")
        return ForwardTrace(*(np.concatenate([getattr(t, k) for t in traces]) for k in names))


def _sigmoid(z):
    # tanh form: no overflow for large |z|
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: ModelParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run ``(B, k, 2n)`` windows through the network; returns ``(B, n)`` weights."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != params.n_inputs:
        raise ContractError(
            f"window batch shape {X.shape} incompatible with input width {params.n_inputs}"
        )
    B, k, _ = X.shape
    H = params.hidden
    gates = np.empty((B, k, 4 * H))
    cells = np.zeros((B, k + 1, H))
    hid = np.zeros((B, k + 1, H))
    tcs = np.empty((B, k, H))
    # input projection for all steps at once
    xz = X @ params.W_x + params.b
    for s in range(k):
        z = xz[:, s] + hid[:, s] @ params.W_h
        a = gates[:, s]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        cells[:, s + 1] = f * cells[:, s] + i * g
        tcs[:, s] = np.tanh(cells[:, s + 1])
        hid[:, s + 1] = o * tcs[:, s]
    raw = hid[:, k] @ params.W_out + params.b_out
    w = softmax(raw)
    return w, ForwardTrace(X, gates, cells, hid, tcs, raw, w)


def forward(params: ModelParams, window) -> tuple[np.ndarray, ForwardTrace]:
    """Weights for a single window (a FeatureWindow or a ``(k, 2n)`` array)."""
    m = getattr(window, "matrix", window)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"window must be 2-D, got shape {m.shape}")
    w, trace = forward_batch(params, m[None])
    return w[0], trace


def backward(
    params: ModelParams,
    traces,
    upstream_grads,
    return_inputs: bool = False,
):
    """Gradient of ``sum_b <upstream_b, w_b>`` w.r.t. the parameters.

    ``traces`` is a ForwardTrace or a list of them aligned one-to-one with the
    rows of ``upstream_grads``. With ``return_inputs`` the gradient w.r.t.
    each input window is returned as well.
    """
    if isinstance(traces, ForwardTrace):
        trace = traces
    else:
        traces = list(traces)
        if not traces:
            raise ContractError("no forward traces supplied")
        trace = ForwardTrace.concat(traces)
    G = np.asarray(upstream_grads, dtype=np.float64)
    if G.ndim == 1:
        G = G[None]
    if G.shape != trace.weights.shape:
        raise ContractError(
            f"upstream gradients {G.shape} do not match traced weights {trace.weights.shape}"
        )

    H = params.hidden
    B, k, _ = trace.inputs.shape
    w = trace.weights
    draw = w * (G - np.sum(G * w, axis=1, keepdims=True))

    grad = params.zeros_like()
    grad.W_out = trace.hidden[:, k].T @ draw
    grad.b_out = draw.sum(axis=0)
    dh = draw @ params.W_out.T
    dc = np.zeros((B, H))
    dz_all = np.empty((B, k, 4 * H))
    for s in range(k - 1, -1, -1):
        a = trace.gates[:, s]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = trace.tanh_cells[:, s]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, s]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * trace.cells[:, s] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = dz @ params.W_h.T
    D = trace.inputs.shape[2]
    grad.W_x = trace.inputs.reshape(B * k, D).T @ dz_all.reshape(B * k, 4 * H)
    grad.W_h = trace.hidden[:, :k].reshape(B * k, H).T @ dz_all.reshape(B * k, 4 * H)
    grad.b = dz_all.sum(axis=(0, 1))
    if return_inputs:
        return grad, dz_all @ params.W_x.T
    return grad


def clip_by_global_norm(grad: ModelParams, max_norm: float) -> tuple[ModelParams, float]:
    norm = math.sqrt(sum(float(np.sum(a * a)) for a in grad.arrays()))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grad, norm
    scale = max_norm / norm
    return ModelParams(*(a * scale for a in grad.arrays())), norm


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, **hyper) -> "AdamState":
        return cls(np.zeros(params.size), np.zeros(params.size), 0, **hyper)

    def copy(self) -> "AdamState":
        return replace(self, m=self.m.copy(), v=self.v.copy())


def adam_step(params: ModelParams, grad: ModelParams, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update in the *ascent* direction."""
    g = grad.flat()
    if g.shape != state.m.shape:
        raise ContractError("gradient and optimizer state have different sizes")
    if not np.all(np.isfinite(g)):
        bad = int(np.sum(~np.isfinite(g)))
        raise TrainingError(f"non-finite gradient ({bad} entries) at Adam step {state.step + 1}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    theta = params.flat() + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_flat(theta), replace(state, m=m, v=v, step=t)


def save_checkpoint(path, params: ModelParams, adam: AdamState | None = None, meta: dict | None = None) -> None:
    """Write an ``.npz`` container; arrays round-trip bit-exactly."""
    payload = {k: a for k, a in zip(PARAM_ORDER, params.arrays())}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "n_assets": params.n_assets,
        "hidden": params.hidden,
        "param_order": list(PARAM_ORDER),
        "meta": meta or {},
    }
    if adam is not None:
        payload["adam_m"] = adam.m
        payload["adam_v"] = adam.v
        header["adam"] = {
            "step": adam.step,
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        }
    payload["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, AdamState | None, dict]:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header.get("format_version") != CHECKPOINT_VERSION:
                raise IOFailure(f"{path}: unsupported checkpoint version {header.get('format_version')}")
            params = ModelParams(*(z[k].astype(np.float64) for k in PARAM_ORDER))
            adam = None
            if "adam" in header:
                adam = AdamState(z["adam_m"], z["adam_v"], **header["adam"])
    except (OSError, KeyError, ValueError) as exc:
        raise IOFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return params, adam, header.get("meta", {})
