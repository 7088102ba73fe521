"""Minimal feedforward networks with hand-derived backprop, Adam, and running
input normalization. Hidden layers use ELU, the output layer is linear;
weights start Glorot-uniform with zero biases.

No autodiff: the architecture family is fixed and small, so gradients are
spelled out (and checked against finite differences in the tests).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, FlowNavError


class TrainingDivergenceError(FlowNavError, RuntimeError):
    """Non-finite gradients or losses during training."""


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def elu(z):
    return np.where(z > 0, z, np.expm1(z))


class Mlp:
    """Dense ELU network; forward returns a cache sufficient for exact backprop."""

    def __init__(self, layer_sizes, rng, final_scale=1.0):
        self.sizes = tuple(int(s) for s in layer_sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(glorot_uniform(rng, fan_in, fan_out))
            self.biases.append(np.zeros(fan_out))
        if final_scale != 1.0:
            self.weights[-1] *= final_scale

    @property
    def params(self):
        return self.weights + self.biases

    def set_params(self, params):
        n = len(self.weights)
        for i in range(n):
            self.weights[i][...] = params[i]
            self.biases[i][...] = params[n + i]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise DimensionMismatchError(
                f"input width {x.shape[1]} != first layer {self.sizes[0]}"
            )
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == last else elu(z)
            acts.append(h)
        cache = (acts, pre)
        return (h[0] if squeeze else h), cache

    def backward(self, cache, grad_out):
        """Exact parameter gradients of the cached forward pass.

        grad_out is dL/d(output), shape (batch, out). Returns (grads, grad_in)
        where grads aligns with .params and gradients are summed over the batch.
        """
        acts, pre = cache
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != pre[-1].shape:
            raise ValueError(
                f"stale cache: grad shape {g.shape} != output shape {pre[-1].shape}"
            )
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                # d elu(z) = 1 for z > 0 else exp(z) = elu(z) + 1
                z = pre[i]
                g = g * np.where(z > 0, 1.0, np.expm1(z) + 1.0)
            grads_w[i] = acts[i].T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads_w + grads_b, g


class Adam:
    """Bias-corrected Adam over a list of parameter arrays."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def update(self, params, grads, lr=None):
        """One in-place step; raises on non-finite gradients."""
        if len(grads) != len(self.m):
            raise ValueError("gradient list does not match optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError("non-finite gradient in Adam update")
        rate = self.lr if lr is None else lr
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            p -= rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class RunningNormalizer:
    """Streaming per-component moments (Welford/Chan); identity until updated.

    apply() maps x to (x - mean) / sqrt(var + 1e-8), clipped to [-10, 10].
    """

    CLIP = 10.0
    EPS = 1e-8

    def __init__(self, dim):
        self.dim = int(dim)
        self.count = 0.0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    @property
    def var(self):
        return self.m2 / self.count if self.count > 0 else np.ones(self.dim)

    def update(self, batch):
        b = np.atleast_2d(np.asarray(batch, dtype=float))
        if b.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"batch width {b.shape[1]} != normalizer dim {self.dim}"
            )
        nb = b.shape[0]
        if nb == 0:
            return
        b_mean = b.mean(axis=0)
        b_m2 = ((b - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        tot = self.count + nb
        self.mean = self.mean + delta * (nb / tot)
        self.m2 = self.m2 + b_m2 + np.square(delta) * (self.count * nb / tot)
        self.count = tot

    def apply(self, batch):
        x = np.asarray(batch, dtype=float)
        if self.count == 0:
            return x.copy()
        z = (x - self.mean) / np.sqrt(self.var + self.EPS)
        return np.clip(z, -self.CLIP, self.CLIP)

    def state_dict(self):
        return {
            "dim": self.dim,
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        out = cls(state["dim"])
        out.count = float(state["count"])
        out.mean = np.array(state["mean"], dtype=float)
        out.m2 = np.array(state["m2"], dtype=float)
        return out
