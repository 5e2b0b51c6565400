"""Reverse-mode gradients for the INR loss, including through unrolled SGD.

The loss is the raw sum of squared errors over all coordinates and output
channels. Learning rates elsewhere in the package are tuned for this sum
convention; divide by ``LossValue.count * out_dim`` to get a per-value MSE.

Gradients are hand-derived adjoints of the MLP. Second-order terms for the
meta-gradient come from exact Hessian-vector products (forward-mode
R-operator applied to the backward pass), so differentiating through
``t`` inner SGD steps costs ``t`` extra HVPs instead of a general tape.

Fixed entries (the FFN Fourier matrix) and pruned entries always report
a zero gradient.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .models import ArchSpec, Layout, Mask, check_params, encode


class NonFiniteError(FloatingPointError):
    """A loss, activation or gradient became NaN or infinite."""


class LossValue(NamedTuple):
    value: float
    count: int


def _require_finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")


def _signal_arrays(arch: ArchSpec, signal, dtype):
    coords = np.asarray(signal.coords, dtype=dtype)
    targets = np.asarray(signal.targets, dtype=dtype)
    if targets.ndim == 1:
        targets = targets[:, None]
    if coords.ndim != 2 or coords.shape[1] != arch.in_dim:
        raise ValueError(f"coords must have shape (N, {arch.in_dim}), got {coords.shape}")
    if targets.shape != (coords.shape[0], arch.out_dim):
        raise ValueError(
            f"targets must have shape ({coords.shape[0]}, {arch.out_dim}), got {targets.shape}")
    return coords, targets


class _Pass:
    """One forward + backward evaluation, kept around for HVPs."""

    def __init__(self, arch: ArchSpec, lay: Layout, w: np.ndarray, x0: np.ndarray,
                 targets: np.ndarray):
        self.lay = lay
        self.views = lay.views(w)
        self.sine = arch.kind == "siren"
        self.omegas = arch.layer_omegas() if self.sine else None
        self.inputs = []
        # first derivative of each hidden activation at its pre-activation
        self.d1 = []
        a = x0
        last = len(self.views) - 1
        for i, (W, b) in enumerate(self.views):
            self.inputs.append(a)
            z = a @ W.T
            if b is not None:
                z += b
            if i == last:
                self.out = z
                break
            if self.sine:
                om = self.omegas[i]
                z *= om
                a = np.sin(z)
                d1 = np.cos(z, out=z)
                d1 *= om
            else:
                d1 = (z > 0).astype(z.dtype)
                a = z * d1
            self.d1.append(d1)
        _require_finite(self.out, "network output")
        self.resid = self.out - targets
        self.loss = float(np.vdot(self.resid, self.resid))
        _require_finite(self.loss, "loss")
        self._ga = None
        self._g = None

    def grad_w(self) -> np.ndarray:
        """Gradient w.r.t. the effective (already masked) parameters."""
        if self._g is not None:
            return self._g
        lay = self.lay
        g = np.empty(lay.d, dtype=self.out.dtype)
        if lay.fourier is not None:
            g[:lay.dense[0].w_offset] = 0
        ga = [None] * len(self.views)
        G = 2 * self.resid
        last = len(self.views) - 1
        for i in range(last, -1, -1):
            W, b = self.views[i]
            layer = lay.dense[i]
            if i < last:
                ga[i] = G
                G = G * self.d1[i]
            np.matmul(G.T, self.inputs[i], out=g[layer.w_offset:layer.w_offset + W.size].reshape(W.shape))
            if b is not None:
                G.sum(axis=0, out=g[layer.b_offset:layer.b_offset + b.size])
            if i > 0:
                G = G @ W
        self._ga = ga
        self._g = g
        return g

    def hvp_w(self, v: np.ndarray) -> np.ndarray:
        """Hessian of the loss (w.r.t. effective parameters) times ``v``.

        ``v`` must be zero on fixed entries; the encoding input is treated
        as constant.
        """
        if self._ga is None:
            self.grad_w()
        lay = self.lay
        vviews = lay.views(v)
        last = len(self.views) - 1
        r_inputs = [None]
        r_pre = []
        for i, (W, _b) in enumerate(self.views):
            VW, Vb = vviews[i]
            rz = self.inputs[i] @ VW.T
            if Vb is not None:
                rz += Vb
            if r_inputs[i] is not None:
                rz += r_inputs[i] @ W.T
            if i == last:
                r_out = rz
                break
            r_pre.append(rz)
            r_inputs.append(self.d1[i] * rz)

        h = np.empty(lay.d, dtype=self.out.dtype)
        if lay.fourier is not None:
            h[:lay.dense[0].w_offset] = 0
        G = 2 * self.resid
        RG = 2 * r_out
        for i in range(last, -1, -1):
            W, b = self.views[i]
            VW, _ = vviews[i]
            layer = lay.dense[i]
            if i < last:
                ga = self._ga[i]
                RG *= self.d1[i]
                if self.sine:
                    # second derivative of sin(om z) is -om^2 * activation
                    om = self.omegas[i]
                    curv = ga * self.inputs[i + 1]
                    curv *= r_pre[i]
                    curv *= -om * om
                    RG += curv
                G = ga * self.d1[i]
            hw = h[layer.w_offset:layer.w_offset + W.size].reshape(W.shape)
            np.matmul(RG.T, self.inputs[i], out=hw)
            if r_inputs[i] is not None:
                hw += G.T @ r_inputs[i]
            if b is not None:
                RG.sum(axis=0, out=h[layer.b_offset:layer.b_offset + b.size])
            if i > 0:
                RG = RG @ W
                RG += G @ VW
                G = G @ W
        return h


def _setup(arch, params, mask, signal):
    lay = check_params(arch, params, mask)
    if mask is None:
        mask = Mask.ones(arch)
    dtype = params.dtype if np.issubdtype(params.dtype, np.floating) else np.float64
    params = np.asarray(params, dtype=dtype)
    _require_finite(params, "parameters")
    coords, targets = _signal_arrays(arch, signal, dtype)
    keep = mask.multiplier(dtype)
    # entries that receive updates: unpruned and trainable
    frozen = ~lay.trainable.copy()
    frozen[mask.pruned_indices()] = True
    w = params * keep
    x0 = encode(arch, w, coords)
    return lay, params, keep, frozen, x0, targets


def forward_loss(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal) -> LossValue:
    lay, params, keep, _, x0, targets = _setup(arch, params, mask, signal)
    p = _Pass(arch, lay, params * keep, x0, targets)
    return LossValue(p.loss, targets.shape[0])


def value_and_grad(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal):
    """``(loss, gradient)``; pruned and fixed entries of the gradient are 0."""
    lay, params, keep, frozen, x0, targets = _setup(arch, params, mask, signal)
    p = _Pass(arch, lay, params * keep, x0, targets)
    g = p.grad_w().copy()
    g[frozen] = 0
    return p.loss, g


def grad(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal) -> np.ndarray:
    return value_and_grad(arch, params, mask, signal)[1]


def meta_value_and_grad(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal,
                        inner_lr: float, steps: int, first_order: bool = False):
    """Post-adaptation loss and its gradient w.r.t. the pre-adaptation params.

    Adaptation is ``steps`` full-batch SGD steps of size ``inner_lr`` on the
    masked loss. With ``first_order`` the Hessian terms are dropped and the
    result is the plain gradient at the adapted point.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if inner_lr < 0:
        raise ValueError("inner_lr must be >= 0")
    lay, theta, keep, frozen, x0, targets = _setup(arch, params, mask, signal)
    passes = []
    for _ in range(steps):
        p = _Pass(arch, lay, theta * keep, x0, targets)
        g = p.grad_w().copy()
        g[frozen] = 0
        theta = theta - inner_lr * g
        passes.append(p)
    final = _Pass(arch, lay, theta * keep, x0, targets)
    v = final.grad_w() * keep
    if not first_order and inner_lr != 0:
        for p in reversed(passes):
            u = v.copy()
            u[frozen] = 0
            v = v - inner_lr * (keep * p.hvp_w(u))
    v = np.array(v, copy=True)
    v[frozen] = 0
    _require_finite(v, "meta-gradient")
    return final.loss, v


def meta_gradient(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal,
                  inner_lr: float, t: int, first_order: bool = False) -> np.ndarray:
    return meta_value_and_grad(arch, params, mask, signal, inner_lr, t, first_order)[1]


def hvp(arch: ArchSpec, params: np.ndarray, mask: Mask | None, signal, v: np.ndarray) -> np.ndarray:
    """Hessian of the masked loss w.r.t. trainable params, applied to ``v``."""
    lay, params, keep, frozen, x0, targets = _setup(arch, params, mask, signal)
    u = np.asarray(v, dtype=params.dtype).copy()
    u[frozen] = 0
    h = keep * _Pass(arch, lay, params * keep, x0, targets).hvp_w(u)
    h[frozen] = 0
    return h
