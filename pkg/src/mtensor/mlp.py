"""Sine-activated multilayer perceptrons with reverse-mode gradients.

Each factor network consumes a single scalar coordinate and emits the
vectorized factor slice for that coordinate.  Layers are bias-free and the
activation is ``sin(omega0 * x)`` after every layer except the last, so
the network maps 0 to 0 and the activation Lipschitz constant equals
``omega0`` -- the two ingredients of the Lipschitz certificate.
"""
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import load_tensor, save_tensor


@dataclass
class Mlp:
    """Bias-free MLP: weight matrices chained ``1 -> h -> ... -> out``."""

    weights: list
    omega0: float = 5.0

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if not self.weights:
            raise ValueError("need at least one weight matrix")
        if self.weights[0].shape[1] != 1:
            raise ValueError("input dimension must be 1 (scalar coordinate)")
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError("inconsistent layer dimensions")

    @property
    def depth(self):
        return len(self.weights)

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return Mlp([w.copy() for w in self.weights], self.omega0)


def init_mlp(hidden, depth, out_dim, omega0=5.0, seed=0, out_scale=1.0):
    """Seeded init, entries uniform(+-sqrt(6/fan_in)/omega0) per layer.

    ``out_scale`` multiplies the final layer's range; losses whose
    regularizers are stationary at the zero function (the SDF terms) need
    the initial output amplitude lifted away from that saddle.
    """
    rng = np.random.default_rng(seed)
    dims = [1] + [hidden] * (depth - 1) + [out_dim]
    weights = []
    for i in range(depth):
        fan_in = dims[i]
        bound = math.sqrt(6.0 / fan_in) / omega0
        if i == depth - 1:
            bound *= out_scale
        weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
    return Mlp(weights, omega0)


def forward_batch(m, xs):
    """Evaluate the network at a batch of scalar coordinates.

    Parameters
    ----------
    m : Mlp
    xs : ndarray of shape (B,)

    Returns
    -------
    (out, cache) where ``out`` has shape ``(out_dim, B)`` and ``cache``
    holds the layer inputs and pre-activations needed by
    :func:`backward_batch`.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    act = xs[None, :]
    acts = [act]
    pres = []
    for i, w in enumerate(m.weights):
        pre = w @ act
        pres.append(pre)
        if i < m.depth - 1:
            act = np.sin(m.omega0 * pre)
            acts.append(act)
    out = pres[-1]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite activation in forward pass")
    return out, (acts, pres)


def backward_batch(m, cache, cotangent):
    """Gradients of ``<cotangent, output>`` w.r.t. every weight matrix."""
    acts, pres = cache
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != pres[-1].shape:
        raise ValueError(f"cotangent shape {cotangent.shape} does not match "
                         f"output shape {pres[-1].shape}")
    grads = [None] * m.depth
    delta = cotangent
    for i in range(m.depth - 1, -1, -1):
        grads[i] = delta @ acts[i].T
        if i > 0:
            back = m.weights[i].T @ delta
            delta = back * (m.omega0 * np.cos(m.omega0 * pres[i - 1]))
    return grads


def mlp_forward(m, x):
    """Single-coordinate forward pass; returns (vector, cache)."""
    out, cache = forward_batch(m, np.array([float(x)]))
    return out[:, 0], cache


def mlp_backward(m, cache, cotangent):
    """Single-coordinate reverse pass matching :func:`mlp_forward`."""
    return backward_batch(m, cache, np.asarray(cotangent)[:, None])


def weight_l1_max(nets):
    """Max entrywise l1 norm over all weight matrices of all networks."""
    if not nets:
        raise ValueError("need at least one network")
    return max(float(np.sum(np.abs(w))) for net in nets for w in net.weights)


@dataclass
class LipschitzCert:
    """Certificate bounding the Lipschitz constant of the tensor function."""

    omega: float
    kappa: float
    zeta: float
    n_modes: int
    depth: int
    delta: float = field(init=False)

    def __post_init__(self):
        if min(self.omega, self.kappa, self.zeta) <= 0:
            raise ValueError("omega, kappa, zeta must be positive")
        if self.n_modes < 1 or self.depth < 1:
            raise ValueError("n_modes and depth must be >= 1")
        nd = self.n_modes * self.depth
        self.delta = (math.sqrt(2.0) * self.omega ** nd
                      * self.kappa ** (nd - self.n_modes)
                      * self.zeta ** (self.n_modes - 1))


def lipschitz_bound(omega, kappa, zeta, n_modes, depth):
    """Build the certificate ``sqrt(2) w^{Nd} k^{Nd-N} z^{N-1}``."""
    return LipschitzCert(float(omega), float(kappa), float(zeta),
                         int(n_modes), int(depth))


def cert_for_nets(nets, zeta=1.0):
    """Certificate from measured weight norms of a family of networks."""
    depths = {net.depth for net in nets}
    if len(depths) != 1:
        raise ValueError("networks must share a depth")
    omega0s = {net.omega0 for net in nets}
    if len(omega0s) != 1:
        raise ValueError("networks must share an activation frequency")
    return lipschitz_bound(weight_l1_max(nets), omega0s.pop(), zeta,
                           len(nets), depths.pop())


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus step count."""

    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)


def adam_step(state, params, grads):
    """One bias-corrected Adam update; mutates ``params`` and ``state``."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient count mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in Adam step")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpointing: manifest.json + one MTD1 matrix per layer


def save_mlp(path, m):
    os.makedirs(path, exist_ok=True)
    manifest = {"depth": m.depth, "omega0": m.omega0,
                "widths": [list(w.shape) for w in m.weights]}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    for i, w in enumerate(m.weights):
        save_tensor(os.path.join(path, f"layer_{i}.mtd1"), w)


def load_mlp(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    weights = [load_tensor(os.path.join(path, f"layer_{i}.mtd1"))
               for i in range(manifest["depth"])]
    return Mlp(weights, manifest["omega0"])
