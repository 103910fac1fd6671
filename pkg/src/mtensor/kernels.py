"""Hot numeric kernels with numba and pure-numpy implementations.

Public names (``soft_threshold_kernel``, ``e_step_kernel``,
``min_dists_kernel``, ``tv_axis0_kernel``) are bound to one of the two
implementations at import time according to :mod:`mtensor._backend`.
The ``*_np`` / ``*_nb`` variants stay importable for benchmarking and
cross-checking.
"""
import numpy as np

from ._backend import HAVE_NUMBA, USE_NUMBA


# ---------------------------------------------------------------------------
# pure numpy implementations


def soft_threshold_np(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def e_step_np(a, e_prev, m, mask, gamma, eta):
    # observed entries: prox of gamma|e| + (a+e-m)^2 + (eta/2)(e-e_prev)^2
    obs = soft_threshold_np((2.0 * (m - a) + eta * e_prev) / (2.0 + eta),
                            gamma / (2.0 + eta))
    # unobserved entries: prox of gamma|e| + (eta/2)(e-e_prev)^2
    free = soft_threshold_np(e_prev, gamma / eta)
    return np.where(mask, obs, free)


def min_dists_np(p, q, chunk=256):
    # chunked to keep the (n_p, n_q) distance block bounded in memory
    out = np.empty(p.shape[0])
    for lo in range(0, p.shape[0], chunk):
        hi = min(lo + chunk, p.shape[0])
        diff = p[lo:hi, None, :] - q[None, :, :]
        out[lo:hi] = np.sqrt((diff * diff).sum(axis=2).min(axis=1))
    return out


def tv_axis0_np(x2d, eps):
    d = x2d[1:] - x2d[:-1]
    root = np.sqrt(d * d + eps * eps)
    value = float(np.sum(root - eps))
    w = d / root
    grad = np.zeros_like(x2d)
    grad[1:] += w
    grad[:-1] -= w
    return value, grad


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def soft_threshold_nb(x, tau):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x.flat[i]
            mag = abs(v) - tau
            out.flat[i] = 0.0 if mag <= 0.0 else (mag if v > 0.0 else -mag)
        return out

    @njit(cache=True)
    def e_step_nb(a, e_prev, m, mask, gamma, eta):
        out = np.empty_like(a)
        t_obs = gamma / (2.0 + eta)
        t_free = gamma / eta
        for i in range(a.size):
            if mask.flat[i]:
                v = (2.0 * (m.flat[i] - a.flat[i]) + eta * e_prev.flat[i]) / (2.0 + eta)
                t = t_obs
            else:
                v = e_prev.flat[i]
                t = t_free
            mag = abs(v) - t
            out.flat[i] = 0.0 if mag <= 0.0 else (mag if v > 0.0 else -mag)
        return out

    @njit(cache=True)
    def min_dists_nb(p, q):
        out = np.empty(p.shape[0])
        for i in range(p.shape[0]):
            best = np.inf
            for j in range(q.shape[0]):
                d = 0.0
                for k in range(p.shape[1]):
                    t = p[i, k] - q[j, k]
                    d += t * t
                if d < best:
                    best = d
            out[i] = np.sqrt(best)
        return out

    @njit(cache=True)
    def tv_axis0_nb(x2d, eps):
        n, m = x2d.shape
        grad = np.zeros((n, m))
        value = 0.0
        for j in range(m):
            for i in range(n - 1):
                d = x2d[i + 1, j] - x2d[i, j]
                root = np.sqrt(d * d + eps * eps)
                value += root - eps
                w = d / root
                grad[i + 1, j] += w
                grad[i, j] -= w
        return value, grad


if USE_NUMBA:
    soft_threshold_kernel = soft_threshold_nb
    e_step_kernel = e_step_nb
    min_dists_kernel = min_dists_nb
    tv_axis0_kernel = tv_axis0_nb
else:
    soft_threshold_kernel = soft_threshold_np
    e_step_kernel = e_step_np
    min_dists_kernel = min_dists_np
    tv_axis0_kernel = tv_axis0_np
