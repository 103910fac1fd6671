"""Dense N-dimensional tensor arithmetic.

Tensors are plain float64 :class:`numpy.ndarray` objects.  Every operation
in this package that linearizes multi-indices uses one canonical
convention: the first index varies fastest (the column-major
generalization).  Concretely, ``unfold(t, n)`` maps entry
``t[i_0, ..., i_{N-1}]`` to row ``i_n`` and column
``sum_{k != n} i_k * J_k`` with ``J_k = prod_{m < k, m != n} I_m``.
"""
import struct

import numpy as np

from .kernels import soft_threshold_kernel

PSNR_CAP_DB = 200.0

MTD1_MAGIC = b"MTD1"


def as_tensor(t):
    """Coerce input to a float64 ndarray."""
    return np.asarray(t, dtype=np.float64)


def unfold(t, mode):
    """Mode-``mode`` unfolding of a tensor.

    Parameters
    ----------
    t : ndarray
    mode : int
        Zero-based mode index.

    Returns
    -------
    ndarray of shape ``(t.shape[mode], prod(other extents))``, columns
    ordered with the first remaining index varying fastest.
    """
    t = as_tensor(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape((t.shape[mode], -1), order="F")


def fold(m, mode, shape):
    """Inverse of :func:`unfold` for the given mode and full tensor shape."""
    m = as_tensor(m)
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    rest = shape[:mode] + shape[mode + 1:]
    if m.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix shape {m.shape} inconsistent with shape "
                         f"{shape} at mode {mode}")
    t = m.reshape((shape[mode],) + rest, order="F")
    return np.moveaxis(t, 0, mode)


def mode_n_product(t, u, mode):
    """Mode-``mode`` product of tensor ``t`` with matrix ``u``.

    Satisfies ``unfold(result, mode) == u @ unfold(t, mode)``.
    """
    t = as_tensor(t)
    u = as_tensor(u)
    if u.ndim != 2:
        raise ValueError("u must be a matrix")
    if u.shape[1] != t.shape[mode]:
        raise ValueError(f"u has {u.shape[1]} columns but mode {mode} "
                         f"extent is {t.shape[mode]}")
    new_shape = list(t.shape)
    new_shape[mode] = u.shape[0]
    return fold(u @ unfold(t, mode), mode, new_shape)


def fro_norm(t):
    """Frobenius norm: sqrt of the sum of squared entries."""
    return float(np.sqrt(np.sum(np.square(as_tensor(t)))))


def l1_norm(t):
    """Entrywise l1 norm: sum of absolute entries."""
    return float(np.sum(np.abs(as_tensor(t))))


def soft_threshold(t, tau):
    """Elementwise shrinkage ``sign(x) * max(|x| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return soft_threshold_kernel(as_tensor(t), float(tau))


def psnr(x, ref, peak=1.0):
    """Peak signal-to-noise ratio in decibels, capped at 200 dB.

    ``10 * log10(peak^2 / MSE)`` with ``MSE = ||x - ref||_F^2 / numel``.
    The cap stands in for the infinite value of an exact match so the
    metric stays serializable.
    """
    x = as_tensor(x)
    ref = as_tensor(ref)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean(np.square(x - ref)))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


# ---------------------------------------------------------------------------
# MTD1 container: magic 'MTD1', u32 order, u64 extents, f64 values in
# canonical (first index fastest) order; all little-endian.


def save_tensor(path, t):
    """Write a tensor to ``path`` in the MTD1 container format."""
    t = as_tensor(t)
    with open(path, "wb") as fh:
        fh.write(MTD1_MAGIC)
        fh.write(struct.pack("<I", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        fh.write(t.ravel(order="F").astype("<f8").tobytes())


def load_tensor(path):
    """Read an MTD1 container written by :func:`save_tensor`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MTD1_MAGIC:
            raise ValueError(f"not an MTD1 file: bad magic {magic!r}")
        (order,) = struct.unpack("<I", fh.read(4))
        if order < 1:
            raise ValueError("MTD1 order must be >= 1")
        raw = fh.read(8 * order)
        if len(raw) != 8 * order:
            raise ValueError("truncated MTD1 header")
        shape = struct.unpack(f"<{order}Q", raw)
        numel = int(np.prod(shape, dtype=np.int64))
        payload = fh.read(8 * numel)
        if len(payload) != 8 * numel:
            raise ValueError("truncated MTD1 payload")
        data = np.frombuffer(payload, dtype="<f8")
        return data.astype(np.float64).reshape(shape, order="F")
