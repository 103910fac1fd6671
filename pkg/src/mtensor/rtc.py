"""Robust tensor completion: recover a tensor from masked, impulse-noisy
observations with an implicit decomposition model, smoothed TV
regularization on the output, and an l1-penalized perturbation block.

Also houses the corruption harness used by the benchmarks and the
PPM/PGM image codecs (8-bit, ASCII and binary variants), with pixel
values scaled to [0, 1]; PSNR is always reported against peak 1.
"""
import numpy as np
from dataclasses import dataclass, field

from .decomp import rank_bounds
from .imtd import eval_grid, grid_domains, init_imtd
from .kernels import tv_axis0_kernel
from .pals import PalsConfig, PalsProblem, pals_run
from .tensor import as_tensor, fro_norm


@dataclass
class ObservationMask:
    """Boolean sampling mask with its rate and seed."""

    mask: np.ndarray
    sr: float
    seed: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        frac = float(self.mask.mean())
        # +-1%, with an extra allowance of one entry for tiny tensors
        if abs(frac - self.sr) > max(0.01, 1.0 / self.mask.size):
            raise ValueError(f"mask keeps {frac:.4f} of entries, "
                             f"outside +-1% of sr={self.sr}")


def corrupt(x, sr, sigma, seed, peak=1.0):
    """Subsample and impulse-corrupt a clean tensor.

    Keeps an exact ``round(sr * numel)`` entries chosen uniformly at
    random; of those, an exact ``round(sigma * kept)`` fraction is
    replaced by 0 or ``peak`` with equal probability (salt and pepper).
    Deterministic for a fixed seed.

    Returns
    -------
    (m, mask) : the observed tensor (zeros off-mask) and the
    :class:`ObservationMask`.
    """
    x = as_tensor(x)
    if not 0 < sr <= 1:
        raise ValueError("sampling rate must satisfy 0 < sr <= 1")
    if not 0 <= sigma <= 1:
        raise ValueError("noise level must satisfy 0 <= sigma <= 1")
    rng = np.random.default_rng(seed)
    numel = x.size
    kept = max(1, int(round(sr * numel)))
    order = rng.permutation(numel)
    keep_idx = order[:kept]
    mask = np.zeros(numel, dtype=bool)
    mask[keep_idx] = True

    values = x.ravel().copy()
    n_noise = int(round(sigma * kept))
    if n_noise:
        noisy = rng.permutation(keep_idx)[:n_noise]
        values[noisy] = peak * rng.integers(0, 2, size=n_noise)
    values[~mask] = 0.0
    return (values.reshape(x.shape),
            ObservationMask(mask.reshape(x.shape), sr, seed))


def tv_l1(x, eps=1e-4):
    """Charbonnier-smoothed total variation over every mode.

    ``sum over modes and adjacent pairs of sqrt(diff^2 + eps^2) - eps``,
    which tends to the l1 norm of all first-order differences as eps -> 0.
    Returns the value and its exact gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    value = 0.0
    grad = np.zeros_like(x)
    for mode in range(x.ndim):
        moved = np.moveaxis(x, mode, 0)
        flat = np.ascontiguousarray(moved.reshape(moved.shape[0], -1))
        v, g2 = tv_axis0_kernel(flat, float(eps))
        value += v
        grad += np.moveaxis(g2.reshape(moved.shape), 0, mode)
    return value, grad


@dataclass
class RtcProblem:
    """A robust-completion instance: data, corruption mask, and knobs."""

    observed: np.ndarray
    mask: ObservationMask
    peak: float = 1.0
    ranks: tuple = None
    config: PalsConfig = field(default_factory=PalsConfig)
    tv_eps: float = 1e-4
    hidden: int = 64
    depth: int = 4
    omega0: float = 5.0

    def __post_init__(self):
        self.observed = as_tensor(self.observed)
        if self.mask.mask.shape != self.observed.shape:
            raise ValueError("mask shape does not match data")
        if self.ranks is None:
            self.ranks = default_ranks(self.observed.shape)
        self.ranks = tuple(int(r) for r in self.ranks)


def default_ranks(shape):
    """Heuristic rank choice: the recommended bound, clamped to [1, 24]."""
    rec = rank_bounds(shape).recommended
    return tuple(min(max(rec, 1), 24) for _ in shape)


def default_gamma(observed):
    """Scale-relative sparsity weight.

    The constant is sized so the perturbation's shrinkage threshold sits
    between typical model-fit residuals and impulse-noise residuals: much
    smaller and the perturbation absorbs the whole signal before the
    network learns anything, much larger and impulses stay in the fit.
    """
    return 0.3 * fro_norm(observed) / np.sqrt(observed.size)


def rtc_recover(problem):
    """Run the alternating solver on an RTC instance.

    Returns ``(x_hat, e_hat, state)``: the recovered tensor clamped to
    ``[0, peak]``, the fitted sparse perturbation, and the solver state
    with the iteration history.
    """
    cfg = problem.config
    shape = problem.observed.shape
    model = init_imtd(problem.ranks, grid_domains(shape),
                      hidden=problem.hidden, depth=problem.depth,
                      omega0=problem.omega0, seed=cfg.seed)
    coords = [np.arange(s, dtype=np.float64) for s in shape]
    reg = (lambda a: tv_l1(a, problem.tv_eps)) if cfg.lam > 0 else None
    pals_problem = PalsProblem(problem.observed, problem.mask.mask, model,
                               coords, smooth_reg=reg)
    state = pals_run(pals_problem, cfg)
    x_hat = np.clip(eval_grid(state.model, coords), 0.0, problem.peak)
    return x_hat, state.e, state


# ---------------------------------------------------------------------------
# PPM / PGM image codecs (8-bit, ASCII P2/P3 and binary P5/P6)


def _read_pnm_tokens(data, count):
    # tokens may be separated by whitespace and '#' comments
    tokens = []
    i = 0
    while len(tokens) < count and i < len(data):
        c = data[i:i + 1]
        if c == b"#":
            j = data.find(b"\n", i)
            i = len(data) if j == -1 else j + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i


def load_image(path):
    """Read a PGM/PPM image as a float tensor scaled to [0, 1].

    Grayscale images load as (H, W); color images as (H, W, 3).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:1] != b"P" or data[1:2] not in b"2356":
        raise ValueError(f"unsupported or malformed PNM header in {path}")
    kind = data[:2].decode()
    tokens, pos = _read_pnm_tokens(data[2:], 3)
    if len(tokens) != 3:
        raise ValueError("truncated PNM header")
    width, height, maxval = (int(t) for t in tokens)
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise ValueError(f"bad PNM dimensions {width}x{height}, "
                         f"maxval {maxval}")
    channels = 3 if kind in ("P3", "P6") else 1
    count = width * height * channels
    if kind in ("P2", "P3"):
        values, _ = _read_pnm_tokens(data[2 + pos:], count)
        if len(values) != count:
            raise ValueError("truncated PNM payload")
        pixels = np.array([int(t) for t in values], dtype=np.float64)
    else:
        # exactly one whitespace byte separates the header from the raster
        start = 2 + pos
        if start >= len(data) or not data[start:start + 1].isspace():
            raise ValueError("malformed PNM header/raster separator")
        payload = data[start + 1:start + 1 + count]
        if len(payload) != count:
            raise ValueError("truncated PNM payload")
        pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    if pixels.max(initial=0) > maxval:
        raise ValueError("pixel value exceeds declared maxval")
    pixels /= maxval
    if channels == 1:
        return pixels.reshape(height, width)
    return pixels.reshape(height, width, 3)


def save_image(path, t, binary=True):
    """Write a [0, 1] tensor as an 8-bit PGM (2-D) or PPM (H x W x 3)."""
    t = as_tensor(t)
    if t.ndim == 2:
        kind = "P5" if binary else "P2"
        height, width = t.shape
    elif t.ndim == 3 and t.shape[2] == 3:
        kind = "P6" if binary else "P3"
        height, width = t.shape[:2]
    else:
        raise ValueError(f"cannot encode shape {t.shape} as PGM/PPM")
    pixels = np.clip(np.round(t * 255.0), 0, 255).astype(np.uint8)
    header = f"{kind}\n{width} {height}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(pixels.tobytes())
        else:
            fh.write(" ".join(str(v) for v in pixels.ravel()).encode())
            fh.write(b"\n")
