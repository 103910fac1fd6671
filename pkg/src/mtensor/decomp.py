"""The Multiple decomposition of arbitrary-order tensors.

An order-N tensor (N >= 3) factors into N tensors, each carrying one long
mode-matching dimension and N-1 short rank dimensions, contracted over all
shared rank indices.  This module provides product evaluation through
contraction environments, an alternating least squares fitter, constructive
embeddings from CP factors and from the generalized triple construction,
and the rank heuristics used to pick rank vectors in practice.
"""
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import as_tensor, fold, fro_norm, load_tensor, mode_n_product, save_tensor, unfold


@dataclass
class MultipleFactors:
    """One explicit Multiple decomposition.

    Factor ``n`` has shape ``(r_0, ..., r_{n-1}, I_n, r_{n+1}, ..., r_{N-1})``:
    the long extent ``I_n`` sits at axis ``n`` and every other axis ``k``
    has the rank extent ``r_k``.
    """

    factors: list
    ranks: tuple
    long_dims: tuple

    def __post_init__(self):
        self.factors = [as_tensor(a) for a in self.factors]
        self.ranks = tuple(int(r) for r in self.ranks)
        self.long_dims = tuple(int(d) for d in self.long_dims)
        n = len(self.factors)
        if n < 3:
            raise ValueError("Multiple decomposition requires order >= 3")
        if len(self.ranks) != n or len(self.long_dims) != n:
            raise ValueError("ranks and long_dims must have one entry per factor")
        if any(r < 1 for r in self.ranks) or any(d < 1 for d in self.long_dims):
            raise ValueError("ranks and long_dims must be positive")
        for mode, a in enumerate(self.factors):
            expect = self.factor_shape(mode)
            if a.shape != expect:
                raise ValueError(f"factor {mode} has shape {a.shape}, "
                                 f"expected {expect}")

    @property
    def order(self):
        return len(self.factors)

    def factor_shape(self, mode):
        shape = list(self.ranks)
        shape[mode] = self.long_dims[mode]
        return tuple(shape)

    def copy(self):
        return MultipleFactors([a.copy() for a in self.factors],
                               self.ranks, self.long_dims)

    def replace_factor(self, mode, new):
        factors = list(self.factors)
        factors[mode] = new
        return MultipleFactors(factors, self.ranks, self.long_dims)

    def param_count(self):
        return sum(a.size for a in self.factors)


@dataclass
class ContractionEnv:
    """Environment matrix for one mode: all factors but one, contracted.

    If ``X`` is the multiple product then
    ``unfold(X, mode) == unfold(factors[mode], mode) @ matrix.T``.
    """

    mode: int
    matrix: np.ndarray


@dataclass
class RankBounds:
    """Heuristic lower/upper bounds for the uniform decomposition rank."""

    r_min: float
    r_max: float
    recommended: int


@dataclass
class AlsResult:
    factors: MultipleFactors
    objectives: list = field(default_factory=list)
    converged: bool = False


def contraction_env(f, mode):
    """Contract every factor except ``factors[mode]`` into a matrix.

    The environment tensor keeps the long indices of the other modes and
    their rank indices free, sums over the rank index of ``mode``, and is
    reshaped (first index fastest) into a
    ``(prod I_k, k != mode) x (prod r_k, k != mode)`` matrix.
    """
    n = f.order
    if not 0 <= mode < n:
        raise ValueError(f"mode {mode} out of range")
    # einsum labels: long index of mode k -> k, rank index of mode k -> n + k
    args = []
    for m in range(n):
        if m == mode:
            continue
        sub = [n + k if k != m else m for k in range(n)]
        args.extend((f.factors[m], sub))
    out = [k for k in range(n) if k != mode] + \
          [n + k for k in range(n) if k != mode]
    env = np.einsum(*args, out, optimize=True)
    rows = int(np.prod([f.long_dims[k] for k in range(n) if k != mode]))
    cols = int(np.prod([f.ranks[k] for k in range(n) if k != mode]))
    return ContractionEnv(mode, env.reshape((rows, cols), order="F"))


def multiple_product(f):
    """Evaluate the Multiple product of a factor list.

    Computed by unfolding one factor against its contraction environment,
    which matches the defining sum over all rank tuples.
    """
    mode = int(np.argmax(f.long_dims))  # smallest environment row count
    env = contraction_env(f, mode)
    mat = unfold(f.factors[mode], mode) @ env.matrix.T
    return fold(mat, mode, f.long_dims)


def distribute_check(f, f_hat, mode):
    """Max abs deviation of the distributive law in factor ``mode``.

    Compares the product with ``factors[mode] - f_hat.factors[mode]``
    substituted against the difference of the two full products.
    """
    if f.ranks != f_hat.ranks or f.long_dims != f_hat.long_dims:
        raise ValueError("decompositions must share ranks and long dims")
    diff = f.replace_factor(mode, f.factors[mode] - f_hat.factors[mode])
    lhs = multiple_product(diff)
    rhs = multiple_product(f) - multiple_product(f_hat)
    return float(np.max(np.abs(lhs - rhs)))


def entry_bound(f, idx):
    """Upper bound on ``|X[idx]|``: product of factor slice l1 norms."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != f.order:
        raise ValueError("index length must equal the order")
    bound = 1.0
    for n, i in enumerate(idx):
        if not 0 <= i < f.long_dims[n]:
            raise ValueError(f"index {i} out of range at mode {n}")
        bound *= float(np.sum(np.abs(np.take(f.factors[n], i, axis=n))))
    return bound


def submax(shape):
    """Second largest extent, counting multiplicity."""
    return sorted(shape, reverse=True)[1]


def gtri_construct(x):
    """Constructive generalized triple decomposition at uniform rank.

    Builds a uniform rank ``r = submax(shape)`` decomposition that
    reconstructs ``x`` exactly: the factor of the largest mode carries a
    permuted copy of ``x`` and every other factor is a Kronecker-delta
    selector routing one rank index to its long index.  Returns ``None``
    for the zero tensor, whose rank is zero by definition.
    """
    x = as_tensor(x)
    n = x.ndim
    if n < 3:
        raise ValueError("requires an order >= 3 tensor")
    if not np.any(x):
        return None
    carrier = int(np.argmax(x.shape))
    r = submax(x.shape)
    others = [k for k in range(n) if k != carrier]
    # cyclic derangement over the non-carrier modes: mode k pins rank
    # axis nxt[k] to its long index (nxt[k] != k since len(others) >= 2)
    nxt = {others[i]: others[(i + 1) % len(others)] for i in range(len(others))}

    ranks = (r,) * n
    factors = []
    for mode in range(n):
        shape = [r] * n
        shape[mode] = x.shape[mode]
        factors.append(np.zeros(shape))

    # carrier factor: axis nxt[k] reads the data's mode-k index
    axes = [0] * n
    axes[carrier] = carrier
    for k in others:
        axes[nxt[k]] = k
    y = np.transpose(x, axes)
    factors[carrier][tuple(slice(0, s) for s in y.shape)] = y

    # selector factors: ones at p_carrier = 0, p_{nxt[mode]} = long index,
    # broadcast over the remaining rank axes
    for mode in others:
        idx = [0 if k == carrier else slice(None) for k in range(n)]
        for i in range(x.shape[mode]):
            idx[mode] = i
            idx[nxt[mode]] = i
            factors[mode][tuple(idx)] = 1.0
    return MultipleFactors(factors, ranks, x.shape)


def pad_ranks(f, new_ranks):
    """Zero-pad factors to a larger rank vector; the product is unchanged."""
    new_ranks = tuple(int(r) for r in new_ranks)
    if len(new_ranks) != f.order:
        raise ValueError("rank vector length mismatch")
    if any(nr < r for nr, r in zip(new_ranks, f.ranks)):
        raise ValueError("ranks can only grow under padding")
    factors = []
    for mode, a in enumerate(f.factors):
        shape = list(new_ranks)
        shape[mode] = f.long_dims[mode]
        padded = np.zeros(shape)
        padded[tuple(slice(0, s) for s in a.shape)] = a
        factors.append(padded)
    return MultipleFactors(factors, new_ranks, f.long_dims)


def cp_to_multiple(cp_factors):
    """Embed a CP decomposition as Multiple factors of uniform rank.

    Each CP factor matrix spreads along the superdiagonal of the rank
    axes, so the Multiple product reproduces the CP sum of rank-one terms.
    """
    mats = [as_tensor(a) for a in cp_factors]
    n = len(mats)
    if n < 3:
        raise ValueError("requires at least 3 CP factors")
    cols = {a.shape[1] for a in mats}
    if len(cols) != 1:
        raise ValueError("CP factor matrices must share a column count")
    r = cols.pop()
    long_dims = tuple(a.shape[0] for a in mats)
    factors = []
    for mode, a in enumerate(mats):
        shape = [r] * n
        shape[mode] = a.shape[0]
        t = np.zeros(shape)
        idx = [0] * n
        for p in range(r):
            for k in range(n):
                idx[k] = p
            idx[mode] = slice(None)
            t[tuple(idx)] = a[:, p]
        factors.append(t)
    return MultipleFactors(factors, (r,) * n, long_dims)


def tucker_compose(f, mats):
    """Product of factors each hit by a matrix on its long mode.

    Equals the plain product followed by the same mode-n products, which
    is how a Multiple decomposition of a Tucker core lifts to the full
    tensor.  Returns the composed tensor.
    """
    mats = [as_tensor(u) for u in mats]
    if len(mats) != f.order:
        raise ValueError("one matrix per mode required")
    factors = []
    dims = []
    for mode, u in enumerate(mats):
        if u.shape[1] != f.long_dims[mode]:
            raise ValueError(f"matrix {mode} has {u.shape[1]} columns, "
                             f"mode extent is {f.long_dims[mode]}")
        factors.append(mode_n_product(f.factors[mode], u, mode))
        dims.append(u.shape[0])
    return multiple_product(MultipleFactors(factors, f.ranks, dims))


def tucker_commutation_gap(f, mats):
    """Relative deviation between the two sides of the composition rule."""
    lhs = tucker_compose(f, mats)
    rhs = multiple_product(f)
    for mode, u in enumerate(mats):
        rhs = mode_n_product(rhs, as_tensor(u), mode)
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    return float(np.max(np.abs(lhs - rhs))) / scale


def random_factors(long_dims, ranks, seed=0, scale=1.0):
    """I.i.d. uniform(-scale, scale) factors for the given geometry."""
    rng = np.random.default_rng(seed)
    long_dims = tuple(int(d) for d in long_dims)
    ranks = tuple(int(r) for r in ranks)
    factors = []
    for mode in range(len(long_dims)):
        shape = list(ranks)
        shape[mode] = long_dims[mode]
        factors.append(rng.uniform(-scale, scale, size=shape))
    return MultipleFactors(factors, ranks, long_dims)


def als_fit(x, ranks, max_sweeps=100, tol=1e-10, ridge=1e-10, seed=0,
            init=None):
    """Fit Multiple factors to ``x`` by cyclic alternating least squares.

    Each factor update solves its ridge-regularized least squares problem
    in closed form against the contraction environment of the remaining
    factors, so the fit error is nonincreasing sweep to sweep.  Stops on
    the relative change of the Frobenius error or after ``max_sweeps``.

    Parameters
    ----------
    x : ndarray
    ranks : sequence of int
    max_sweeps, tol, ridge, seed : solver options
    init : MultipleFactors, optional
        Starting point; defaults to a seeded scale-matched random init.

    Returns
    -------
    AlsResult with the fitted factors and the per-sweep error history.
    """
    x = as_tensor(x)
    n = x.ndim
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != n:
        raise ValueError("need one rank per mode")
    if not np.any(x):
        raise ValueError("cannot fit the zero tensor; its rank is zero")
    bound = submax(x.shape)
    if any(r > bound for r in ranks):
        warnings.warn(f"ranks {ranks} exceed the uniform-rank bound "
                      f"submax(shape) = {bound}; the fit is overparameterized")

    if init is not None:
        f = init.copy()
        if f.long_dims != x.shape or f.ranks != ranks:
            raise ValueError("init geometry does not match x and ranks")
    else:
        scale = (fro_norm(x) / x.size) ** (1.0 / n)
        f = random_factors(x.shape, ranks, seed=seed, scale=scale)

    unfolds = [unfold(x, mode) for mode in range(n)]
    objectives = [fro_norm(x - multiple_product(f))]
    converged = False
    for _ in range(max_sweeps):
        for mode in range(n):
            env = contraction_env(f, mode).matrix
            gram = env.T @ env
            k = gram.shape[0]
            mu = ridge * max(np.trace(gram) / k, 1.0)
            rhs = unfolds[mode] @ env
            b = np.linalg.solve(gram + mu * np.eye(k), rhs.T).T
            f.factors[mode] = fold(b, mode, f.factor_shape(mode))
        obj = fro_norm(x - multiple_product(f))
        if not np.isfinite(obj):
            raise FloatingPointError("ALS objective became non-finite")
        prev = objectives[-1]
        objectives.append(obj)
        if abs(prev - obj) <= tol * max(prev, 1e-300):
            converged = True
            break
    return AlsResult(f, objectives, converged)


def rank_bounds(shape):
    """Heuristic bracket for the uniform decomposition rank of a shape."""
    shape = tuple(int(s) for s in shape)
    n = len(shape)
    if n < 2 or any(s < 1 for s in shape):
        raise ValueError("need an order >= 2 shape of positive extents")
    p = 1.0 / (n - 1)
    r_min = max(s ** p for s in shape) / 3.0
    r_max = (2.0 / 3.0) * (np.prod([float(s) for s in shape]) / sum(shape)) ** p
    return RankBounds(r_min, r_max, max(1, round(r_max)))


def pcu_rank_bound(num_points):
    """Rank cap for point-cloud models: the cube root of the point count."""
    if num_points < 1:
        raise ValueError("need a positive point count")
    return max(1, int(round(num_points ** (1.0 / 3.0))))


def compression_ratio(shape, ranks):
    """Entries of the full tensor per entry stored across all factors."""
    shape = tuple(int(s) for s in shape)
    ranks = tuple(int(r) for r in ranks)
    stored = 0
    for mode, d in enumerate(shape):
        stored += d * int(np.prod([r for k, r in enumerate(ranks) if k != mode]))
    return float(np.prod([float(s) for s in shape])) / stored


# ---------------------------------------------------------------------------
# directory serialization: manifest.json + one MTD1 file per factor


def save_factors(path, f):
    os.makedirs(path, exist_ok=True)
    manifest = {"order": f.order, "ranks": list(f.ranks),
                "long_dims": list(f.long_dims)}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    for mode, a in enumerate(f.factors):
        save_tensor(os.path.join(path, f"factor_{mode}.mtd1"), a)


def load_factors(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    factors = [load_tensor(os.path.join(path, f"factor_{mode}.mtd1"))
               for mode in range(manifest["order"])]
    return MultipleFactors(factors, manifest["ranks"], manifest["long_dims"])
