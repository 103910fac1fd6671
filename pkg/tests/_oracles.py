"""Independent reference implementations used only as test oracles.

These stay deliberately separate from the library's contraction paths:
the product oracles sum literally over every rank tuple, the CP oracle
accumulates rank-one outer products, and the scalar oracle uses nothing
but Python loops.
"""
import itertools

import numpy as np


def naive_multiple_product(f):
    """Literal sum over all rank tuples, evaluated entry by entry."""
    out = np.zeros(f.long_dims)
    for idx in np.ndindex(*f.long_dims):
        acc = None
        for mode in range(f.order):
            sl = np.take(f.factors[mode], idx[mode], axis=mode)
            sl = np.expand_dims(sl, axis=mode)
            acc = sl if acc is None else acc * sl
        out[idx] = acc.sum()
    return out


def scalar_multiple_product(f):
    """Pure-Python quadruple-loop evaluation; tiny instances only."""
    out = np.zeros(f.long_dims)
    for idx in np.ndindex(*f.long_dims):
        total = 0.0
        for p in itertools.product(*(range(r) for r in f.ranks)):
            term = 1.0
            for mode in range(f.order):
                j = list(p)
                j[mode] = idx[mode]
                term *= f.factors[mode][tuple(j)]
            total += term
        out[idx] = total
    return out


def triple_product(a, b, c):
    """Third-order triple product with uniform rank, from its definition."""
    n1, r, _ = a.shape
    n2 = b.shape[1]
    n3 = c.shape[2]
    out = np.zeros((n1, n2, n3))
    for i in range(n1):
        for j in range(n2):
            for t in range(n3):
                total = 0.0
                for p in range(r):
                    for q in range(r):
                        for s in range(r):
                            total += a[i, q, s] * b[p, j, s] * c[p, q, t]
                out[i, j, t] = total
    return out


def cp_product(mats):
    """Sum of rank-one outer products of the CP factor columns."""
    r = mats[0].shape[1]
    out = np.zeros(tuple(m.shape[0] for m in mats))
    for p in range(r):
        term = mats[0][:, p]
        for m in mats[1:]:
            term = np.multiply.outer(term, m[:, p])
        out += term
    return out


def fd_gradient(fn, w, idx, h):
    """Central finite difference of a scalar function at one weight."""
    orig = w[idx]
    w[idx] = orig + h
    up = fn()
    w[idx] = orig - h
    dn = fn()
    w[idx] = orig
    return (up - dn) / (2.0 * h)
