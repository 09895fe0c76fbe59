"""Independent reference computations used by the tests."""

import itertools

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


def jackknife_mixed_moment(r, m, columns, nodes=12):
    """Exact E(prod_i T_{columns[i]}) by Gauss-Hermite quadrature.

    ``T_l = m/(m-1) sum_j r_j (Z_jl - Zbar_j)^2``; rows ``j`` are independent,
    so the expectation factorises over ``j`` after expanding the product.
    """
    x, w = hermegauss(nodes)
    w = w / w.sum()
    cols = sorted(set(columns))
    q = len(cols)
    C = np.full((q, q), -1.0 / m) + np.eye(q)
    L = np.linalg.cholesky(C)
    grid = np.stack([g.ravel() for g in np.meshgrid(*([x] * q), indexing="ij")])
    weight = np.prod(np.meshgrid(*([w] * q), indexing="ij"), axis=0).ravel()
    dev = L @ grid
    k = len(r)
    total = 0.0
    for js in itertools.product(range(k), repeat=len(columns)):
        value = float(np.prod([r[j] for j in js]))
        for j in set(js):
            f = np.ones_like(weight)
            for col, jj in zip(columns, js):
                if jj == j:
                    f = f * dev[cols.index(col)] ** 2
            value *= float(weight @ f)
        total += value
    return (m / (m - 1)) ** len(columns) * total
