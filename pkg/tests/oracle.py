"""Brute-force reference: N distinguishable spin-1 particles, symmetrized.

Independent of the Schwinger-boson construction in the package; only
usable for tiny N (dimension 3**N).
"""

import itertools
from functools import reduce

import numpy as np

# single spin-1, basis m = +1, 0, -1
_SP = np.sqrt(2.0) * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
_SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
_M = (1, 0, -1)


def _embed(op, site, N):
    mats = [np.eye(3, dtype=complex)] * N
    mats[site] = op
    return reduce(np.kron, mats)


def product_ops(N):
    sp = sum(_embed(_SP, i, N) for i in range(N))
    sz = sum(_embed(_SZ, i, N) for i in range(N))
    sm = sp.conj().T
    sx = 0.5 * (sp + sm)
    sy = -0.5j * (sp - sm)
    return {"Splus": sp, "Sminus": sm, "Sz": sz, "Sx": sx, "Sy": sy,
            "S2": sx @ sx + sy @ sy + sz @ sz}


def symmetric_isometry(N, triples):
    """Columns: normalized symmetric states for each ``(n_-1, n_0, n_+1)``."""
    cols = []
    for nm, n0, npl in triples:
        v = np.zeros(3**N, dtype=complex)
        for config in itertools.product(range(3), repeat=N):
            ms = [_M[c] for c in config]
            if ms.count(-1) == nm and ms.count(0) == n0 and ms.count(1) == npl:
                v[np.ravel_multi_index(config, (3,) * N)] = 1.0
        cols.append(v / np.linalg.norm(v))
    return np.array(cols).T


def projected_ops(N, triples):
    P = symmetric_isometry(N, triples)
    ops = {k: P.conj().T @ v @ P for k, v in product_ops(N).items()}
    n0 = np.diag([t[1] for t in triples]).astype(complex)
    ops["N0"] = n0
    ops["Sperp2"] = ops["S2"] - ops["Sz"] @ ops["Sz"]
    return ops
