"""Reciprocal k-nearest-neighbour affinity graphs and their normalizations."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError
from .numerics import as_csr

__all__ = [
    "AffinityGraph",
    "l2_normalize",
    "build_affinity",
    "normalize_row_stochastic",
    "normalize_symmetric",
    "write_edge_csv",
]


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric nonnegative affinity matrix with zero diagonal.

    Attributes
    ----------
    A : scipy.sparse.csr_matrix, shape (n, n)
    k_nn : int
        Neighbourhood size that was requested when building the graph.
    """

    A: sp.csr_matrix
    k_nn: int

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_edges(self):
        return self.A.nnz // 2


def l2_normalize(X, ids=None):
    """Row-wise L2 normalization; zero rows raise :class:`ContractError`."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        i = int(bad[0])
        name = ids[i] if ids is not None else f"row {i}"
        raise ContractError(f"zero-norm feature vector for example {name!r}")
    return X / norms[:, None]


def _neighbor_mask(sim, k_eff):
    n = sim.shape[0]
    mask = np.zeros((n, n), dtype=bool)
    if k_eff == 0:
        return mask
    s = sim.copy()
    np.fill_diagonal(s, -np.inf)
    # stable sort on -similarity keeps ascending index order among ties
    order = np.argsort(-s, axis=1, kind="stable")[:, :k_eff]
    rows = np.repeat(np.arange(n), k_eff)
    mask[rows, order.ravel()] = True
    return mask


def build_affinity(X, k_nn=50, ids=None):
    """Reciprocal kNN graph over the rows of ``X``.

    Edge ``(i, j)`` exists iff each of ``i`` and ``j`` is among the other's
    ``min(k_nn, N - 1)`` most cosine-similar examples; its weight is the
    clipped cosine ``max(v_i . v_j, 0)`` and zero-weight edges are not stored.

    Parameters
    ----------
    X : array-like, shape (N, d)
        One feature vector per row. Rows are L2-normalized internally.
    k_nn : int
    ids : sequence of str, optional
        Only used to name the offending example in error messages.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ContractError(f"features must be a non-empty 2-D array, got shape {X.shape}")
    if k_nn < 0:
        raise ContractError(f"k_nn must be non-negative, got {k_nn}")
    Xn = l2_normalize(X, ids)
    n = Xn.shape[0]
    sim = Xn @ Xn.T
    # mirror the upper triangle so that sim[i, j] and sim[j, i] are bitwise equal
    upper = np.triu(sim, 1)
    sim = upper + upper.T
    k_eff = min(int(k_nn), n - 1)
    nbr = _neighbor_mask(sim, k_eff)
    mutual = nbr & nbr.T
    W = np.where(mutual, np.maximum(sim, 0.0), 0.0)
    return AffinityGraph(A=as_csr(W), k_nn=int(k_nn))


def normalize_row_stochastic(graph):
    """``D^{-1} (A + I)`` with ``D = diag((A + I) 1)``."""
    A = graph.A if isinstance(graph, AffinityGraph) else as_csr(graph)
    n = A.shape[0]
    AI = as_csr(A + sp.identity(n, format="csr"))
    deg = np.asarray(AI.sum(axis=1)).ravel()
    return as_csr(sp.diags(1.0 / deg) @ AI)


def normalize_symmetric(graph):
    """``D^{-1/2} A D^{-1/2}`` with ``D`` the degree matrix of ``A``.

    Isolated vertices use ``d^{-1/2} = 0`` and end up with empty rows/columns.
    """
    A = graph.A if isinstance(graph, AffinityGraph) else as_csr(graph)
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    C = A.tocoo()
    # scale factors multiplied first so that S[i, j] and S[j, i] are bitwise equal
    data = C.data * (inv_sqrt[C.row] * inv_sqrt[C.col])
    return as_csr(sp.coo_matrix((data, (C.row, C.col)), shape=A.shape))


def write_edge_csv(path, graph, ids):
    """Debug dump of each undirected edge once as ``src_id,dst_id,weight``."""
    A = sp.triu(graph.A, k=1, format="coo")
    order = np.lexsort((A.col, A.row))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_id", "dst_id", "weight"])
        for t in order:
            w.writerow([ids[A.row[t]], ids[A.col[t]], f"{A.data[t]:.6f}"])
