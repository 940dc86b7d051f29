"""Brute-force reference implementations used as independent test oracles.

Everything here is written with explicit Python loops over dense arrays and
shares no code with the package.
"""
import math

import numpy as np


def dense_product(S, X):
    """``X @ S`` by triple loop."""
    S = np.asarray(S.todense() if hasattr(S, "todense") else S, dtype=float)
    l, n = X.shape
    out = np.zeros((l, n))
    for r in range(l):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += X[r, j] * S[j, i]
            out[r, i] = acc
    return out


def reciprocal_knn(X, k_nn):
    """Dense affinity matrix of the reciprocal kNN graph, by exhaustive comparison."""
    n = len(X)
    V = [np.asarray(x, float) / math.sqrt(sum(v * v for v in x)) for x in X]
    sim = [[sum(a * b for a, b in zip(V[i], V[j])) for j in range(n)] for i in range(n)]
    k_eff = min(k_nn, n - 1)
    nbrs = []
    for i in range(n):
        cands = sorted((j for j in range(n) if j != i), key=lambda j: (-sim[i][j], j))
        nbrs.append(set(cands[:k_eff]))
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and j in nbrs[i] and i in nbrs[j]:
                A[i, j] = max(sim[min(i, j)][max(i, j)], 0.0)
    return A


def row_stochastic(A):
    A = np.asarray(A, float)
    n = len(A)
    M = A + np.eye(n)
    out = np.zeros_like(M)
    for i in range(n):
        d = sum(M[i])
        for j in range(n):
            out[i, j] = M[i, j] / d
    return out


def symmetric(A):
    A = np.asarray(A, float)
    n = len(A)
    deg = [sum(A[i]) for i in range(n)]
    out = np.zeros_like(A)
    for i in range(n):
        for j in range(n):
            if deg[i] > 0 and deg[j] > 0:
                out[i, j] = A[i, j] / math.sqrt(deg[i] * deg[j])
    return out


def gcn_scores(theta1, theta2, A_norm, X, mask=None):
    """Direct evaluation of sigmoid(theta2^T relu(theta1^T V A) A), V = X^T."""
    A = np.asarray(A_norm.todense() if hasattr(A_norm, "todense") else A_norm, float)
    V = np.asarray(X, float).T
    H = np.maximum(theta1.T.dot(V).dot(A), 0.0)
    if mask is not None:
        H = H * mask
    a = theta2.T.dot(H).dot(A)[0]
    return np.array([1.0 / (1.0 + math.exp(-v)) for v in a])


def gcn_bce(outputs, k, lam):
    n = len(outputs)
    total = 0.0
    for i in range(k):
        total -= math.log(outputs[i]) / k
    for i in range(k, n):
        total -= lam * math.log(1.0 - outputs[i]) / (n - k)
    return total


def weighted_mean(X, w):
    num = np.zeros(X.shape[1])
    den = 0.0
    for x, r in zip(X, w):
        num += r * x
        den += r
    return num / den


def cosine_ce(W, X, labels, rel, s):
    """Scalar loop over the relevance-weighted, class-normalized cosine cross-entropy."""
    K = W.shape[1]
    totals = [0.0] * K
    for y, r in zip(labels, rel):
        totals[y] += r
    loss = 0.0
    for x, y, r in zip(X, labels, rel):
        xn = x / math.sqrt(sum(v * v for v in x))
        logits = []
        for c in range(K):
            w = W[:, c]
            logits.append(s * sum(a * b for a, b in zip(w / math.sqrt(sum(v * v for v in w)), xn)))
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        loss -= (r / totals[y]) * (logits[y] - lse)
    return loss


def finite_diff(f, T, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``T`` (mutated in place)."""
    G = np.zeros_like(T)
    for idx in np.ndindex(T.shape):
        old = T[idx]
        T[idx] = old + h
        up = f()
        T[idx] = old - h
        down = f()
        T[idx] = old
        G[idx] = (up - down) / (2 * h)
    return G


def rel_error(a, b, floor=1e-6):
    """Elementwise relative error with an absolute floor for tiny entries."""
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
