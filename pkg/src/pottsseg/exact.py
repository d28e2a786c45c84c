"""Exact partition functions and marginals for small graphs.

Ground truth for the message-passing code: brute-force enumeration over
all ``q ** n`` labelings, and forward/backward transfer matrices on chains.
Both use the pairwise factor ``exp((K/2) delta)`` and an optional per-node
log-likelihood table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_STATES = 2 ** 24
_BLOCK = 2 ** 16


@dataclass
class ExactResult:
    log_partition: float
    node_marginals: np.ndarray   # (n, q)
    edge_marginals: np.ndarray   # (n_edges, q, q), indexed [e, a_i, a_j]

    @property
    def edge_disagreement(self) -> np.ndarray:
        return 1.0 - np.einsum("eaa->e", self.edge_marginals)

    @property
    def disagreement(self) -> float:
        return float(np.mean(self.edge_disagreement))


def _log_table(n, q, log_lik):
    if log_lik is None:
        return np.zeros((n, q))
    table = np.asarray(log_lik, dtype=float)
    if table.shape != (n, q):
        raise ValueError(f"log-likelihood table must have shape {(n, q)}, got {table.shape}")
    return table


def enumerate_states(graph, q: int, K: float, log_lik=None) -> ExactResult:
    """Sum over every labeling of ``graph`` (at most ``2**24`` states)."""
    n = graph.n_nodes
    if float(q) ** n > MAX_STATES:
        raise ValueError(f"{q}**{n} states exceed the enumeration cap of {MAX_STATES}")
    table = _log_table(n, q, log_lik)
    edges = graph.edges
    n_states = q ** n
    powers = q ** np.arange(n - 1, -1, -1, dtype=np.int64)

    # running log-sum-exp with one shared shift, rescaled when it grows
    shift = -np.inf
    total = 0.0
    node_acc = np.zeros((n, q))
    edge_acc = np.zeros((len(edges), q, q))
    node_idx = np.arange(n)
    for start in range(0, n_states, _BLOCK):
        idx = np.arange(start, min(start + _BLOCK, n_states), dtype=np.int64)
        conf = (idx[:, None] // powers[None, :]) % q
        logw = table[node_idx[None, :], conf].sum(axis=1)
        if len(edges):
            same = conf[:, edges[:, 0]] == conf[:, edges[:, 1]]
            logw = logw + 0.5 * K * same.sum(axis=1)
        m = logw.max()
        if m > shift:
            scale = np.exp(shift - m) if np.isfinite(shift) else 0.0
            total *= scale
            node_acc *= scale
            edge_acc *= scale
            shift = m
        w = np.exp(logw - shift)
        total += w.sum()
        for i in range(n):
            node_acc[i] += np.bincount(conf[:, i], weights=w, minlength=q)
        for e, (i, j) in enumerate(edges):
            edge_acc[e] += np.bincount(conf[:, i] * q + conf[:, j], weights=w,
                                       minlength=q * q).reshape(q, q)
    return ExactResult(float(shift + np.log(total)), node_acc / total, edge_acc / total)


def transfer_matrix_chain(n: int, q: int, K: float, log_lik=None) -> ExactResult:
    """Exact quantities on the path ``0 - 1 - ... - (n-1)``.

    Forward and backward vectors are renormalized at every step and the
    scale factors are accumulated in log space.
    """
    if n < 1:
        raise ValueError("chain needs at least one node")
    table = _log_table(n, q, log_lik)
    T = np.exp(0.5 * K * np.eye(q))
    phi_shift = table.max(axis=1)
    phi = np.exp(table - phi_shift[:, None])

    fwd = np.empty((n, q))
    log_scale = float(phi_shift.sum())
    v = phi[0].copy()
    for i in range(n):
        if i:
            v = (fwd[i - 1] @ T) * phi[i]
        s = v.sum()
        log_scale += np.log(s)
        fwd[i] = v / s

    bwd = np.empty((n, q))
    bwd[-1] = 1.0 / q
    for i in range(n - 2, -1, -1):
        v = T @ (phi[i + 1] * bwd[i + 1])
        bwd[i] = v / v.sum()

    node = fwd * bwd
    node /= node.sum(axis=1, keepdims=True)
    edge = np.empty((max(n - 1, 0), q, q))
    for i in range(n - 1):
        P = fwd[i][:, None] * T * (phi[i + 1] * bwd[i + 1])[None, :]
        edge[i] = P / P.sum()
    return ExactResult(log_scale, node, edge)

