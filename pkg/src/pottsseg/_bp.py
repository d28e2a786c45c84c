"""Log-domain sum-product engine for Potts models on a Graph.

The pairwise factor is ``exp((K/2) * delta(a_i, a_j))``. Single-site
factors enter as a log table of shape ``(n_nodes, q)``; the prior is the
special case of an all-zero table. Messages are normalized
log-probabilities of shape ``(n_directed, q)``.

Internally every array is handled label-major, ``(q, N)``, so the work runs
along the long axis. Results are returned as transposed views, which keeps
the public ``(N, q)`` shape and lets the next call skip the copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def uniform_messages(graph, q: int) -> np.ndarray:
    return np.full((q, graph.n_directed), -np.log(q)).T


def biased_messages(graph, q: int, bias: float = 0.9, label: int = 0) -> np.ndarray:
    """Every message puts mass ``bias`` on ``label``, the rest spread evenly."""
    row = np.full(q, (1.0 - bias) / (q - 1))
    row[label] = bias
    return np.repeat(np.log(row)[:, None], graph.n_directed, axis=1).T


def _lm(a) -> np.ndarray:
    """Label-major contiguous copy or view of an ``(N, q)`` array."""
    return np.ascontiguousarray(np.asarray(a, dtype=float).T)


def _fields(graph, phi_t, m_t):
    """Label-major node fields ``log phi_i + sum_k log m_{k->i}``, fixed order."""
    ext = np.concatenate([m_t, np.zeros((m_t.shape[0], 1))], axis=1)
    acc = phi_t.copy()
    for s in range(graph.in_slots.shape[1]):
        acc += np.take(ext, graph.in_slots[:, s], axis=1)
    return acc


def _logsumexp0(a):
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m).sum(axis=0))


def node_fields(graph, log_phi: np.ndarray, logm: np.ndarray) -> np.ndarray:
    return _fields(graph, _lm(log_phi), _lm(logm)).T


def sweep(graph, K: float, log_phi: np.ndarray, logm: np.ndarray, damping: float = 0.0):
    """One synchronous update of every message.

    Returns ``(new_logm, residual)`` with the residual measured as the
    max-norm change of the messages in probability space.
    """
    if graph.n_directed == 0:
        return logm, 0.0
    m_t = _lm(logm)
    field = _fields(graph, _lm(log_phi), m_t)
    # cavity at the sender j of j->i excludes the reverse message i->j
    p = np.take(field, graph.src, axis=1)
    p -= np.take(m_t, graph.reverse, axis=1)
    p -= p.max(axis=0)
    np.exp(p, out=p)
    # sum_z exp(K/2 delta(x,z)) p(z) = sum(p) + (e^{K/2} - 1) p(x)
    total = p.sum(axis=0)
    p *= np.expm1(0.5 * K)
    p += total
    p /= p.sum(axis=0)
    old = np.exp(m_t)
    if damping:
        p *= 1.0 - damping
        p += damping * old
    old -= p
    np.abs(old, out=old)
    residual = float(old.max())
    with np.errstate(divide="ignore"):
        np.log(p, out=p)
    return p.T, residual


@dataclass
class BetheStats:
    """Normalization constants and expectations at a message configuration."""

    node_log_z: np.ndarray      # ln Z_i
    edge_log_z: np.ndarray      # ln Z_ij
    node_marginals: np.ndarray  # (n, q)
    edge_disagreement: np.ndarray  # (n_edges,), 1 - P(a_i == a_j)
    log_partition: float        # Bethe ln Z

    @property
    def disagreement(self) -> float:
        return float(np.mean(self.edge_disagreement))


def _edge_terms(graph, field, m_t):
    # cavity of each endpoint with respect to the other: i -> j is 2e, j -> i is 2e + 1
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    a = field[:, i] - m_t[:, 1::2]
    b = field[:, j] - m_t[:, 0::2]
    amax = a.max(axis=0)
    bmax = b.max(axis=0)
    return np.exp(a - amax), np.exp(b - bmax), amax + bmax


def bethe_stats(graph, K: float, log_phi: np.ndarray, logm: np.ndarray) -> BetheStats:
    m_t = _lm(logm)
    field = _fields(graph, _lm(log_phi), m_t)
    node_log_z = _logsumexp0(field)
    node_marg = np.exp(field - node_log_z).T
    if graph.n_edges:
        A, B, shift = _edge_terms(graph, field, m_t)
        sa, sb = A.sum(axis=0), B.sum(axis=0)
        same = (A * B).sum(axis=0)
        total = sa * sb + np.expm1(0.5 * K) * same
        edge_log_z = shift + np.log(total)
        edge_dis = (sa * sb - same) / total
    else:
        edge_log_z = np.zeros(0)
        edge_dis = np.zeros(0)
    log_z = float(edge_log_z.sum() + np.dot(1 - graph.degree, node_log_z))
    return BetheStats(node_log_z, edge_log_z, node_marg, edge_dis, log_z)


def edge_marginals(graph, K: float, log_phi: np.ndarray, logm: np.ndarray) -> np.ndarray:
    """Pairwise beliefs, shape ``(n_edges, q, q)``, indexed ``[e, a_i, a_j]``."""
    m_t = _lm(logm)
    field = _fields(graph, _lm(log_phi), m_t)
    A, B, _ = _edge_terms(graph, field, m_t)
    q = A.shape[0]
    P = A.T[:, :, None] * B.T[:, None, :] * np.exp(0.5 * K * np.eye(q))[None]
    return P / P.sum(axis=(1, 2), keepdims=True)


def run(graph, K, log_phi, logm, tol=1e-9, max_iter=10_000, damping=0.0):
    """Iterate :func:`sweep` until the residual drops below ``tol``."""
    residual = np.inf
    it = 0
    log_phi = _lm(log_phi).T  # converted once, reused by every sweep
    while it < max_iter:
        logm, residual = sweep(graph, K, log_phi, logm, damping)
        it += 1
        if residual < tol:
            break
    return logm, residual, it
