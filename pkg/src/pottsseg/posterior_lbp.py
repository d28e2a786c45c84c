"""Loopy BP for the posterior: Potts prior times per-pixel Gaussian likelihoods.

Shares the message engine with the prior, so a likelihood table with
constant rows reproduces the prior results on the same code path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _bp

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000


@dataclass
class PosteriorState:
    """Converged (or last) posterior message configuration and its statistics."""

    messages: np.ndarray         # log-messages, (n_directed, q)
    node_marginals: np.ndarray   # (n, q)
    bethe_log_partition: float   # Bethe estimate of ln Y(d, K, Theta)
    disagreement: float          # mean posterior edge disagreement
    edge_disagreement: np.ndarray
    residual: float
    iterations: int
    converged: bool
    coupling: float
    graph: object = None
    log_lik: np.ndarray = None

    @property
    def prob_messages(self) -> np.ndarray:
        return np.exp(self.messages)

    def edge_marginals(self) -> np.ndarray:
        """Pairwise beliefs, ``(n_edges, q, q)`` indexed ``[e, a_i, a_j]``."""
        return _bp.edge_marginals(self.graph, self.coupling, self.log_lik, self.messages)


def _check_table(graph, q, log_lik):
    table = np.asarray(log_lik, dtype=float)
    if table.shape != (graph.n_nodes, q):
        raise ValueError(f"likelihood table must have shape {(graph.n_nodes, q)}, got {table.shape}")
    if not np.all(np.isfinite(table)):
        raise ValueError("likelihood table has non-finite entries")
    return table


def _check_messages(graph, q, messages):
    if messages is None:
        return _bp.uniform_messages(graph, q)
    arr = np.asarray(messages, dtype=float)
    if arr.shape != (graph.n_directed, q):
        raise ValueError(f"messages must have shape {(graph.n_directed, q)}, got {arr.shape}")
    return arr


def posterior_sweep(graph, q: int, coupling: float, log_lik, messages, damping: float = 0.0):
    """One synchronous update of all posterior messages.

    ``messages`` are probabilities; the returned array is too.
    """
    table = _check_table(graph, q, log_lik)
    probs = _check_messages(graph, q, messages)
    if np.any(probs < 0):
        raise ValueError("messages must be non-negative probabilities")
    with np.errstate(divide="ignore"):
        logm = np.log(probs)
    new, _ = _bp.sweep(graph, float(coupling), table, logm, damping)
    return np.exp(new)


def solve_posterior_fixed_point(graph, q: int, coupling: float, log_lik, init=None,
                                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                                damping: float = 0.0) -> PosteriorState:
    """Run posterior LBP to a fixed point.

    ``init`` is ``None`` (uniform messages) or an array of log-messages,
    typically the ``messages`` of an earlier :class:`PosteriorState`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = float(coupling)
    if not np.isfinite(K) or K < 0:
        raise ValueError(f"coupling must be finite and non-negative, got {coupling!r}")
    table = _check_table(graph, q, log_lik)
    logm = _check_messages(graph, q, None) if init is None else np.array(init, dtype=float)
    if logm.shape != (graph.n_directed, q):
        raise ValueError(f"initial messages must have shape {(graph.n_directed, q)}")
    logm, residual, it = _bp.run(graph, K, table, logm, tol, max_iter, damping)
    if graph.n_directed == 0:
        residual, it = 0.0, 0
    converged = bool(residual < tol)
    if not converged:
        log.warning("posterior LBP not converged at K=%.6g: residual %.3g after %d sweeps",
                    K, residual, it)
    st = _bp.bethe_stats(graph, K, table, logm)
    u = st.disagreement if graph.n_edges else float("nan")
    return PosteriorState(logm, st.node_marginals, st.log_partition, u, st.edge_disagreement,
                          float(residual), it, converged, K, graph, table)


def mpm_label(state) -> np.ndarray:
    """Per-pixel argmax of the node marginals; ties go to the lowest label."""
    marg = state.node_marginals if hasattr(state, "node_marginals") else np.asarray(state)
    return np.argmax(marg, axis=1)
