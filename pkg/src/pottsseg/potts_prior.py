"""Loopy BP for the field-free Potts prior.

Covers message fixed points, the Bethe free energy per pixel, the
coupling-for-disagreement solver and the phase-transition analyzer.

Passing ``graph=None`` selects the homogeneous reduction: the infinite
4-regular lattice (equivalently a periodic grid with translation-invariant
messages), where every message equals one q-vector and an update reads
three incoming copies of it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _bp

log = logging.getLogger(__name__)

LATTICE_DEGREE = 4
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
ORDERED_BIAS = 0.9
# branch detection: node marginals farther than this from uniform are ordered
ORDER_THRESHOLD = 1e-6


class ConvergenceError(RuntimeError):
    """A fixed-point iteration or root search failed to converge."""


@dataclass
class PriorFixedPointReport:
    messages: np.ndarray   # log-messages: (n_directed, q), or (q,) for the reduction
    free_energy: float     # f = -ln Z / |V|
    disagreement: float    # u
    residual: float
    branch: str            # "disordered" | "ordered"
    iterations: int
    converged: bool
    coupling: float = float("nan")

    @property
    def prob_messages(self) -> np.ndarray:
        return np.exp(self.messages)


def _check_q(q):
    if int(q) != q or q < 2:
        raise ValueError(f"number of labels must be an integer >= 2, got {q!r}")
    return int(q)


def _check_coupling(K):
    K = float(K)
    if not math.isfinite(K) or K < 0:
        raise ValueError(f"coupling must be finite and non-negative, got {K!r}")
    return K


def disordered_disagreement(q: int, K: float) -> float:
    """Disagreement of the uniform-message fixed point; identical on every graph."""
    return (q - 1) / (math.exp(0.5 * K) + q - 1)


# --------------------------------------------------------------------------
# homogeneous reduction


def _homog_sweep(q, K, loglam, damping=0.0):
    cav = (LATTICE_DEGREE - 1) * loglam
    p = np.exp(cav - cav.max())
    new = p.sum() + np.expm1(0.5 * K) * p
    new /= new.sum()
    old = np.exp(loglam)
    if damping:
        new = (1.0 - damping) * new + damping * old
    return np.log(new), float(np.max(np.abs(new - old)))


def _homog_stats(q, K, loglam):
    """(f, u) per pixel for a translation-invariant message on the 4-regular lattice."""
    z = LATTICE_DEGREE
    node_log_z = logsumexp(z * loglam)
    cav = (z - 1) * loglam
    A = np.exp(cav - cav.max())
    sa = A.sum()
    same = float(np.dot(A, A))
    total = sa * sa + np.expm1(0.5 * K) * same
    edge_log_z = 2 * cav.max() + math.log(total)
    u = (sa * sa - same) / total
    # |E| = 2|V| on the 4-regular lattice
    f = -(0.5 * z * edge_log_z + (1 - z) * node_log_z)
    marg = np.exp(z * loglam - node_log_z)
    return float(f), float(u), marg


# --------------------------------------------------------------------------
# sweeps and fixed points


def prior_sweep(graph, q, coupling, messages, damping=0.0):
    """One Jacobi update of every prior message.

    ``messages`` are probabilities, shape ``(n_directed, q)`` (or ``(q,)``
    with ``graph=None``). Returns normalized probabilities of the same shape.
    """
    q = _check_q(q)
    K = _check_coupling(coupling)
    logm = _log_probs(messages)
    if graph is None:
        new, _ = _homog_sweep(q, K, logm, damping)
    else:
        new, _ = _bp.sweep(graph, K, np.zeros((graph.n_nodes, q)), logm, damping)
    return np.exp(new)


def _initial_messages(graph, q, init, bias):
    """Start messages as normalized logs; arrays passed here are log-messages."""
    if isinstance(init, str):
        if init == "uniform":
            row = np.full(q, -math.log(q))
        elif init == "ordered":
            row = np.full(q, (1.0 - bias) / (q - 1))
            row[0] = bias
            row = np.log(row)
        else:
            raise ValueError(f"unknown init {init!r}")
        return row.copy() if graph is None else np.tile(row, (graph.n_directed, 1))
    logm = np.array(init, dtype=float)
    expected = (q,) if graph is None else (graph.n_directed, q)
    if logm.shape != expected:
        raise ValueError(f"initial messages must have shape {expected}, got {logm.shape}")
    return logm - logsumexp(logm, axis=-1, keepdims=True)


def _log_probs(messages):
    arr = np.asarray(messages, dtype=float)
    if np.any(arr < 0):
        raise ValueError("messages must be non-negative probabilities")
    with np.errstate(divide="ignore"):
        return np.log(arr)


def _classify(marginals, q):
    dev = np.max(np.abs(np.asarray(marginals) - 1.0 / q))
    return "ordered" if dev > ORDER_THRESHOLD else "disordered"


def _stats(graph, q, K, logm):
    if graph is None:
        return _homog_stats(q, K, logm)
    st = _bp.bethe_stats(graph, K, np.zeros((graph.n_nodes, q)), logm)
    return -st.log_partition / graph.n_nodes, st.disagreement, st.node_marginals


def _solve_one(graph, q, K, init, tol, max_iter, damping, bias):
    logm = _initial_messages(graph, q, init, bias)
    residual, it = np.inf, 0
    if graph is None:
        while it < max_iter:
            logm, residual = _homog_sweep(q, K, logm, damping)
            it += 1
            if residual < tol:
                break
    else:
        zeros = np.zeros((graph.n_nodes, q))
        logm, residual, it = _bp.run(graph, K, zeros, logm, tol, max_iter, damping)
    f, u, marg = _stats(graph, q, K, logm)
    converged = bool(residual < tol)
    if not converged:
        log.warning("prior LBP not converged at K=%.6g: residual %.3g after %d sweeps", K, residual, it)
    return PriorFixedPointReport(logm, float(f), float(u), float(residual), _classify(marg, q), it, converged, K)


def solve_prior_fixed_point(graph, q, coupling, init="uniform", tol=DEFAULT_TOL,
                            max_iter=DEFAULT_MAX_ITER, damping=0.0, bias=ORDERED_BIAS,
                            resolve_branch=False):
    """Converge prior LBP at a fixed coupling.

    ``init`` is ``"uniform"``, ``"ordered"`` (mass ``bias`` on label 0) or an
    array of message probabilities.

    With ``resolve_branch=True`` both the uniform and the ordered start are
    run and the lower free energy wins (ties go to the disordered one).
    """
    q = _check_q(q)
    K = _check_coupling(coupling)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if resolve_branch:
        dis, ordd = both_branches(graph, q, K, tol, max_iter, damping, bias)
        return ordd if ordd.free_energy < dis.free_energy else dis
    if not isinstance(init, str):
        init = _log_probs(init)
    return _solve_one(graph, q, K, init, tol, max_iter, damping, bias)


def both_branches(graph, q, K, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=0.0,
                  bias=ORDERED_BIAS):
    """Fixed points reached from the uniform and from the ordered start."""
    dis = _solve_one(graph, q, K, "uniform", tol, max_iter, damping, bias)
    ordd = _solve_one(graph, q, K, "ordered", tol, max_iter, damping, bias)
    return dis, ordd


def prior_free_energy(graph, q, coupling, **kw):
    """Branch-resolved Bethe free energy per pixel."""
    return solve_prior_fixed_point(graph, q, coupling, resolve_branch=True, **kw).free_energy


# --------------------------------------------------------------------------
# coupling for a target disagreement


@dataclass
class AlphaSolution:
    alpha: float
    disagreement: float    # prior disagreement reached at alpha
    messages: np.ndarray   # log-messages of the final prior fixed point
    free_energy: float
    iterations: int
    method: str
    converged: bool


def _check_u(q, u):
    u = float(u)
    top = (q - 1) / q
    if not (u > 0):
        raise ValueError(f"disagreement must be positive, got {u!r} (the coupling diverges at 0)")
    if u > top + 1e-15:
        raise ValueError(f"disagreement {u!r} exceeds the uniform-prior value {top!r}")
    return u


def _inner_tol(tol):
    return max(min(DEFAULT_TOL, 0.01 * tol), 1e-14)


def _multiplicative(graph, q, u, tol, K_start, max_iter, init, bias):
    """Alternate one message sweep with ``K <- K * (u_now / u) ** (1/4)``."""
    K = float(K_start)
    logm = _initial_messages(graph, q, init, bias)
    zeros = None if graph is None else np.zeros((graph.n_nodes, q))
    eps = _inner_tol(tol)
    for it in range(1, max_iter + 1):
        if graph is None:
            logm, residual = _homog_sweep(q, K, logm)
            _, u_now, _ = _homog_stats(q, K, logm)
        else:
            logm, residual = _bp.sweep(graph, K, zeros, logm)
            u_now = _bp.bethe_stats(graph, K, zeros, logm).disagreement
        K_new = K * (u_now / u) ** 0.25
        step = abs(K_new - K)
        K = K_new
        if not math.isfinite(K) or K > 1e3:
            return K, logm, it, False
        if step < eps and residual < eps:
            return K, logm, it, True
    return K, logm, max_iter, False


def _branch_u(graph, q, K, init, tol, max_iter, bias):
    return _solve_one(graph, q, K, init, tol, max_iter, 0.0, bias)


def _bisect_branch(graph, q, u, lo, hi, init, tol, max_iter, bias):
    """Bisection for ``u_branch(K) = u`` where ``u_branch`` is non-increasing."""
    eps = _inner_tol(tol)
    rep = None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        rep = _branch_u(graph, q, mid, init, eps, max_iter, bias)
        if rep.disagreement > u:
            lo = mid
        else:
            hi = mid
    K = 0.5 * (lo + hi)
    rep = _branch_u(graph, q, K, init, eps, max_iter, bias)
    return K, rep


def _uniform_is_stable(graph, q, K, max_iter, kick=1e-3):
    rep = _solve_one(graph, q, K, "ordered", 1e-12, max_iter, 0.0, 1.0 / q + kick)
    return rep.branch == "disordered"


def _bisection(graph, q, u, tol, max_iter, bias):
    # uniform messages are a fixed point on every graph: closed-form bracket
    K_dis = 2.0 * math.log((q - 1) * (1.0 - u) / u)
    if _uniform_is_stable(graph, q, K_dis + tol, max_iter):
        lo, hi = max(K_dis - 1.0, 0.0), K_dis + 1.0
        K, rep = _bisect_branch(graph, q, u, lo, hi, "uniform", tol, max_iter, bias)
        return K, rep
    # ordered branch: u_branch(0) = top > u >= u_branch(K_dis)
    K, rep = _bisect_branch(graph, q, u, 0.0, K_dis, "ordered", tol, max_iter, bias)
    if rep.branch != "ordered" or abs(rep.disagreement - u) > max(tol, 1e-8) * 10:
        raise ConvergenceError(
            f"disagreement {u:.6g} is not reachable on a stable fixed-coupling branch "
            f"(bisection stalled at K={K:.6g} with u={rep.disagreement:.6g})")
    return K, rep


def solve_alpha(q, u, method="paper_multiplicative", tol=1e-8, graph=None, K_start=1.0,
                max_iter=20_000, init="ordered", bias=ORDERED_BIAS) -> AlphaSolution:
    """Coupling whose prior disagreement equals ``u``, with diagnostics.

    ``paper_multiplicative`` runs the joint message / coupling iteration from
    the ordered start and falls back to bisection if it stalls. It follows
    the full constrained curve, including the segment that is unstable at
    fixed coupling. ``bisection`` only reaches stable fixed-coupling branches.
    """
    q = _check_q(q)
    u = _check_u(q, u)
    if tol <= 0:
        raise ValueError("tol must be positive")
    top = (q - 1) / q
    if abs(u - top) <= 1e-15:
        rep = _solve_one(graph, q, 0.0, "uniform", DEFAULT_TOL, 1, 0.0, bias)
        return AlphaSolution(0.0, top, rep.messages, rep.free_energy, 0, "exact", True)

    if method == "paper_multiplicative":
        if K_start <= 0:
            raise ValueError("K_start must be positive for the multiplicative rule")
        K, logm, it, ok = _multiplicative(graph, q, u, tol, K_start, max_iter, init, bias)
        if ok:
            f, u_now, _ = _stats(graph, q, K, logm)
            if abs(u_now - u) < tol:
                return AlphaSolution(K, float(u_now), logm, float(f), it, method, True)
        log.info("multiplicative rule stalled for u=%.6g (K=%.6g); falling back to bisection", u, K)
        method_used = "bisection_fallback"
    elif method == "bisection":
        method_used = "bisection"
    else:
        raise ValueError(f"unknown method {method!r}")
    K, rep = _bisection(graph, q, u, tol, max_iter, bias)
    return AlphaSolution(K, rep.disagreement, rep.messages, rep.free_energy, rep.iterations,
                         method_used, abs(rep.disagreement - u) < max(tol, 1e-8) * 10)


def solve_alpha_for_u(q, u, method="paper_multiplicative", tol=1e-8, graph=None, **kw) -> float:
    """Coupling ``alpha(u)`` such that the prior disagreement equals ``u``."""
    sol = solve_alpha(q, u, method=method, tol=tol, graph=graph, **kw)
    if not sol.converged:
        raise ConvergenceError(f"alpha(u) did not converge for q={q}, u={u}")
    return sol.alpha


# --------------------------------------------------------------------------
# phase-transition analyzer


@dataclass
class TransitionResult:
    q: int
    K_C: float | None
    kind: str                  # "first_order" | "none_detected"
    onset: float | None = None  # coupling where the ordered branch appears
    disagreement_jump: float = 0.0

    def as_dict(self):
        return {"q": self.q, "K_C": self.K_C, "kind": self.kind, "onset": self.onset,
                "disagreement_jump": self.disagreement_jump}


def _ordered_wins(graph, q, K, tol, max_iter):
    dis, ordd = both_branches(graph, q, K, tol, max_iter)
    wins = ordd.branch == "ordered" and ordd.free_energy <= dis.free_energy + 1e-13
    return wins, dis, ordd


def uniform_growth_factor(q, K, graph=None, eps=1e-6, n_power=200):
    """Linear growth rate of a symmetry-breaking perturbation of uniform messages.

    Values above 1 mean the disordered fixed point is unstable under the
    synchronous update. The linearization uses a symmetric difference; on a
    graph the rate comes from power iteration.
    """
    q = _check_q(q)
    v = np.full(q, -1.0 / (q - 1))
    v[0] = 1.0
    if graph is None:
        base = np.full(q, -math.log(q))
        plus, _ = _homog_sweep(q, K, base + eps * v)
        minus, _ = _homog_sweep(q, K, base - eps * v)
        return float(np.linalg.norm(plus - minus) / np.linalg.norm(2 * eps * v))
    zeros = np.zeros((graph.n_nodes, q))
    base = np.full((graph.n_directed, q), -math.log(q))
    pert = eps * np.tile(v, (graph.n_directed, 1))
    rate = 0.0
    for _ in range(n_power):
        plus, _ = _bp.sweep(graph, K, zeros, base + pert)
        minus, _ = _bp.sweep(graph, K, zeros, base - pert)
        dev = 0.5 * (plus - minus)
        norm = np.linalg.norm(dev)
        rate = norm / np.linalg.norm(pert)
        if norm == 0:
            break
        pert = dev * (eps * math.sqrt(pert.size) / norm)
    return float(rate)


def instability_coupling(q, graph=None, bracket=(0.0, 6.0), tol=1e-9):
    """Coupling where the uniform fixed point turns unstable, or None inside ``bracket``."""
    lo, hi = bracket
    if uniform_growth_factor(q, hi, graph) < 1.0:
        return None
    if uniform_growth_factor(q, lo, graph) >= 1.0:
        return float(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if uniform_growth_factor(q, mid, graph) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def transition_point(q, bracket=(0.0, 6.0), tol=1e-6, graph=None, scan_step=0.05,
                     margin=0.02, max_iter=DEFAULT_MAX_ITER, jump_threshold=1e-3) -> TransitionResult:
    """Locate a first-order crossing of the disordered and ordered free energies.

    The ordered branch is searched below the coupling where the uniform
    fixed point turns unstable. If it already wins there the crossing is
    bracketed and bisected, giving ``first_order`` with the disagreement
    jump. Otherwise the symmetry breaking is continuous: ``none_detected``,
    with ``onset`` set to the instability coupling.
    """
    q = _check_q(q)
    lo, hi = map(float, bracket)
    if not (0.0 <= lo < hi <= 6.0):
        raise ValueError(f"bracket must lie within [0, 6], got {bracket!r}")
    onset = instability_coupling(q, graph, (lo, hi))
    top = hi if onset is None else onset - margin
    eps = 1e-11
    prev, first = None, None
    for K in np.arange(lo, top + 1e-12, scan_step):
        if _ordered_wins(graph, q, K, eps, max_iter)[0]:
            first = float(K)
            break
        prev = float(K)
    if first is None and onset is not None and top > lo:
        if _ordered_wins(graph, q, top, eps, max_iter)[0]:
            first = top
    if first is None or prev is None:
        return TransitionResult(q, None, "none_detected", onset=onset)
    a, b = prev, first
    while b - a > tol:
        mid = 0.5 * (a + b)
        if _ordered_wins(graph, q, mid, eps, max_iter)[0]:
            b = mid
        else:
            a = mid
    _, dis_b, ord_b = _ordered_wins(graph, q, b, eps, max_iter)
    jump = float(dis_b.disagreement - ord_b.disagreement)
    if jump > jump_threshold:
        return TransitionResult(q, 0.5 * (a + b), "first_order", onset=onset, disagreement_jump=jump)
    return TransitionResult(q, None, "none_detected", onset=onset, disagreement_jump=jump)


def edge_density(graph):
    """``|E| / |V|``; 2 for the homogeneous lattice."""
    return 0.5 * LATTICE_DEGREE if graph is None else graph.n_edges / graph.n_nodes


def free_energy_curve(q, K_grid, graph=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Rows ``(K, f, dfdK, u, branch)`` along an ascending coupling grid.

    ``dfdK`` uses the stationary-point identity ``-(|E| / 2|V|) (1 - u)``.
    """
    q = _check_q(q)
    K_grid = np.asarray(K_grid, dtype=float)
    if np.any(K_grid < 0) or np.any(np.diff(K_grid) < 0):
        raise ValueError("coupling grid must be non-negative and ascending")
    ratio = edge_density(graph)
    rows = []
    for K in K_grid:
        rep = solve_prior_fixed_point(graph, q, K, tol=tol, max_iter=max_iter, resolve_branch=True)
        rows.append((float(K), rep.free_energy, -0.5 * ratio * (1.0 - rep.disagreement),
                     rep.disagreement, rep.branch))
    return rows


def alpha_curve(q, u_grid, graph=None, tol=1e-8, method="paper_multiplicative"):
    """Rows ``(u, alpha, f)``; grid points outside ``(0, (q-1)/q]`` are skipped."""
    q = _check_q(q)
    rows = []
    K_start = 1.0
    for u in np.asarray(u_grid, dtype=float):
        try:
            _check_u(q, u)
        except ValueError as exc:
            log.warning("skipping u=%g: %s", u, exc)
            continue
        sol = solve_alpha(q, u, method=method, tol=tol, graph=graph, K_start=K_start)
        if not sol.converged:
            raise ConvergenceError(f"alpha(u) did not converge at u={u}")
        rows.append((float(u), sol.alpha, sol.free_energy))
        if sol.alpha > 0:
            K_start = sol.alpha
    return rows
