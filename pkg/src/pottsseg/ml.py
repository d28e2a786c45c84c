"""Maximum marginal likelihood over the coupling, with Bethe free energies.

For each coupling ``K`` on a grid the Gaussian parameters are fitted by EM
with posterior LBP, and the per-pixel log marginal likelihood

    l(K) = (ln Y(d, K, theta) - ln Z(K)) / |V|

is formed from the posterior and prior Bethe log-partitions. The prior
branch is the one with the lower free energy, so ``l`` picks up a slope
jump wherever the prior has a first-order transition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import observation, posterior_lbp, potts_prior
from .cme import as_image, image_graph
from .observation import GaussianParams

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.0, 4.0, 0.02)
REFINE_STEP = 0.002
KINK_FACTOR = 10.0


@dataclass
class MlSweepRow:
    K: float
    loglik: float
    u_post: float
    u_prior: float
    converged: bool
    prior_branch: str = ""
    params: GaussianParams = None

    def as_tuple(self):
        return (self.K, self.loglik, self.u_post, self.u_prior, self.converged)


@dataclass
class MlEstimate:
    K_hat: float
    params: GaussianParams
    labels: np.ndarray
    loglik: float
    kink_detected: bool
    slopes: tuple            # one-sided (left, right) secant slopes at K_hat
    noise: float             # median |second difference| / step on the coarse grid
    residual: float          # u_post - u_prior at K_hat
    K_C: float | None = None
    u_post: float = float("nan")
    u_prior: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "K_hat": self.K_hat,
            "loglik": self.loglik,
            "kink_detected": self.kink_detected,
            "slopes": list(self.slopes),
            "noise": self.noise,
            "residual": self.residual,
            "K_C": self.K_C,
            "u_post": self.u_post,
            "u_prior": self.u_prior,
            "theta": self.params.to_dict(),
        }


@dataclass
class FitResult:
    params: GaussianParams
    state: object
    iterations: int
    converged: bool


class PriorCache:
    """Branch-resolved prior log-partition per coupling, for one image graph.

    On a periodic lattice the translation-invariant reduction is exact, so
    the cache uses it instead of the full graph.
    """

    def __init__(self, graph, q, tol=1e-9, max_iter=20_000):
        self.graph = graph
        self.q = q
        self.tol = tol
        self.max_iter = max_iter
        self.periodic = getattr(graph, "boundary", None) == "periodic"
        self._cache = {}

    def branches(self, K):
        key = float(K)
        if key not in self._cache:
            g = None if self.periodic else self.graph
            self._cache[key] = potts_prior.both_branches(g, self.q, key, self.tol, self.max_iter)
        return self._cache[key]

    def best(self, K):
        dis, ordd = self.branches(K)
        return ordd if ordd.free_energy < dis.free_energy else dis

    def log_partition(self, K):
        return -self.best(K).free_energy * self.graph.n_nodes

    def metastable(self, K, min_gap=0.01):
        """Whether a converged ordered branch, distinct from the disordered one, exists at K."""
        dis, ordd = self.branches(K)
        return (ordd.branch == "ordered" and bool(ordd.converged)
                and abs(ordd.disagreement - dis.disagreement) > min_gap)

    def crossing(self, K_values, tol=1e-5, min_step=2e-3):
        """Coupling where the ordered branch overtakes the disordered one, or None.

        A first-order crossing needs the ordered branch to exist already, as
        a metastable state, at some coupling where the disordered branch
        still wins; in a continuous transition it only appears at the onset
        itself. When the grid is too coarse to show the metastable window,
        the interval before the switch is subdivided down to ``min_step``.
        """
        prev = None
        for K in K_values:
            K = float(K)
            if self.best(K).branch == "ordered":
                if prev is None:
                    return None
                if not self.metastable(prev):
                    if (K - prev) / 4 < min_step:
                        return None
                    inner = np.round(np.linspace(prev, K, 5), 10)
                    return self.crossing(inner, tol, min_step)
                a, b = prev, K
                while b - a > tol:
                    mid = 0.5 * (a + b)
                    if self.best(mid).branch == "ordered":
                        b = mid
                    else:
                        a = mid
                return round(0.5 * (a + b), 10)
            prev = K
        return None


def fit_theta_at_K(pixels, graph, q, K, params, messages=None, tol=1e-6, max_iter=500,
                   lbp_tol=1e-9, lbp_max_iter=10_000, damping=0.0) -> FitResult:
    """EM for the Gaussian parameters at fixed coupling ``K``.

    Alternates posterior LBP with the responsibility-weighted mean and
    covariance update until the parameter drift falls below ``tol``.
    """
    if K < 0:
        raise ValueError("coupling must be non-negative")
    X = np.asarray(pixels, dtype=float).reshape(-1, 3)
    state = None
    for it in range(1, max_iter + 1):
        table = observation.likelihood_table(X, params)
        state = posterior_lbp.solve_posterior_fixed_point(graph, q, K, table, init=messages,
                                                          tol=lbp_tol, max_iter=lbp_max_iter,
                                                          damping=damping)
        messages = state.messages
        new, _ = observation.weighted_mean_cov(X, state.node_marginals, previous=params)
        drift = new.drift(params)
        params = new
        if drift < tol:
            break
    else:
        log.warning("EM at K=%.4g stopped after %d iterations (drift %.3g)", K, max_iter, drift)
        return FitResult(params, _refresh(X, graph, q, K, params, state, lbp_tol, lbp_max_iter,
                                          damping), max_iter, False)
    state = _refresh(X, graph, q, K, params, state, lbp_tol, lbp_max_iter, damping)
    return FitResult(params, state, it, bool(state.converged))


def _refresh(X, graph, q, K, params, state, tol, max_iter, damping):
    table = observation.likelihood_table(X, params)
    return posterior_lbp.solve_posterior_fixed_point(graph, q, K, table, init=state.messages,
                                                     tol=tol, max_iter=max_iter, damping=damping)


def log_marginal_likelihood(pixels, graph, q, K, params, prior: PriorCache | None = None,
                            messages=None, lbp_tol=1e-10):
    """Per-pixel Bethe log marginal likelihood at ``(K, params)``.

    Returns ``(value, posterior_state, prior_report)``.
    """
    prior = prior or PriorCache(graph, q)
    table = observation.likelihood_table(pixels, params)
    state = posterior_lbp.solve_posterior_fixed_point(graph, q, K, table, init=messages, tol=lbp_tol)
    pr = prior.best(K)
    value = (state.bethe_log_partition + pr.free_energy * graph.n_nodes) / graph.n_nodes
    return float(value), state, pr


def _grid(K_grid):
    if K_grid is None:
        lo, hi, step = DEFAULT_GRID
        return np.round(np.arange(lo, hi + 0.5 * step, step), 10)
    K = np.asarray(K_grid, dtype=float).reshape(-1)
    if K.size == 0 or np.any(K < 0) or np.any(np.diff(K) <= 0) or not np.all(np.isfinite(K)):
        raise ValueError("coupling grid must be non-empty, non-negative and strictly ascending")
    return K


def _noise(K, ll, K_C):
    """Median |second difference| / step over uniformly spaced triples away from K_C."""
    vals = []
    for i in range(1, len(K) - 1):
        h1, h2 = K[i] - K[i - 1], K[i + 1] - K[i]
        if abs(h1 - h2) > 1e-9 * max(h1, h2):
            continue
        if K_C is not None and K[i - 1] - h1 <= K_C <= K[i + 1] + h2:
            continue
        vals.append(abs(ll[i + 1] - 2 * ll[i] + ll[i - 1]) / h1)
    return float(np.median(vals)) if vals else 0.0


class _Sweeper:
    def __init__(self, pixels, graph, q, params, fit_kw):
        self.X = pixels
        self.graph = graph
        self.q = q
        self.prior = PriorCache(graph, q)
        self.fit_kw = fit_kw
        self.rows = {}
        self.fits = {}
        self.start = params

    def solve(self, K, params, messages):
        fit = fit_theta_at_K(self.X, self.graph, self.q, K, params, messages, **self.fit_kw)
        pr = self.prior.best(K)
        n = self.graph.n_nodes
        ll = (fit.state.bethe_log_partition + pr.free_energy * n) / n
        ok = bool(fit.converged and pr.converged)
        self.rows[float(K)] = MlSweepRow(float(K), float(ll), fit.state.disagreement,
                                         pr.disagreement, ok, pr.branch, fit.params)
        self.fits[float(K)] = fit
        return fit

    def continuation(self, Ks, params, messages):
        for K in Ks:
            if float(K) in self.rows:
                fit = self.fits[float(K)]
            else:
                fit = self.solve(K, params, messages)
            params, messages = fit.params, fit.state.messages

    def nearest(self, K):
        keys = np.array(sorted(self.rows))
        return self.fits[float(keys[np.argmin(np.abs(keys - K))])]


def sweep(image, q, K_grid=None, boundary="free", seed=0, refine=True, tol=1e-6,
          max_iter=500, lbp_tol=1e-9, damping=0.0):
    """Marginal-likelihood curve over ``K_grid`` and its maximizer.

    Returns ``(rows, estimate)`` with rows sorted by coupling.
    """
    img = as_image(image)
    graph = image_graph(img, boundary)
    q = potts_prior._check_q(q)
    X = img.reshape(-1, 3)
    grid = _grid(K_grid)
    params0, _ = observation.init_params(X, q, seed=seed)
    sw = _Sweeper(X, graph, q, params0, dict(tol=tol, max_iter=max_iter, lbp_tol=lbp_tol,
                                             damping=damping))
    sw.continuation(grid, params0, None)

    K_C = sw.prior.crossing(grid) if len(grid) > 1 else None
    if refine and len(grid) > 1:
        coarse = sorted(sw.rows)
        lls = np.array([sw.rows[k].loglik for k in coarse])
        step = float(np.min(np.diff(grid)))
        centres = [coarse[i] for i in np.argsort(-lls, kind="stable")[:3]]
        if K_C is not None:
            # window anchored on the coarse grid; K_C itself is inserted below
            centres.append(coarse[int(np.argmin(np.abs(np.array(coarse) - K_C)))])
        for c in sorted(set(centres)):
            lo, hi = max(c - step, grid[0]), min(c + step, grid[-1])
            fine = np.round(np.arange(lo, hi + 0.5 * REFINE_STEP, REFINE_STEP), 10)
            if K_C is not None and lo <= K_C <= hi:
                fine = np.unique(np.append(fine, K_C))
            start = sw.nearest(fine[0])
            sw.continuation(fine, start.params, start.state.messages)

    Ks = np.array(sorted(sw.rows))
    rows = [sw.rows[k] for k in Ks]
    ll = np.array([r.loglik for r in rows])
    usable = np.array([r.converged for r in rows])
    if not usable.any():
        raise potts_prior.ConvergenceError("no grid point converged")
    ll_masked = np.where(usable, ll, -np.inf)
    i_hat = int(np.argmax(ll_masked))
    K_hat = float(Ks[i_hat])

    left = (ll[i_hat] - ll[i_hat - 1]) / (Ks[i_hat] - Ks[i_hat - 1]) if i_hat > 0 else float("nan")
    right = (ll[i_hat + 1] - ll[i_hat]) / (Ks[i_hat + 1] - Ks[i_hat]) if i_hat + 1 < len(Ks) else float("nan")
    coarse_K = np.array(grid)
    coarse_ll = np.array([sw.rows[float(k)].loglik for k in coarse_K])
    noise = _noise(coarse_K, coarse_ll, K_C)
    gap = abs(right - left) if np.isfinite(left) and np.isfinite(right) else 0.0
    kink = bool(gap > KINK_FACTOR * noise and gap > 0)

    best = sw.fits[K_hat]
    labels = posterior_lbp.mpm_label(best.state).reshape(img.shape[:2])
    r = sw.rows[K_hat]
    est = MlEstimate(K_hat, best.params, labels, float(ll[i_hat]), kink, (float(left), float(right)),
                     noise, float(r.u_post - r.u_prior), K_C, r.u_post, r.u_prior)
    return rows, est
