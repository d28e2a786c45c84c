"""Conditional maximum-entropy estimation of the disagreement rate and colours.

The outer loop alternates two steps until the disagreement rate and the
Gaussian parameters stop moving:

* solve the prior coupling ``alpha(u)`` for the current disagreement ``u``;
* run posterior LBP at that coupling, re-estimate the Gaussian parameters
  from the node marginals and take the posterior edge disagreement as the
  new ``u``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import observation, posterior_lbp, potts_prior
from .grid import BOUNDARIES, build_grid
from .observation import GaussianParams

log = logging.getLogger(__name__)

U_MARGIN = 0.01


@dataclass
class CmeConfig:
    q: int = 2
    boundary: str = "free"
    alpha_tol: float = 1e-8
    lbp_tol: float = 1e-9
    lbp_max_iter: int = 10_000
    outer_tol: float = 1e-5
    max_outer: int = 200
    damping: float = 0.0
    seed: int = 0

    def validate(self) -> "CmeConfig":
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"number of labels must be an integer >= 2, got {self.q!r}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        for name in ("alpha_tol", "lbp_tol", "outer_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.lbp_max_iter < 1:
            raise ValueError("iteration caps must be at least 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRow:
    t: int
    u: float          # disagreement fed into the coupling solve
    alpha: float
    u_post: float     # posterior disagreement after the update
    residual: float   # max(|du|, parameter drift)


@dataclass
class EstimateReport:
    u_hat: float
    alpha_hat: float
    params: GaussianParams
    labels: np.ndarray        # (height, width)
    trace: list = field(default_factory=list)
    converged: bool = False
    empty_labels: np.ndarray = None
    config: CmeConfig = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "u_hat": self.u_hat,
            "alpha_hat": self.alpha_hat,
            "theta": self.params.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "config": self.config.to_dict() if self.config is not None else None,
        }


def as_image(image) -> np.ndarray:
    """Validate an ``(height, width, 3)`` float image."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must have shape (height, width, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image is empty")
    if not np.all(np.isfinite(img)):
        raise ValueError("image has non-finite pixel values")
    return img


def image_graph(image, boundary="free"):
    img = as_image(image)
    h, w = img.shape[:2]
    g = build_grid(w, h, boundary)
    if g.n_edges == 0:
        raise ValueError("image has no neighbouring pixels, the disagreement rate is undefined")
    return g


def clip_u(q, u):
    return float(np.clip(u, U_MARGIN, (q - 1) / q - U_MARGIN))


def step2_solve_alpha(q, u, K_start=1.0, graph=None, tol=1e-8):
    """Coupling whose prior disagreement on ``graph`` equals ``u``.

    The message-coupling iteration restarts from the ordered messages each
    call; only the coupling is carried over.
    """
    sol = potts_prior.solve_alpha(q, u, method="paper_multiplicative", tol=tol, graph=graph,
                                  K_start=max(float(K_start), 1e-3))
    if not sol.converged:
        raise potts_prior.ConvergenceError(f"alpha(u) did not converge for u={u:.6g}")
    return sol.alpha


def step3_update(pixels, graph, q, coupling, params, messages=None, tol=1e-9,
                 max_iter=10_000, damping=0.0):
    """Posterior LBP at fixed coupling, then the parameter and disagreement update.

    Returns ``(params', u', state, empty)``.
    """
    table = observation.likelihood_table(pixels, params)
    state = posterior_lbp.solve_posterior_fixed_point(graph, q, coupling, table, init=messages,
                                                      tol=tol, max_iter=max_iter, damping=damping)
    new_params, empty = observation.weighted_mean_cov(pixels, state.node_marginals, previous=params)
    return new_params, state.disagreement, state, empty


def run_cme(image, config: CmeConfig | None = None,
            initial_params: GaussianParams | None = None) -> EstimateReport:
    """Estimate ``u``, ``alpha(u)``, the colour parameters and the labeling.

    Without ``initial_params`` the start comes from seeded colour
    clustering; with them, the initial labels are the per-pixel most likely
    labels.
    """
    config = (config or CmeConfig()).validate()
    img = as_image(image)
    graph = image_graph(img, config.boundary)
    q = int(config.q)
    pixels = img.reshape(-1, 3)

    if initial_params is None:
        params, labels0 = observation.init_params(pixels, q, seed=config.seed)
    else:
        params = initial_params.copy()
        if params.n_labels != q:
            raise ValueError(f"initial parameters have {params.n_labels} labels, expected {q}")
        labels0 = np.argmax(observation.likelihood_table(pixels, params), axis=1)
    u = clip_u(q, graph.disagreement(labels0))
    K = 1.0
    messages = None
    trace = []
    converged = False
    state = None
    empty = np.zeros(q, dtype=bool)
    for t in range(1, config.max_outer + 1):
        K = step2_solve_alpha(q, u, K_start=K, graph=graph, tol=config.alpha_tol)
        new_params, u_new, state, empty = step3_update(
            pixels, graph, q, K, params, messages, config.lbp_tol, config.lbp_max_iter,
            config.damping)
        messages = state.messages
        change = max(abs(u_new - u), new_params.drift(params))
        trace.append(TraceRow(t, u, K, u_new, change))
        log.debug("outer %d: u=%.6g alpha=%.6g u_post=%.6g change=%.3g", t, u, K, u_new, change)
        params = new_params
        u = clip_u(q, u_new) if u_new >= (q - 1) / q else u_new
        if change < config.outer_tol:
            converged = True
            break
    # labels from the last messages, combined with the final parameters
    table = observation.likelihood_table(pixels, params)
    final = posterior_lbp.solve_posterior_fixed_point(graph, q, K, table, init=messages,
                                                      tol=config.lbp_tol,
                                                      max_iter=config.lbp_max_iter,
                                                      damping=config.damping)
    labels = posterior_lbp.mpm_label(final).reshape(img.shape[:2])
    if not converged:
        log.warning("CME did not converge within %d outer iterations", config.max_outer)
    return EstimateReport(trace[-1].u, K, params, labels, trace, converged, empty, config)
