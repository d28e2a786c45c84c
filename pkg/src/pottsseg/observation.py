"""Per-label trivariate Gaussian colour model.

Pixels are RGB 3-vectors, normally normalized to [0, 1]. Label ``k`` emits
``N(means[k], covariances[k])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = math.log(2.0 * math.pi)
# labels whose total responsibility falls below this keep their previous parameters
EMPTY_FLOOR = 1e-8


@dataclass
class GaussianParams:
    means: np.ndarray        # (q, 3)
    covariances: np.ndarray  # (q, 3, 3)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        q = self.means.shape[0]
        if self.means.ndim != 2 or self.covariances.shape != (q, self.means.shape[1], self.means.shape[1]):
            raise ValueError("means must be (q, d) and covariances (q, d, d)")

    @property
    def n_labels(self) -> int:
        return self.means.shape[0]

    def copy(self) -> "GaussianParams":
        return GaussianParams(self.means.copy(), self.covariances.copy())

    def permuted(self, perm) -> "GaussianParams":
        perm = np.asarray(perm)
        return GaussianParams(self.means[perm], self.covariances[perm])

    def drift(self, other: "GaussianParams") -> float:
        """Max-norm difference over all means and covariance entries."""
        return float(max(np.max(np.abs(self.means - other.means)),
                         np.max(np.abs(self.covariances - other.covariances))))

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, d) -> "GaussianParams":
        return cls(np.array(d["means"]), np.array(d["covariances"]))


def ridge(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and add ``eps * I`` when the smallest eigenvalue is below ``eps``.

    ``eps = 1e-6 * max(trace / d, 1e-6)``.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    d = cov.shape[-1]
    out = cov.copy()
    for k in np.ndindex(cov.shape[:-2]):
        c = cov[k]
        eps = 1e-6 * max(np.trace(c) / d, 1e-6)
        if np.linalg.eigvalsh(c)[0] < eps:
            out[k] = c + eps * np.eye(d)
    return out


def _cholesky(cov, label):
    c = np.asarray(cov, dtype=float)
    if not np.allclose(c, c.T, rtol=1e-10, atol=1e-14):
        raise ValueError(f"covariance of label {label} is not symmetric")
    try:
        L = np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise ValueError(f"covariance of label {label} is not positive definite") from None
    if np.any(np.diag(L) <= 0) or not np.all(np.isfinite(L)):
        raise ValueError(f"covariance of label {label} is not positive definite")
    return L


def log_likelihood(d, label: int, params: GaussianParams) -> float:
    """``ln N(d; m, C)`` for one pixel under one label."""
    d = np.asarray(d, dtype=float)
    L = _cholesky(params.covariances[label], label)
    z = solve_triangular(L, d - params.means[label], lower=True)
    return float(-0.5 * len(d) * LOG_2PI - np.log(np.diag(L)).sum() - 0.5 * z @ z)


def likelihood_table(pixels, params: GaussianParams) -> np.ndarray:
    """Log-likelihood of every pixel under every label, shape ``(n, q)``."""
    X = np.asarray(pixels, dtype=float).reshape(-1, params.means.shape[1])
    n, dim = X.shape
    out = np.empty((n, params.n_labels))
    for k in range(params.n_labels):
        L = _cholesky(params.covariances[k], k)
        Z = solve_triangular(L, (X - params.means[k]).T, lower=True)
        out[:, k] = -0.5 * dim * LOG_2PI - np.log(np.diag(L)).sum() - 0.5 * np.einsum("ij,ij->j", Z, Z)
    return out


def weighted_mean_cov(pixels, responsibilities, previous: GaussianParams | None = None,
                      floor: float = EMPTY_FLOOR):
    """Responsibility-weighted means and covariances for every label.

    Returns ``(params, empty)`` where ``empty`` flags labels whose total
    weight fell below ``floor``; those keep ``previous`` (or the global
    statistics if there is none).
    """
    X = np.asarray(pixels, dtype=float).reshape(-1, 3)
    R = np.asarray(responsibilities, dtype=float)
    if R.shape[0] != X.shape[0]:
        raise ValueError("responsibilities and pixels disagree on the pixel count")
    q = R.shape[1]
    weight = R.sum(axis=0)
    empty = weight < floor
    safe = np.where(empty, 1.0, weight)
    means = (R.T @ X) / safe[:, None]
    covs = np.empty((q, 3, 3))
    for k in range(q):
        D = X - means[k]
        covs[k] = (D * R[:, k:k + 1]).T @ D / safe[k]
    if empty.any():
        if previous is not None:
            means[empty] = previous.means[empty]
            covs[empty] = previous.covariances[empty]
        else:
            means[empty] = X.mean(axis=0)
            covs[empty] = np.cov(X.T, bias=True) if len(X) > 1 else np.zeros((3, 3))
    return GaussianParams(means, ridge(covs)), empty


def init_params(pixels, q: int, seed=0, n_refine: int = 5, jitter: float = 1e-3):
    """Deterministic starting point: farthest-point seeding plus a few Lloyd passes.

    Returns ``(params, labels)``, the labels being the final hard assignment.
    When the image has fewer distinct colours than ``q`` the duplicate
    centres are perturbed with seeded jitter.
    """
    if int(q) != q or q < 2:
        raise ValueError(f"number of labels must be an integer >= 2, got {q!r}")
    X = np.asarray(pixels, dtype=float).reshape(-1, 3)
    n = len(X)
    rng = np.random.default_rng(seed)

    centers = np.empty((q, 3))
    centers[0] = X[rng.integers(n)]
    dist = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, q):
        i = int(np.argmax(dist))
        if dist[i] > 0:
            centers[k] = X[i]
        else:
            centers[k] = centers[k - 1] + jitter * rng.standard_normal(3)
        dist = np.minimum(dist, np.sum((X - centers[k]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_refine):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        for k in range(q):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)

    glob = np.cov(X.T, bias=True) if n > 1 else np.zeros((3, 3))
    covs = np.empty((q, 3, 3))
    for k in range(q):
        members = X[labels == k]
        covs[k] = np.cov(members.T, bias=True) if len(members) > 1 else glob
    # duplicate centres (degenerate images) get separated again
    for k in range(1, q):
        for j in range(k):
            if np.array_equal(centers[k], centers[j]):
                centers[k] = centers[k] + jitter * rng.standard_normal(3)
    return GaussianParams(centers, ridge(covs)), labels
