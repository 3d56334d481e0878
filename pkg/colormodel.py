"""
Per-label trivariate Gaussian color model g(d | xi) with mean m(xi) and
covariance C(xi): density evaluation, responsibility-weighted refitting and
a deterministic k-means initialization.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from errors import ModelError, UsageError
from grid import ColorImage

COV_EPS = 1e-6
KMEANS_ITERS = 20
KMEANS_MAX_SAMPLES = 50000
EMPTY_LABEL_FRACTION = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianLabelModel:
    """
    means: (q, 3), covariances: (q, 3, 3). The lower Cholesky factor of each
    covariance is computed on construction; a failed factorization means the
    covariance is not SPD and raises ModelError.
    """
    means: np.ndarray
    covariances: np.ndarray
    factors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        covs = np.array(self.covariances, dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != 3 or means.shape[0] < 2:
            raise ModelError(f"means must have shape (q, 3) with q >= 2, got {means.shape}")
        if covs.shape != (means.shape[0], 3, 3):
            raise ModelError(f"covariances must have shape ({means.shape[0]}, 3, 3), got {covs.shape}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise ModelError("model parameters must be finite")
        if not np.allclose(covs, covs.transpose(0, 2, 1), rtol=0.0, atol=1e-12):
            raise ModelError("covariances must be symmetric")
        try:
            factors = np.stack([cholesky(c, lower=True) for c in covs])
        except LinAlgError as e:
            raise ModelError(f"covariance is not positive definite: {e}")
        for arr in (means, covs, factors):
            arr.setflags(write=False)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'covariances', covs)
        object.__setattr__(self, 'factors', factors)

    @property
    def q(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        return {
            'means': self.means.tolist(),
            'covariances': self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'GaussianLabelModel':
        return cls(np.asarray(data['means']), np.asarray(data['covariances']))


def _log_density_rows(model: GaussianLabelModel, colors: np.ndarray, xi: int) -> np.ndarray:
    L = model.factors[xi]
    z = solve_triangular(L, (colors - model.means[xi]).T, lower=True, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (3 * LOG_2PI + log_det) - 0.5 * np.sum(z * z, axis=0)


def log_density(model: GaussianLabelModel, d, xi: int) -> float:
    """ln g(d | xi), via the triangular factor of C(xi)"""
    if not 0 <= xi < model.q:
        raise UsageError(f"label {xi} out of range for q={model.q}")
    d = np.asarray(d, dtype=np.float64).reshape(1, 3)
    return float(_log_density_rows(model, d, xi)[0])


def log_density_field(model: GaussianLabelModel, img: ColorImage) -> np.ndarray:
    """ln g(d_i | xi) for every site and label, shape (H, W, q)"""
    colors = img.colors()
    out = np.empty((colors.shape[0], model.q))
    for xi in range(model.q):
        out[:, xi] = _log_density_rows(model, colors, xi)
    return out.reshape(img.torus.shape + (model.q,))


def _weighted_moments(colors: np.ndarray, weights: np.ndarray, eps: float):
    n = weights.sum()
    mean = weights @ colors / n
    centered = colors - mean
    cov = (centered * weights[:, None]).T @ centered / n
    cov = 0.5 * (cov + cov.T) + eps * np.eye(3)
    return mean, cov


def fit_weighted(img: ColorImage, resp, previous: Optional[GaussianLabelModel] = None,
                 eps: float = COV_EPS) -> GaussianLabelModel:
    """
    M-step: responsibility-weighted means and covariances (+ eps I).

    resp has shape (H, W, q) or (|V|, q) and every row must sum to one.
    A label whose total weight is below 1e-6 |V| keeps its parameters from
    `previous`, or gets the global moments when there is no previous model.
    """
    colors = img.colors()
    resp = np.asarray(resp, dtype=np.float64).reshape(colors.shape[0], -1)
    q = resp.shape[1]
    if q < 2:
        raise UsageError(f"responsibilities need q >= 2 columns, got {q}")
    if np.any(resp < 0) or np.max(np.abs(resp.sum(axis=1) - 1.0)) > 1e-9:
        raise UsageError("responsibility rows must be non-negative and sum to 1")
    if previous is not None and previous.q != q:
        raise UsageError(f"previous model has q={previous.q}, responsibilities have q={q}")

    floor = EMPTY_LABEL_FRACTION * colors.shape[0]
    means = np.empty((q, 3))
    covs = np.empty((q, 3, 3))
    global_moments = None
    for xi in range(q):
        w = resp[:, xi]
        if w.sum() >= floor:
            means[xi], covs[xi] = _weighted_moments(colors, w, eps)
        elif previous is not None:
            means[xi], covs[xi] = previous.means[xi], previous.covariances[xi]
        else:
            if global_moments is None:
                global_moments = _weighted_moments(colors, np.ones(colors.shape[0]), eps)
            means[xi], covs[xi] = global_moments
    return GaussianLabelModel(means, covs)


def _farthest_point_centers(colors: np.ndarray, q: int) -> np.ndarray:
    # lexicographically smallest color first (R, then G, then B)
    first = np.lexsort((colors[:, 2], colors[:, 1], colors[:, 0]))[0]
    centers = [colors[first]]
    min_dist = np.sum((colors - centers[0]) ** 2, axis=1)
    for _ in range(1, q):
        nxt = int(np.argmax(min_dist))
        centers.append(colors[nxt])
        min_dist = np.minimum(min_dist, np.sum((colors - colors[nxt]) ** 2, axis=1))
    return np.array(centers)


def _assign(colors: np.ndarray, centers: np.ndarray) -> np.ndarray:
    dist = np.sum((colors[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    # argmin returns the first minimum: ties go to the lower label
    return np.argmin(dist, axis=1)


def init_model(img: ColorImage, q: int, seed: int = 0, eps: float = COV_EPS,
               iters: int = KMEANS_ITERS, max_samples: int = KMEANS_MAX_SAMPLES) -> GaussianLabelModel:
    """
    k-means on the site colors: farthest-point seeding from the
    lexicographically smallest color, then `iters` Lloyd iterations. Empty
    clusters keep their center and get covariance eps I.

    Images larger than max_samples sites are clustered on a subsample drawn
    with `seed`; otherwise the result does not depend on the seed.
    """
    if int(q) != q or q < 2:
        raise UsageError(f"number of labels q must be an integer >= 2, got {q}")
    colors = img.colors()
    if colors.shape[0] > max_samples:
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(colors.shape[0], size=max_samples, replace=False))
        colors = colors[picked]

    centers = _farthest_point_centers(colors, q)
    for _ in range(iters):
        labels = _assign(colors, centers)
        for xi in range(q):
            members = colors[labels == xi]
            if len(members):
                centers[xi] = members.mean(axis=0)

    labels = _assign(colors, centers)
    covs = np.empty((q, 3, 3))
    for xi in range(q):
        members = colors[labels == xi]
        if len(members):
            centers[xi] = members.mean(axis=0)
            centered = members - centers[xi]
            covs[xi] = centered.T @ centered / len(members) + eps * np.eye(3)
        else:
            covs[xi] = eps * np.eye(3)
    return GaussianLabelModel(centers, covs)
