"""
Gaussian mixture clustering of per-pixel flow vectors

EM with full 2x2 covariances, seeded k-means++ initialisation and an
eigenvalue floor on every covariance.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from cognimap.core.exceptions import DegenerateInputError
from cognimap.models.geometry_models import FlowField
from cognimap.models.motion_models import GmmResult

logger = logging.getLogger(__name__)

COLLAPSE_WEIGHT = 1e-6
MIN_PIXELS_PER_COMPONENT = 10


def _kmeans_plus_plus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ centres; stops early when every point coincides with a centre"""
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0.0:
            break
        idx = rng.choice(n, p=d2 / total)
        centers.append(data[idx])
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.array(centers)


def _component_log_prob(data: np.ndarray, weights: np.ndarray, means: np.ndarray,
                        covs: np.ndarray) -> np.ndarray:
    """log(weight_j * N(x | mean_j, cov_j)) for every sample and component"""
    out = np.empty((data.shape[0], weights.shape[0]))
    for j in range(weights.shape[0]):
        a, b, d = covs[j, 0, 0], covs[j, 0, 1], covs[j, 1, 1]
        det = a * d - b * b
        dx = data[:, 0] - means[j, 0]
        dy = data[:, 1] - means[j, 1]
        maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
        out[:, j] = np.log(weights[j]) - np.log(2.0 * np.pi) - 0.5 * np.log(det) - 0.5 * maha
    return out


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, floor)
    return (eigvecs * eigvals) @ eigvecs.T


def _m_step(data: np.ndarray, resp: np.ndarray, cov_floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    nk = resp.sum(axis=0)
    weights = nk / data.shape[0]
    k = resp.shape[1]
    means = np.zeros((k, 2))
    covs = np.tile(np.eye(2) * cov_floor, (k, 1, 1))
    for j in range(k):
        if nk[j] <= 0.0:
            continue
        means[j] = resp[:, j] @ data / nk[j]
        diff = data - means[j]
        scatter = (diff * resp[:, j:j + 1]).T @ diff / nk[j]
        covs[j] = _floor_covariance(scatter, cov_floor)
    return weights, means, covs


def _drop_collapsed(weights, means, covs):
    keep = weights >= COLLAPSE_WEIGHT
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        weights = weights[keep] / weights[keep].sum()
        means = means[keep]
        covs = covs[keep]
    return weights, means, covs, dropped


def fit_gmm(
    flow: FlowField,
    valid: np.ndarray,
    k: int = 3,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
    cov_floor: float = 1e-6,
) -> GmmResult:
    """
    Fit a K-component mixture to the flow vectors of valid pixels

    Args:
        flow: Flow field
        valid: Pixels to cluster
        k: Requested component count
        seed: Seed for the k-means++ initialisation
        max_iter: EM iteration cap
        tol: Relative log-likelihood change that ends EM
        cov_floor: Minimum covariance eigenvalue (px^2)

    Returns:
        GmmResult whose effective_k may be smaller than k

    Raises:
        DegenerateInputError: fewer than 10 valid pixels per requested component
    """
    valid = np.asarray(valid, dtype=bool)
    data = flow.stacked()[valid]
    n = data.shape[0]
    if n < k * MIN_PIXELS_PER_COMPONENT:
        raise DegenerateInputError(f"{n} valid flow vectors are too few for {k} components")

    rng = np.random.default_rng(seed)
    centers = _kmeans_plus_plus(data, k, rng)
    d2 = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, centers.shape[0]))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    weights, means, covs = _m_step(data, resp, cov_floor)
    weights, means, covs, dropped = _drop_collapsed(weights, means, covs)

    log_prob = _component_log_prob(data, weights, means, covs)
    log_norm = logsumexp(log_prob, axis=1)
    ll = float(log_norm.sum())
    history = [ll]
    iterations = 0

    for iterations in range(1, max_iter + 1):
        resp = np.exp(log_prob - log_norm[:, None])
        weights, means, covs = _m_step(data, resp, cov_floor)
        weights, means, covs, newly_dropped = _drop_collapsed(weights, means, covs)
        dropped += newly_dropped

        log_prob = _component_log_prob(data, weights, means, covs)
        log_norm = logsumexp(log_prob, axis=1)
        ll_new = float(log_norm.sum())
        history.append(ll_new)
        converged = abs(ll_new - ll) <= tol * max(1.0, abs(ll_new))
        ll = ll_new
        if converged:
            break

    if dropped:
        logger.debug(f"GMM dropped {dropped} collapsed component(s), effective k={weights.shape[0]}")

    labels = np.full(valid.shape, -1, dtype=np.int64)
    labels[valid] = np.argmax(log_prob, axis=1)
    return GmmResult(
        labels=labels,
        means=means,
        covariances=covs,
        weights=weights,
        log_likelihood=ll,
        log_likelihood_history=history,
        iterations=iterations,
        dropped_clusters=dropped,
    )


def select_gmm(
    flow: FlowField,
    valid: np.ndarray,
    k_max: int = 3,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
    cov_floor: float = 1e-6,
) -> GmmResult:
    """Fit 1..k_max components and keep the lowest-BIC model (smaller k on ties)"""
    n = int(np.count_nonzero(valid))
    best: Optional[GmmResult] = None
    best_bic = np.inf
    for k in range(1, k_max + 1):
        if n < k * MIN_PIXELS_PER_COMPONENT:
            break
        result = fit_gmm(flow, valid, k=k, seed=seed, max_iter=max_iter, tol=tol, cov_floor=cov_floor)
        bic = result.bic(n)
        if bic < best_bic:
            best, best_bic = result, bic
    if best is None:
        raise DegenerateInputError(f"{n} valid flow vectors are too few for a mixture")
    return best
