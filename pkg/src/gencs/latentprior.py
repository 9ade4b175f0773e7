"""Full-covariance Gaussian mixture over the latent space.

Covariances are stored through their lower Cholesky factors, which are what
both the density and the sampler consume and what checkpoints persist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .container import read_container, write_container
from .seeding import rng_for

LOG_2PI = np.log(2.0 * np.pi)


class GmmFitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        mu = np.array(self.means, dtype=np.float64)
        L = np.array(self.chol, dtype=np.float64)
        K, k = mu.shape
        if w.shape != (K,) or L.shape != (K, k, k):
            raise ValueError("inconsistent mixture shapes")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        if np.any(np.triu(L, 1) != 0) or np.any(np.diagonal(L, axis1=1, axis2=2) <= 0):
            raise ValueError("covariance factors must be lower triangular with positive diagonal")
        for a in (w, mu, L):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "chol", L)

    @classmethod
    def from_covariances(cls, weights, means, covs) -> "GmmModel":
        return cls(weights, means, np.linalg.cholesky(np.asarray(covs, dtype=np.float64)))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def covariances(self) -> np.ndarray:
        return self.chol @ np.swapaxes(self.chol, 1, 2)


def _component_logpdf(means, chol, z):
    # (n, K) Gaussian log densities
    n, k = z.shape
    out = np.empty((n, means.shape[0]))
    for i, (mu, L) in enumerate(zip(means, chol)):
        y = solve_triangular(L, (z - mu).T, lower=True)
        out[:, i] = -0.5 * np.sum(y * y, axis=0) - np.log(np.diagonal(L)).sum() - 0.5 * k * LOG_2PI
    return out


def _weighted_logpdf(g: GmmModel, z):
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    return _component_logpdf(g.means, g.chol, z) + logw


def log_density(g: GmmModel, z) -> np.ndarray | float:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != g.dim:
        raise ValueError(f"latent dimension {Z.shape[1]} != {g.dim}")
    out = logsumexp(_weighted_logpdf(g, Z), axis=1)
    return float(out[0]) if single else out


def log_density_grad(g: GmmModel, z) -> np.ndarray:
    """Gradient of ``log p(z)``: responsibility-weighted ``-Sigma_i^{-1}(z - mu_i)``."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    lp = _weighted_logpdf(g, Z)
    resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    grad = np.zeros_like(Z)
    for i, (mu, L) in enumerate(zip(g.means, g.chol)):
        y = solve_triangular(L, (Z - mu).T, lower=True)
        prec_diff = solve_triangular(L.T, y, lower=False).T
        grad -= resp[:, i:i + 1] * prec_diff
    return grad[0] if single else grad


def sample(g: GmmModel, n: int, seed) -> np.ndarray:
    """Draw ``n`` latents; ``seed`` may be an int or a ``numpy.random.Generator``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, "gmm-sample")
    comp = rng.choice(g.n_components, size=n, p=g.weights)
    eps = rng.standard_normal((n, g.dim))
    return g.means[comp] + np.einsum("nij,nj->ni", g.chol[comp], eps)


# ---------------------------------------------------------------------------
# EM

@dataclass
class EmTrace:
    log_likelihood: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    converged: bool = False


def _kmeanspp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(X, resp, strength):
    # MAP update under the covariance penalty  -strength/2 * tr(Sigma_i^{-1})
    n, k = X.shape
    nk = resp.sum(axis=0) + 1e-300
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((len(nk), k, k))
    for i in range(len(nk)):
        D = X - means[i]
        covs[i] = (D.T * resp[:, i]) @ D / nk[i] + (strength / nk[i]) * np.eye(k)
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise GmmFitError("singular component covariance; use reg > 0") from exc
    return weights / weights.sum(), means, chol


def _objective(g_parts, X, strength):
    weights, means, chol = g_parts
    with np.errstate(divide="ignore"):
        lp = _component_logpdf(means, chol, X) + np.log(weights)
    ll = float(logsumexp(lp, axis=1).sum())
    penalty = 0.0
    for L in chol:
        Linv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
        penalty += np.sum(Linv * Linv)
    return ll, ll - 0.5 * strength * penalty, lp


def fit_em(latents, K: int = 10, seed: int = 0, max_iters: int = 200, tol: float = 1e-8,
           n_init: int = 1, reg: float = 1e-6, return_trace: bool = False):
    """Fit a ``K``-component full-covariance mixture by EM with k-means++ seeding.

    Covariances carry a ridge of ``reg * trace(cov(X)) / k`` (scaled by n / N_i),
    which is the exact M-step of the penalized likelihood
    ``loglik - strength/2 * sum_i tr(Sigma_i^{-1})``.  That penalized
    objective is nondecreasing across iterations and is recorded in the trace
    next to the plain log-likelihood.
    """
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("latents must be an (n, k) array")
    n, k = X.shape
    if K < 1 or K > n:
        raise GmmFitError(f"cannot fit {K} components to {n} samples")
    if len(np.unique(X, axis=0)) < K:
        raise GmmFitError("fewer distinct latents than components")
    scale = float(np.trace(np.atleast_2d(np.cov(X.T)))) / k
    if not scale > 0:
        raise GmmFitError("degenerate latents: all samples identical")
    floor = reg * scale
    strength = n * floor

    best = None
    for restart in range(n_init):
        rng = rng_for(seed, "gmm-em", restart)
        centers = _kmeanspp(X, K, rng)
        labels = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
        resp = np.zeros((n, K))
        resp[np.arange(n), labels] = 1.0
        parts = _m_step(X, resp, strength)
        trace = EmTrace()
        ll, obj, lp = _objective(parts, X, strength)
        trace.log_likelihood.append(ll)
        trace.objective.append(obj)
        for _ in range(max_iters):
            resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
            parts = _m_step(X, resp, strength)
            ll, obj, lp = _objective(parts, X, strength)
            prev = trace.objective[-1]
            trace.log_likelihood.append(ll)
            trace.objective.append(obj)
            if abs(obj - prev) <= tol * abs(prev):
                trace.converged = True
                break
        if best is None or trace.objective[-1] > best[1].objective[-1]:
            best = (parts, trace)

    (weights, means, chol), trace = best
    model = GmmModel(weights, means, chol)
    return (model, trace) if return_trace else model


def save_gmm(g: GmmModel, path) -> None:
    write_container(path, "gmm", {"K": g.n_components, "k": g.dim},
                    [("weights", g.weights), ("means", g.means), ("chol", g.chol)])


def load_gmm(path) -> GmmModel:
    _, b = read_container(path, "gmm")
    return GmmModel(b["weights"], b["means"], b["chol"])
