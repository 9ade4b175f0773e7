"""Latent-space recovery from subsampled Fourier measurements, and bound certificates.

The estimator minimizes over ``z``::

    || S D F U G(z) - b ||^2  +  lam * (-log p(z))

with Adam, where ``U`` is the bicubic upscaler and ``p`` an optional GMM
prior.  Restarts and test instances are independent solves; they are
evaluated together as one batch because Adam acts elementwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coherence import CoherenceProfile, balancing_theta, is_admissible, mu_constant
from .generator import GgnModel, UpscaleOperator, forward, forward_grad, range_subspace_basis, upscale
from .latentprior import GmmModel, log_density, log_density_grad
from .measurement import (MeasurementEnsemble, SamplingDistribution, apply_sdf, apply_sdf_adjoint,
                          stack_ensembles, support_projection)
from .optim import Adam
from .riptest import HypothesisViolationError, sample_complexity_recovery
from .seeding import rng_for


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class RecoveryConfig:
    lr: float = 0.01
    iterations: int = 500
    restarts: int = 1
    lam: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class RecoveryResult:
    z_hat: np.ndarray
    x_hat: np.ndarray
    loss: float
    trajectory: np.ndarray
    residual_norm: float
    restart: int
    restart_losses: np.ndarray
    # spread between the chosen restart and the worst one; a diagnostic, not a certified slack
    restart_gap: float = 0.0
    meta: dict = field(default_factory=dict)


def initial_latents(k: int, cfg: RecoveryConfig, stream: str = "restart") -> np.ndarray:
    """Standard-normal starting points, restart ``r`` seeded by ``(seed, r)``."""
    return np.stack([rng_for(cfg.seed, stream, r).standard_normal(k) for r in range(cfg.restarts)])


def run_adam(loss_grad, z0: np.ndarray, cfg: RecoveryConfig, prior: GmmModel | None = None):
    """Adam over a batch of independent latents.

    ``loss_grad(z)`` returns per-row data losses ``(n,)`` and their gradients
    ``(n, k)``.  Returns the final latents, the final data losses, and the
    objective trajectory ``(iterations + 1, n)`` including the starting point.
    """
    z = np.array(z0, dtype=np.float64)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    use_prior = prior is not None and cfg.lam > 0
    traj = np.empty((cfg.iterations + 1, z.shape[0]))
    for it in range(cfg.iterations + 1):
        loss, grad = loss_grad(z)
        total = loss
        if use_prior:
            total = loss - cfg.lam * log_density(prior, z)
            grad = grad - cfg.lam * log_density_grad(prior, z)
        if not np.all(np.isfinite(total)) or not np.all(np.isfinite(grad)):
            raise DivergenceError(it)
        traj[it] = total
        if it == cfg.iterations:
            break
        opt.step([z], [grad])
    return z, loss, traj


def _measurement_objective(model, upscaler, e, b):
    def loss_grad(z):
        x = upscale(upscaler, forward(model, z))
        r = apply_sdf(e, x) - b
        loss = np.sum(r.real ** 2 + r.imag ** 2, axis=-1)
        gx = 2.0 * apply_sdf_adjoint(e, r)
        return loss, forward_grad(model, z, upscaler.adjoint(gx))
    return loss_grad


def recovery_objective(model: GgnModel, upscaler: UpscaleOperator, e: MeasurementEnsemble, b,
                       z, lam: float = 0.0, prior: GmmModel | None = None):
    """Objective value and gradient at ``z`` (single latent)."""
    loss, grad = _measurement_objective(model, upscaler, e, np.asarray(b))(np.atleast_2d(z))
    if prior is not None and lam > 0:
        loss = loss - lam * log_density(prior, np.atleast_2d(z))
        grad = grad - lam * log_density_grad(prior, np.atleast_2d(z))
    return float(loss[0]), grad[0]


def _pick(model, upscaler, z, loss, traj, **meta):
    best = int(np.argmin(loss))
    z_hat = z[best].copy()
    return RecoveryResult(
        z_hat=z_hat,
        x_hat=upscale(upscaler, forward(model, z_hat)),
        loss=float(loss[best]),
        trajectory=traj[:, best].copy(),
        residual_norm=float(np.sqrt(loss[best])),
        restart=best,
        restart_losses=loss.copy(),
        restart_gap=float(np.sqrt(loss.max()) - np.sqrt(loss[best])),
        meta=meta,
    )


def recover(model: GgnModel, upscaler: UpscaleOperator, e: MeasurementEnsemble, b, cfg: RecoveryConfig,
            prior: GmmModel | None = None, z0=None) -> RecoveryResult:
    """Best-of-restarts Adam solve of the (optionally GMM-regularized) recovery problem.

    ``z0`` (restarts x k) overrides the standard-normal starting points; the
    experiment pipeline passes GMM samples there.
    """
    b = np.asarray(b)
    if b.shape != (e.m,):
        raise ValueError(f"measurement vector has shape {b.shape}, expected ({e.m},)")
    if cfg.lam > 0 and prior is None:
        raise ValueError("lam > 0 needs a prior")
    z0 = initial_latents(model.k, cfg) if z0 is None else np.atleast_2d(z0)
    z, loss, traj = run_adam(_measurement_objective(model, upscaler, e, b), z0, cfg, prior)
    return _pick(model, upscaler, z, loss, traj)


def recover_many(model: GgnModel, upscaler: UpscaleOperator, ensembles, B, cfg: RecoveryConfig,
                 prior: GmmModel | None = None, z0=None) -> list[RecoveryResult]:
    """Independent :func:`recover` solves for several instances, evaluated as one batch.

    ``ensembles`` holds one ensemble per instance (equal ``m``), ``B`` the
    matching measurement vectors, ``z0`` optional starts of shape
    ``(instances, restarts, k)``.
    """
    ensembles = list(ensembles)
    B = np.asarray(B)
    n, R, k = len(ensembles), cfg.restarts, model.k
    if z0 is None:
        z0 = np.stack([initial_latents(k, replace(cfg, seed=_instance_seed(cfg.seed, i)))
                       for i in range(n)])
    z0 = np.asarray(z0, dtype=np.float64).reshape(n, R, k)
    e = stack_ensembles([ens for ens in ensembles for _ in range(R)])
    b = np.repeat(B, R, axis=0)
    z, loss, traj = run_adam(_measurement_objective(model, upscaler, e, b), z0.reshape(n * R, k), cfg, prior)
    out = []
    for i in range(n):
        sl = slice(i * R, (i + 1) * R)
        out.append(_pick(model, upscaler, z[sl], loss[sl], traj[:, sl], instance=i))
    return out


def _instance_seed(seed: int, i: int) -> int:
    return int(rng_for(seed, "instance", i).integers(2 ** 62))


def project_onto_range(model: GgnModel, upscaler: UpscaleOperator, x0, cfg: RecoveryConfig, z0=None):
    """Approximate nearest point of the (upscaled) range; returns ``(Pi x0, x0 - Pi x0)``.

    The problem is nonconvex, so the result is a best-of-restarts local
    solution with no orthogonality guarantee.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (upscaler.dst ** 2,):
        raise ValueError(f"signal has shape {x0.shape}, expected ({upscaler.dst ** 2},)")

    def loss_grad(z):
        r = upscale(upscaler, forward(model, z)) - x0
        return np.sum(r * r, axis=-1), forward_grad(model, z, upscaler.adjoint(2.0 * r))

    z0 = initial_latents(model.k, cfg, "projection") if z0 is None else np.atleast_2d(z0)
    z, loss, _ = run_adam(loss_grad, z0, cfg)
    # the origin is always in the range of a bias-free network
    proj = upscale(upscaler, forward(model, z[int(np.argmin(loss))]))
    if float(np.min(loss)) > float(x0 @ x0):
        proj = np.zeros_like(x0)
    return proj, x0 - proj


# ---------------------------------------------------------------------------
# bounds

def bound_rhs(x_perp, e: MeasurementEnsemble, eta, eps_hat: float, m: int, theta: float | None = None) -> float:
    """Right-hand side of the admissible-branch error bound, or the balancing one when ``theta`` is given."""
    if eps_hat < 0:
        raise ValueError("eps_hat must be nonnegative")
    x_perp = np.asarray(x_perp, dtype=np.float64)
    eta = np.zeros(m) if eta is None else np.asarray(eta)
    rhs = (np.linalg.norm(x_perp)
           + math.sqrt(2.0 / m) * (2.0 * np.linalg.norm(apply_sdf(e, x_perp)) + 2.0 * np.linalg.norm(eta) + eps_hat))
    if theta is not None:
        if not 0.0 <= theta < 1.0:
            raise ValueError(f"theta must lie in [0, 1), got {theta}")
        rhs /= 1.0 - theta
    return float(rhs)


@dataclass
class Certificate:
    m: int
    rate: float
    lhs: float
    rhs_general: float
    rhs_admissible: float
    rhs_balancing: float
    theta: float
    eps_hat: float
    admissible: bool
    tail: float
    holds_general: bool
    holds_admissible: bool | None
    holds_balancing: bool | None
    note: str = ""


def certify(recovery: RecoveryResult, x0, e: MeasurementEnsemble, eta, p: SamplingDistribution,
            prof: CoherenceProfile, model: GgnModel, upscaler: UpscaleOperator | None = None,
            x_proj=None, cfg: RecoveryConfig | None = None, eps: float = 0.1,
            residual_lower_bound: float = 0.0) -> Certificate:
    """Evaluate the general, admissible and balancing error bounds for one recovery.

    ``eps_hat`` is certified as ``||SDF x_hat - b|| - residual_lower_bound``
    where the lower bound on ``min_{x in R(G)} ||SDFx - b||`` defaults to 0.
    ``x_proj`` is the projection of ``x0`` onto the range; it is estimated by
    :func:`project_onto_range` when absent.
    """
    if upscaler is None:
        upscaler = UpscaleOperator(model.grid[0], model.grid[0])
    x0 = np.asarray(x0, dtype=np.float64)
    m = e.m
    eta = np.zeros(m, dtype=np.complex128) if eta is None else np.asarray(eta)
    b = apply_sdf(e, x0) + eta
    x_hat = recovery.x_hat
    if x_proj is None:
        x_proj, _ = project_onto_range(model, upscaler, x0, cfg or RecoveryConfig(restarts=5))
    x_perp = x0 - x_proj
    eps_hat = max(float(np.linalg.norm(apply_sdf(e, x_hat) - b)) - residual_lower_bound, 0.0)

    lhs = float(np.linalg.norm(x_hat - x0))
    base = bound_rhs(x_perp, e, eta, eps_hat, m)
    _, outside = support_projection(p, e.operator.apply(x_hat - x_proj))
    tail = float(np.linalg.norm(outside))
    rhs_general = base + tail

    admissible = is_admissible(prof, p)
    rhs_adm = base if admissible else math.nan
    theta = balancing_theta(range_subspace_basis(model, upscaler), p, e.operator)
    rhs_bal = bound_rhs(x_perp, e, eta, eps_hat, m, theta) if theta < 1.0 else math.nan

    mu = mu_constant(prof, p)
    try:
        rate = float(sample_complexity_recovery(model.k, model.depth, model.widths[-1], mu, eps))
    except HypothesisViolationError:
        rate = math.nan

    holds_general = lhs <= rhs_general
    holds_adm = (lhs <= rhs_adm) if admissible else None
    holds_bal = (lhs <= rhs_bal) if theta < 1.0 else None
    note = ""
    if not holds_general or holds_adm is False or holds_bal is False:
        note = ("bound violated: either the Gen-RIP event failed for this draw "
                "(probability <= eps when m meets the rate) or the projection estimate is inexact")
    return Certificate(m, rate, lhs, rhs_general, rhs_adm, rhs_bal, theta, eps_hat, admissible, tail,
                       holds_general, holds_adm, holds_bal, note)


CERTIFICATE_COLUMNS = ["trial", "m", "rate", "lhs", "rhs_general", "rhs_admissible", "rhs_balancing",
                       "theta", "eps_hat", "holds_general", "holds_admissible", "holds_balancing"]


def write_certificates_csv(certs, path) -> None:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return int(v)
        if isinstance(v, float):
            return repr(v)
        return v

    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CERTIFICATE_COLUMNS)
        for t, c in enumerate(certs):
            row = {"trial": t, **c.__dict__}
            out.writerow([fmt(row[col]) for col in CERTIFICATE_COLUMNS])
