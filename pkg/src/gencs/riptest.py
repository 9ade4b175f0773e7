"""Sample-complexity rates and an empirical Gen-RIP harness.

Logs are natural logs throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coherence import mu_constant, subspace_coherence
from .generator import GgnModel, UpscaleOperator, cone_count_log_bound, forward, range_subspace_basis, upscale
from .measurement import DFT2, SamplingDistribution, draw_ensemble, measurement_counts
from .seeding import derive_seed, rng_for

UNIT_TOL = 1e-9


class HypothesisViolationError(ValueError):
    """A precondition of the rate formulas (mu >= 1, eps in (0, 1), delta in (0, 1]) does not hold."""


def _log_term(k: int, d: int, k_d: int, eps: float) -> float:
    return 2.0 * cone_count_log_bound(k, d, k_d) + math.log(4.0 * k / eps)


def _check(mu: float, eps: float) -> None:
    if not mu >= 1.0:
        raise HypothesisViolationError(f"rates assume mu >= 1, got {mu}")
    if not 0.0 < eps < 1.0:
        raise HypothesisViolationError(f"eps must lie in (0, 1), got {eps}")


def rip_rate(k: int, d: int, k_d: int, mu: float, delta: float, eps: float) -> float:
    """Pre-ceiling Gen-RIP rate ``(4 mu^2 / delta^2) [2kd log(2e k_d / k) + log(4k / eps)]``."""
    _check(mu, eps)
    if not 0.0 < delta <= 1.0:
        raise HypothesisViolationError(f"delta must lie in (0, 1], got {delta}")
    return 4.0 * mu ** 2 / delta ** 2 * _log_term(k, d, k_d, eps)


def recovery_rate(k: int, d: int, k_d: int, mu: float, eps: float) -> float:
    """Pre-ceiling recovery rate; the Gen-RIP rate at delta = 1/2."""
    _check(mu, eps)
    return 16.0 * mu ** 2 * _log_term(k, d, k_d, eps)


def sample_complexity_recovery(k: int, d: int, k_d: int, mu: float, eps: float) -> int:
    return math.ceil(recovery_rate(k, d, k_d, mu, eps))


def sample_complexity_rip(k: int, d: int, k_d: int, mu: float, delta: float, eps: float) -> int:
    return math.ceil(rip_rate(k, d, k_d, mu, delta, eps))


def _deviations(counts: np.ndarray, m: int, p: SamplingDistribution, spectra: np.ndarray) -> np.ndarray:
    supp = p.support
    gain = np.zeros(p.size)
    gain[supp] = counts[supp] / (m * p.p[supp])
    power = np.abs(spectra) ** 2
    return np.abs(power @ gain - power @ supp.astype(np.float64))


def rip_deviation(e, p: SamplingDistribution, test_vectors) -> float:
    """``max_x |(1/m) ||SDFx||^2 - ||I F x||^2|`` over unit-norm test vectors."""
    X = np.atleast_2d(np.asarray(test_vectors, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise ValueError("no test vectors")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("test vectors must have unit norm")
    spectra = e.operator.apply(X)
    return float(_deviations(measurement_counts(e), e.m, p, spectra).max())


@dataclass
class RipReport:
    m: int
    delta: float
    deviations: np.ndarray
    failure_fraction: float
    config: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.deviations.size


def rip_trial_suite(model: GgnModel, p: SamplingDistribution, delta: float, eps: float, trials: int,
                    diffs_per_trial: int, seed: int, upscaler: UpscaleOperator | None = None,
                    m: int | None = None, m_factor: float = 1.0) -> RipReport:
    """Sampled Gen-RIP check over normalized differences ``G(z) - G(z')``.

    The sup over the full difference set is out of reach; each trial reports
    the max deviation over its sampled differences, a lower bound of that sup.
    """
    if upscaler is None:
        upscaler = UpscaleOperator(model.grid[0], model.grid[0])
    op = DFT2((upscaler.dst, upscaler.dst))
    basis = range_subspace_basis(model, upscaler)
    mu = mu_constant(subspace_coherence(basis, op), p)
    k, d, k_d = model.k, model.depth, model.widths[-1]
    if m is None:
        m = sample_complexity_rip(k, d, k_d, mu, delta, eps)
    m = int(math.ceil(m * m_factor))

    devs = np.empty(trials)
    for t in range(trials):
        e = draw_ensemble(p, m, derive_seed(seed, "rip-ensemble", t), op)
        rng = rng_for(seed, "rip-latents", t)
        z1 = rng.standard_normal((diffs_per_trial, k))
        z2 = rng.standard_normal((diffs_per_trial, k))
        diff = upscale(upscaler, forward(model, z1) - forward(model, z2))
        norms = np.linalg.norm(diff, axis=1)
        keep = norms > 1e-12
        if not keep.any():
            raise ValueError(f"trial {t}: every sampled difference is degenerate")
        unit = diff[keep] / norms[keep, None]
        devs[t] = _deviations(measurement_counts(e), m, p, op.apply(unit)).max()

    config = {"k": k, "d": d, "k_d": k_d, "mu": mu, "eps": eps, "seed": seed, "trials": trials,
              "diffs_per_trial": diffs_per_trial, "m_factor": m_factor}
    return RipReport(m, delta, devs, float(np.mean(devs > delta)), config)


def write_rip_report(report: RipReport, summary_path, csv_path) -> None:
    summary = {"m": report.m, "delta": report.delta, "failure_fraction": report.failure_fraction,
               "mean_deviation": float(report.deviations.mean()),
               "max_deviation": float(report.deviations.max()),
               "note": "deviations are maxima over sampled differences (lower bounds of the sup)",
               **report.config}
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    with open(csv_path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["trial", "deviation", "exceeds_delta"])
        for t, v in enumerate(report.deviations):
            out.writerow([t, repr(float(v)), int(v > report.delta)])
