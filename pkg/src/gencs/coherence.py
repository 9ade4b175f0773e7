"""Local coherence profiles, the mu constant, admissibility, and the balancing constant.

The coherence of a model set with respect to a unitary ``F`` is, per
frequency ``j``, the largest ``|(F x)_j|`` over unit vectors ``x`` spanned by
the set.  For a subspace with orthonormal basis ``B`` that supremum is the
norm of row ``j`` of ``F B``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .generator import GgnModel, UpscaleOperator, forward, upscale
from .measurement import DFT2, SamplingDistribution
from .seeding import rng_for

ORTHO_TOL = 1e-9
ZERO_RTOL = 1e-12
DEGENERATE_DIFF = 1e-12


class DegenerateBatchError(ValueError):
    pass


class InvalidProfileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoherenceProfile:
    alpha: np.ndarray
    method: str
    r: int | None = None
    n_samples: int | None = None
    seed: int | None = None

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64).ravel()
        if (a < 0).any() or not np.isfinite(a).all():
            raise InvalidProfileError("coherences must be finite and nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def energy(self) -> float:
        return float(np.sum(self.alpha ** 2))


def _check_orthonormal(B: np.ndarray) -> None:
    if B.ndim != 2:
        raise ValueError("basis must be a 2-D matrix")
    gram = B.T @ B
    if not np.allclose(gram, np.eye(B.shape[1]), atol=ORTHO_TOL, rtol=0):
        raise ValueError("basis columns are not orthonormal")


def subspace_coherence(B, operator) -> CoherenceProfile:
    """Exact coherence of ``span(B)``: row norms of ``F B``."""
    B = np.asarray(B, dtype=np.float64)
    _check_orthonormal(B)
    FB = operator.apply(B.T)  # (r, M)
    alpha = np.sqrt(np.sum(np.abs(FB) ** 2, axis=0)) if B.shape[1] else np.zeros(B.shape[0])
    return CoherenceProfile(alpha, "exact-subspace", r=B.shape[1])


def gaussian_sampler(k: int):
    def draw(n, rng):
        return rng.standard_normal((n, k))
    return draw


def _generated_spectra(model: GgnModel, latents: np.ndarray, upscaler: UpscaleOperator):
    signals = upscale(upscaler, forward(model, latents))
    return DFT2((upscaler.dst, upscaler.dst)).apply(signals)


def mc_coherence_max_magnitude(model: GgnModel, sampler, N: int, upscaler: UpscaleOperator,
                               seed: int = 0, normalized: bool = False,
                               chunk: int = 256) -> CoherenceProfile:
    """Entrywise max of ``|F U G(z_i)|`` over ``N`` sampled latents.

    ``normalized=True`` rescales each generated signal to unit norm first,
    which makes the estimate a lower bound of the exact subspace profile.
    """
    if N < 1:
        raise ValueError("need N >= 1 samples")
    latents = sampler(N, rng_for(seed, "mc-coherence"))
    alpha = np.zeros(upscaler.dst ** 2)
    for start in range(0, N, chunk):
        spec = _generated_spectra(model, latents[start:start + chunk], upscaler)
        mag = np.abs(spec)
        if normalized:
            norms = np.linalg.norm(spec, axis=1)
            keep = norms > DEGENERATE_DIFF
            mag = mag[keep] / norms[keep, None]
        if mag.size:
            alpha = np.maximum(alpha, mag.max(axis=0))
    method = "mc-max-magnitude-normalized" if normalized else "mc-max-magnitude"
    return CoherenceProfile(alpha, method, n_samples=N, seed=seed)


def self_difference_profile(spectra: np.ndarray) -> np.ndarray:
    """Max over pairs of ``|s_i - s_j| / ||s_i - s_j||`` for a batch of spectra."""
    B = spectra.shape[0]
    alpha = np.zeros(spectra.shape[1])
    used = 0
    for i in range(B - 1):
        diff = spectra[i] - spectra[i + 1:]
        norms = np.linalg.norm(diff, axis=1)
        keep = norms > DEGENERATE_DIFF
        if keep.any():
            alpha = np.maximum(alpha, (np.abs(diff[keep]) / norms[keep, None]).max(axis=0))
            used += int(keep.sum())
    if used == 0:
        raise DegenerateBatchError("every pairwise difference in the batch is zero")
    return alpha


def mc_coherence_self_difference(model: GgnModel, sampler, batch: int, upscaler: UpscaleOperator,
                                 seed: int = 0) -> CoherenceProfile:
    """Entrywise max of ``|F (u_i - u_j)| / ||u_i - u_j||`` over pairs of generated signals.

    ``|F(u_i - u_j)|`` is symmetric in the pair, so unordered pairs suffice.
    """
    if batch < 2:
        raise ValueError("need a batch of at least 2")
    latents = sampler(batch, rng_for(seed, "mc-coherence"))
    spectra = _generated_spectra(model, latents, upscaler)
    alpha = self_difference_profile(spectra)
    return CoherenceProfile(alpha, "mc-self-difference", n_samples=batch, seed=seed)


def mu_constant(prof: CoherenceProfile, p: SamplingDistribution) -> float:
    supp = p.support
    if not supp.any():
        return 0.0
    return float(np.max(prof.alpha[supp] / np.sqrt(p.p[supp])))


def is_admissible(prof: CoherenceProfile, p: SamplingDistribution, zero_tol: float | None = None) -> bool:
    if zero_tol is None:
        zero_tol = ZERO_RTOL * float(prof.alpha.max(initial=0.0))
    active = prof.alpha > zero_tol
    return bool(np.all(p.support[active]))


def optimal_distribution(prof: CoherenceProfile) -> SamplingDistribution:
    """Coherence-energy sampler ``p_j = alpha_j^2 / ||alpha||^2``."""
    if not np.any(prof.alpha > 0):
        raise InvalidProfileError("all-zero coherence profile has no optimal distribution")
    return SamplingDistribution.from_weights(prof.alpha ** 2)


def distribution_from_profile(prof: CoherenceProfile, power: float = 1.0) -> SamplingDistribution:
    """``p_j`` proportional to ``alpha_j ** power``; power 2 gives :func:`optimal_distribution`."""
    if not np.any(prof.alpha > 0):
        raise InvalidProfileError("all-zero coherence profile")
    return SamplingDistribution.from_weights(prof.alpha ** power)


def coherence_energy_check(prof: CoherenceProfile, p: SamplingDistribution) -> bool:
    """True iff the coherence energy on ``supp p`` is at least 1 (which forces mu >= 1)."""
    energy = float(np.sqrt(np.sum(prof.alpha[p.support] ** 2)))
    ok = energy >= 1.0
    if ok:
        mu = mu_constant(prof, p)
        if mu < 1.0 - 1e-12:
            raise ArithmeticError(f"support energy {energy} >= 1 but mu = {mu} < 1")
    return ok


def balancing_theta(B, p: SamplingDistribution, operator) -> float:
    """Spectral norm of ``F B`` restricted to the frequencies outside ``supp p``."""
    B = np.asarray(B, dtype=np.float64)
    _check_orthonormal(B)
    outside = ~p.support
    if not outside.any() or B.shape[1] == 0:
        return 0.0
    FB = operator.apply(B.T).T  # (M, r)
    return float(min(np.linalg.norm(FB[outside], ord=2), 1.0))


# ---------------------------------------------------------------------------
# CSV files

def write_profile_csv(prof: CoherenceProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# method={prof.method},r={prof.r},N={prof.n_samples},seed={prof.seed}\n")
        out = csv.writer(fh)
        out.writerow(["j", "alpha_j"])
        for j, a in enumerate(prof.alpha):
            out.writerow([j, repr(float(a))])


def read_profile_csv(path) -> CoherenceProfile:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    # the first comment line holds the profile fields; later ones are provenance stamps
    header = next(ln for ln in lines if ln.startswith("#")).lstrip("#").strip()
    fields = dict(kv.split("=", 1) for kv in header.split(","))
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    alpha = np.array([float(r["alpha_j"]) for r in rows])

    def opt_int(v):
        return None if v == "None" else int(v)

    return CoherenceProfile(alpha, fields["method"], r=opt_int(fields["r"]),
                            n_samples=opt_int(fields["N"]), seed=opt_int(fields["seed"]))


def write_distribution_csv(p: SamplingDistribution, path, comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        out = csv.writer(fh)
        out.writerow(["j", "p_j"])
        for j, v in enumerate(p.p):
            out.writerow([j, repr(float(v))])
