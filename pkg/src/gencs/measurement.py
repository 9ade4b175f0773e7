"""Unitary Fourier operator, variable-density sampling, and the S, D, I-hat operators.

Signals are flattened row-major grids of length M = H * W.  The measurement
model is ``b = S D F x (+ eta)`` where ``F`` is the orthonormal 2-D DFT, ``S``
draws ``m`` frequencies i.i.d. from a distribution ``p`` (with replacement)
and ``D`` weights each sample by ``1 / sqrt(p_j)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

PROB_SUM_TOL = 1e-12


class InvalidDistributionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# unitary operators

class DFT2:
    """Orthonormal 2-D DFT on an H x W grid acting on flattened signals."""

    def __init__(self, grid):
        self.grid = (int(grid[0]), int(grid[1]))
        self.size = self.grid[0] * self.grid[1]

    def _as_grid(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.size:
            raise ValueError(f"signal length {x.shape[-1]} != {self.size} for grid {self.grid}")
        return x.reshape(*x.shape[:-1], *self.grid)

    def apply(self, x) -> np.ndarray:
        y = np.fft.fft2(self._as_grid(x), norm="ortho")
        return y.reshape(*y.shape[:-2], self.size)

    def adjoint(self, y) -> np.ndarray:
        x = np.fft.ifft2(self._as_grid(y), norm="ortho")
        return x.reshape(*x.shape[:-2], self.size)

    def __eq__(self, other):
        return isinstance(other, DFT2) and other.grid == self.grid

    def __repr__(self):
        return f"DFT2(grid={self.grid})"


class MatrixOperator:
    """Explicit unitary matrix; used for small test doubles (identity, 1-D DFT)."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.complex128)
        self.size = self.matrix.shape[0]
        if not np.allclose(self.matrix.conj().T @ self.matrix, np.eye(self.size), atol=1e-12):
            raise ValueError("operator matrix is not unitary")

    @classmethod
    def identity(cls, M: int) -> "MatrixOperator":
        return cls(np.eye(M))

    @classmethod
    def dft1(cls, M: int) -> "MatrixOperator":
        return cls(np.fft.fft(np.eye(M), norm="ortho", axis=0))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x) @ self.matrix.T

    def adjoint(self, y) -> np.ndarray:
        return np.asarray(y) @ self.matrix.conj()


def dft2(field, grid) -> np.ndarray:
    """Orthonormal 2-D DFT of a flattened (or H x W) field, returned flattened."""
    op = DFT2(grid)
    x = np.asarray(field)
    if x.shape[-2:] == op.grid and x.shape[-1] != op.size:
        x = x.reshape(*x.shape[:-2], op.size)
    return op.apply(x)


def idft2(spectrum, grid) -> np.ndarray:
    return DFT2(grid).adjoint(spectrum)


# ---------------------------------------------------------------------------
# sampling distributions and ensembles

@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64).ravel()
        if p.size == 0 or not np.isfinite(p).all() or (p < 0).any():
            raise InvalidDistributionError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise InvalidDistributionError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_weights(cls, w) -> "SamplingDistribution":
        w = np.asarray(w, dtype=np.float64).ravel()
        total = w.sum()
        if not total > 0:
            raise InvalidDistributionError("all-zero weights cannot be normalized")
        p = w / total
        # one correction pass brings the sum within a few ulps of 1
        p = p / p.sum()
        return cls(p)

    @classmethod
    def uniform(cls, M: int) -> "SamplingDistribution":
        return cls(np.full(M, 1.0 / M))

    @classmethod
    def uniform_on(cls, mask) -> "SamplingDistribution":
        return cls.from_weights(np.asarray(mask, dtype=np.float64))

    @property
    def size(self) -> int:
        return self.p.size

    @property
    def support(self) -> np.ndarray:
        return self.p > 0


@dataclass(frozen=True, eq=False)
class MeasurementEnsemble:
    indices: np.ndarray
    weights: np.ndarray
    dist: SamplingDistribution
    operator: object
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.indices.shape[-1]

    @property
    def batched(self) -> bool:
        return self.indices.ndim == 2


def stack_ensembles(ensembles) -> MeasurementEnsemble:
    """Combine equal-size ensembles into one acting row-wise on a batch of signals."""
    ensembles = list(ensembles)
    if len({e.m for e in ensembles}) != 1:
        raise ValueError("stacked ensembles must share m")
    idx = np.stack([e.indices for e in ensembles])
    w = np.stack([e.weights for e in ensembles])
    return MeasurementEnsemble(idx, w, ensembles[0].dist, ensembles[0].operator, None,
                               {"members": [e.seed for e in ensembles]})


def draw_ensemble(p: SamplingDistribution, m: int, seed: int, operator) -> MeasurementEnsemble:
    """Draw ``m`` i.i.d. indices from ``p``.

    Draw ``i`` is the ``i``-th output of a Philox counter stream keyed by
    ``seed``, so it depends only on ``(seed, i)``: the first ``n`` draws of a
    size-``m`` ensemble coincide with a size-``n`` ensemble.
    """
    if m < 1:
        raise ValueError("need at least one measurement")
    if not isinstance(p, SamplingDistribution):
        p = SamplingDistribution(p)
    if operator.size != p.size:
        raise ValueError(f"operator size {operator.size} != distribution size {p.size}")
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    u = gen.random(m)
    cdf = np.cumsum(p.p)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    last = np.flatnonzero(p.support)[-1]
    idx = np.minimum(idx, last)
    w = 1.0 / np.sqrt(p.p[idx])
    idx.setflags(write=False)
    w.setflags(write=False)
    return MeasurementEnsemble(idx, w, p, operator, seed)


def measurement_counts(e: MeasurementEnsemble) -> np.ndarray:
    return np.bincount(e.indices, minlength=e.dist.size)


def apply_sdf(e: MeasurementEnsemble, field) -> np.ndarray:
    """``S D F x``: entry ``i`` is ``w_i * (F x)_{j_i}``; batches along leading axes."""
    spec = e.operator.apply(field)
    if e.batched:
        if spec.ndim != 2 or spec.shape[0] != e.indices.shape[0]:
            raise ValueError("stacked ensemble needs one signal per member")
        return np.take_along_axis(spec, e.indices, axis=-1) * e.weights
    return spec[..., e.indices] * e.weights


def sdf_adjoint(e: MeasurementEnsemble, y) -> np.ndarray:
    """Complex adjoint ``F* D S*`` of :func:`apply_sdf`."""
    y = np.asarray(y)
    if y.shape[-1] != e.m:
        raise ValueError(f"residual length {y.shape[-1]} != m = {e.m}")
    M = e.dist.size
    lead = y.shape[:-1]
    rows = int(np.prod(lead))
    contrib = (y * e.weights).reshape(rows, e.m)
    if e.batched:
        if lead != (e.indices.shape[0],):
            raise ValueError("stacked ensemble needs one residual per member")
        idx = e.indices
    else:
        idx = np.broadcast_to(e.indices, (rows, e.m))
    # scatter-add duplicates: S* sums repeated draws of the same frequency
    flat = (np.arange(rows)[:, None] * M + idx).ravel()
    re = np.bincount(flat, contrib.real.ravel(), minlength=rows * M)
    im = np.bincount(flat, contrib.imag.ravel(), minlength=rows * M)
    scattered = (re + 1j * im).reshape(*lead, M)
    return e.operator.adjoint(scattered)


def apply_sdf_adjoint(e: MeasurementEnsemble, residual) -> np.ndarray:
    """Real part of the adjoint chain; the gradient of ``||SDFx - b||^2`` is twice this at the residual."""
    return sdf_adjoint(e, residual).real


def support_projection(p: SamplingDistribution, spectrum) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(spectrum)
    if s.shape[-1] != p.size:
        raise ValueError(f"spectrum length {s.shape[-1]} != {p.size}")
    mask = p.support
    return np.where(mask, s, 0), np.where(mask, 0, s)


# ---------------------------------------------------------------------------
# file formats

def save_distribution(p: SamplingDistribution, path, seed_policy: str = "philox(seed), draw i = counter i",
                      **extra) -> None:
    doc = {"M": p.size, "p": [float(v) for v in p.p], "seed_policy": seed_policy, **extra}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_distribution(path) -> SamplingDistribution:
    with open(path) as fh:
        doc = json.load(fh)
    if len(doc["p"]) != doc["M"]:
        raise InvalidDistributionError(f"{path}: M={doc['M']} but {len(doc['p'])} probabilities")
    return SamplingDistribution(np.array(doc["p"], dtype=np.float64))


def write_measurements_csv(e: MeasurementEnsemble, b, path) -> None:
    b = np.asarray(b)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j_i", "w_i", "re_b_i", "im_b_i"])
        for i, (j, w, v) in enumerate(zip(e.indices, e.weights, b)):
            out.writerow([i, int(j), repr(float(w)), repr(float(v.real)), repr(float(v.imag))])


def read_measurements_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    j = np.array([int(r["j_i"]) for r in rows])
    w = np.array([float(r["w_i"]) for r in rows])
    b = np.array([complex(float(r["re_b_i"]), float(r["im_b_i"])) for r in rows])
    return j, w, b
