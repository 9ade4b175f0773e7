"""Log-normal permeability fields and a finite-volume Darcy solver on the unit square.

Unknowns sit on the ``res x res`` interior nodes of a uniform grid with
spacing ``h = 1 / (res + 1)``; ``u = 0`` on the boundary nodes.  Face
permeabilities are harmonic means of the two adjacent nodal values, and
faces touching the boundary use the interior node's value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .container import read_container, write_container
from .seeding import rng_for

SOLVER_RTOL = 1e-10


class InvalidFieldError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, residual: float):
        super().__init__(f"CG stopped at relative residual {residual:.3e}")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    a: np.ndarray
    corr_len: float = 0.0
    log_var: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidFieldError("permeability must be a square grid")
        if not np.all(a > 0):
            raise InvalidFieldError("permeability must be strictly positive")
        object.__setattr__(self, "a", a)

    @property
    def res(self) -> int:
        return self.a.shape[0]


def gaussian_random_field(res: int, corr_len: float, var: float, rng: np.random.Generator) -> np.ndarray:
    """Periodic stationary Gaussian field with a squared-exponential covariance, pointwise variance ``var``."""
    kx = np.fft.fftfreq(res, d=1.0 / res)
    k2 = kx[:, None] ** 2 + kx[None, :] ** 2
    amp = np.exp(-((2.0 * np.pi * corr_len) ** 2) * k2 / 4.0)
    noise = rng.standard_normal((res, res))
    g = np.fft.ifft2(np.fft.fft2(noise) * amp).real
    # pointwise variance of the filtered white noise is mean(amp^2)
    return g * np.sqrt(var / np.mean(amp ** 2))


def sample_permeability(res: int, corr_len: float = 0.1, log_var: float = 1.0, seed: int = 0) -> PermeabilityField:
    if res < 8:
        raise ValueError("resolution must be at least 8")
    if log_var == 0:
        return PermeabilityField(np.ones((res, res)), corr_len, log_var, seed)
    g = gaussian_random_field(res, corr_len, log_var, rng_for(seed, "permeability"))
    return PermeabilityField(np.exp(g), corr_len, log_var, seed)


def _face_coefficients(a: np.ndarray):
    # x-direction faces: (res+1, res); y-direction: (res, res+1); boundary faces copy the node value
    ax = np.empty((a.shape[0] + 1, a.shape[1]))
    ax[1:-1] = 2.0 * a[:-1] * a[1:] / (a[:-1] + a[1:])
    ax[0], ax[-1] = a[0], a[-1]
    ay = np.empty((a.shape[0], a.shape[1] + 1))
    ay[:, 1:-1] = 2.0 * a[:, :-1] * a[:, 1:] / (a[:, :-1] + a[:, 1:])
    ay[:, 0], ay[:, -1] = a[:, 0], a[:, -1]
    return ax, ay


def darcy_matrix(a: np.ndarray) -> sp.csr_matrix:
    """Sparse SPD matrix of ``-div(a grad u)`` with homogeneous Dirichlet data (row-major unknowns)."""
    n = a.shape[0]
    h2 = 1.0 / (n + 1) ** 2
    ax, ay = _face_coefficients(a)
    idx = np.arange(n * n).reshape(n, n)
    diag = (ax[:-1] + ax[1:] + ay[:, :-1] + ay[:, 1:]).ravel() / h2
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [diag]
    for (r, c, v) in (
        (idx[:-1], idx[1:], ax[1:-1]),
        (idx[1:], idx[:-1], ax[1:-1]),
        (idx[:, :-1], idx[:, 1:], ay[:, 1:-1]),
        (idx[:, 1:], idx[:, :-1], ay[:, 1:-1]),
    ):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(-v.ravel() / h2)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n * n, n * n))


def solve_darcy(a, f, res: int | None = None) -> np.ndarray:
    """Pressure ``u`` on the interior nodes for permeability ``a`` and source ``f``.

    Jacobi-preconditioned CG on the SPD system, required to reach a relative
    residual of 1e-10.
    """
    a = a.a if isinstance(a, PermeabilityField) else np.asarray(a, dtype=np.float64)
    if not np.all(a > 0):
        raise InvalidFieldError("permeability must be strictly positive")
    res = a.shape[0] if res is None else res
    f = np.broadcast_to(np.asarray(f, dtype=np.float64), (res, res))
    if a.shape != (res, res):
        raise ValueError(f"permeability grid {a.shape} does not match resolution {res}")
    A = darcy_matrix(a)
    rhs = f.ravel()
    norm = np.linalg.norm(rhs)
    if norm == 0:
        return np.zeros((res, res))
    dinv = 1.0 / A.diagonal()
    precond = LinearOperator(A.shape, matvec=lambda v: dinv * v)
    u, _ = cg(A, rhs, rtol=1e-13, atol=0.0, maxiter=20 * res * res, M=precond)
    resid = np.linalg.norm(A @ u - rhs) / norm
    if resid > SOLVER_RTOL:
        raise SolverError(resid)
    return u.reshape(res, res)


def boundary_outflow(a, u) -> float:
    """Net flux of ``-a grad u`` leaving the domain through the boundary faces."""
    a = a.a if isinstance(a, PermeabilityField) else np.asarray(a, dtype=np.float64)
    ax, ay = _face_coefficients(a)
    # face length h times gradient (u - 0) / h
    return float(np.sum(ax[0] * u[0]) + np.sum(ax[-1] * u[-1]) + np.sum(ay[:, 0] * u[:, 0])
                 + np.sum(ay[:, -1] * u[:, -1]))


def node_coordinates(res: int) -> np.ndarray:
    return np.arange(1, res + 1) / (res + 1)


def area_downsample(field: np.ndarray, res: int) -> np.ndarray:
    n = field.shape[-1]
    if n % res:
        raise ValueError(f"cannot area-average {n} x {n} onto {res} x {res}")
    f = n // res
    return field.reshape(*field.shape[:-2], res, f, res, f).mean(axis=(-3, -1))


@dataclass
class DarcyDataset:
    fields: dict                       # resolution -> (n, res*res) array
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return next(iter(self.fields.values())).shape[0]


def normalize_field(u: np.ndarray) -> np.ndarray:
    v = u - u.mean()
    scale = np.abs(v).max()
    return v / scale if scale > 0 else v


def build_dataset(n: int, resolutions=(16, 32, 64), seed: int = 0, corr_len: float = 0.1,
                  log_var: float = 1.0, source: float = 1.0) -> DarcyDataset:
    """Solve ``n`` instances at the finest resolution, area-average down, normalize each field.

    Instance ``i`` draws its permeability from the stream ``(seed, i)``.
    Normalization: zero mean, unit max-abs, applied per field and per resolution.
    """
    if n < 1:
        raise ValueError("need at least one instance")
    resolutions = sorted(int(r) for r in resolutions)
    finest = resolutions[-1]
    out = {r: np.empty((n, r * r)) for r in resolutions}
    for i in range(n):
        perm = sample_permeability(finest, corr_len, log_var, seed=int(rng_for(seed, "instance", i).integers(2 ** 62)))
        u = solve_darcy(perm, source)
        for r in resolutions:
            out[r][i] = normalize_field(area_downsample(u, r) if r != finest else u).ravel()
    meta = {"corr_len": corr_len, "log_var": log_var, "source": source, "normalization": "zero-mean,unit-max-abs"}
    return DarcyDataset(out, seed, meta)


def split_indices(n: int, val_fraction: float = 0.1) -> dict:
    """First half train, second half test; the last ``val_fraction`` of the train half is held out for validation."""
    half = n // 2
    n_val = int(np.ceil(val_fraction * half)) if half > 1 else 0
    idx = np.arange(n)
    return {"train": idx[:half - n_val], "val": idx[half - n_val:half], "test": idx[half:]}


def save_dataset(ds: DarcyDataset, res: int, path) -> None:
    meta = {"n": ds.n, "res": res, "seed": ds.seed, **ds.meta}
    write_container(path, "darcy-dataset", meta, [("fields", ds.fields[res])])


def load_dataset_file(path) -> tuple[dict, np.ndarray]:
    meta, blocks = read_container(path, "darcy-dataset")
    return meta, blocks["fields"]
