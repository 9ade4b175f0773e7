"""(k, d) generalized generative networks and the bicubic upscaling operator.

A generator maps a latent ``z`` in R^k to a flattened signal in R^M via::

    G(z) = W relu(W_d relu(... relu(W_1 z)))

with bias-free hidden layers, monotone widths ``k = k_0 <= k_1 <= ... <= k_d``
and a final linear map ``W`` (M x k_d).  All routines accept a single latent
of shape ``(k,)`` or a batch of shape ``(n, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .container import read_container, write_container
from .seeding import rng_for

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class GgnModel:
    layers: tuple[np.ndarray, ...]
    final: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        layers = tuple(np.array(w, dtype=np.float64) for w in self.layers)
        final = np.array(self.final, dtype=np.float64)
        for w in (*layers, final):
            w.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "final", final)
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))

        if not layers:
            raise ValueError("a (k, d) network needs depth d >= 1")
        widths = [layers[0].shape[1]] + [w.shape[0] for w in layers]
        for i, w in enumerate(layers):
            if w.ndim != 2 or w.shape[1] != widths[i]:
                raise ValueError(f"layer {i + 1} has shape {w.shape}, expected (*, {widths[i]})")
        if widths[0] < 2:
            raise ValueError("latent dimension k must be >= 2")
        if any(b < a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"widths must be nondecreasing, got {widths}")
        M = self.grid[0] * self.grid[1]
        if final.shape != (M, widths[-1]):
            raise ValueError(f"final weight has shape {final.shape}, expected {(M, widths[-1])}")
        if M < widths[-1]:
            raise ValueError("signal dimension M must be at least k_d")
        if not all(np.isfinite(w).all() for w in (*layers, final)):
            raise ValueError("non-finite weights")

    @property
    def k(self) -> int:
        return self.layers[0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.k, *(w.shape[0] for w in self.layers))

    @property
    def signal_dim(self) -> int:
        return self.grid[0] * self.grid[1]


def random_model(widths, grid, seed: int = 0) -> GgnModel:
    """Random GGN with i.i.d. N(0, 2/fan_in) weights; ``widths = (k, k_1, ..., k_d)``."""
    rng = rng_for(seed, "ggn-init")
    widths = [int(w) for w in widths]
    layers = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(widths, widths[1:])]
    M = int(grid[0]) * int(grid[1])
    final = rng.normal(0.0, np.sqrt(2.0 / widths[-1]), size=(M, widths[-1]))
    return GgnModel(tuple(layers), final, tuple(grid))


def smooth_random_model(widths, grid, seed: int = 0, corr_len: float = 0.15) -> GgnModel:
    """Random GGN whose output atoms are smooth fields.

    Columns of the final layer are white noise passed through a Gaussian
    low-pass filter, which mimics the spectral decay of learned decoders for
    elliptic PDE solutions.
    """
    base = random_model(widths, grid, seed)
    H, W = base.grid
    kx = np.fft.fftfreq(H, d=1.0 / H)[:, None]
    ky = np.fft.fftfreq(W, d=1.0 / W)[None, :]
    filt = np.exp(-((2 * np.pi * corr_len) ** 2) * (kx ** 2 + ky ** 2) / 4.0)
    cols = base.final.T.reshape(-1, H, W)
    smooth = np.fft.ifft2(np.fft.fft2(cols) * filt).real
    smooth *= np.sqrt(2.0 / base.widths[-1]) / smooth.std(axis=(1, 2), keepdims=True)
    return GgnModel(base.layers, smooth.reshape(-1, H * W).T, base.grid)


def _check_latent(model: GgnModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.k or z.ndim not in (1, 2):
        raise ValueError(f"latent has shape {z.shape}, expected (..., {model.k})")
    return z


def _activations(model: GgnModel, z: np.ndarray) -> list[np.ndarray]:
    # pre-activations of every hidden layer, batch-major
    pre = []
    h = z
    for w in model.layers:
        a = h @ w.T
        pre.append(a)
        h = np.maximum(a, 0.0)
    return pre


def forward(model: GgnModel, z) -> np.ndarray:
    z = _check_latent(model, z)
    h = z
    for w in model.layers:
        h = np.maximum(h @ w.T, 0.0)
    return h @ model.final.T


def forward_grad(model: GgnModel, z, cotangent) -> np.ndarray:
    """Gradient of ``<forward(model, z), cotangent>`` with respect to ``z``.

    The ReLU derivative at exactly zero is taken to be 0.
    """
    z = _check_latent(model, z)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape[-1] != model.signal_dim or cot.ndim != z.ndim:
        raise ValueError(f"cotangent has shape {cot.shape}, expected (..., {model.signal_dim})")
    pre = _activations(model, z)
    g = cot @ model.final
    for w, a in zip(reversed(model.layers), reversed(pre)):
        g = (g * (a > 0.0)) @ w
    return g


def cone_count_log_bound(k: int, d: int, k_d: int) -> float:
    """Natural log of the bound (2e k_d / k)^(k d) on the number of range cones.

    The difference set R(G) - R(G) needs at most the square of this count,
    i.e. twice the returned value.
    """
    if not (2 <= k <= k_d) or d < 1:
        raise ValueError(f"need 2 <= k <= k_d and d >= 1, got k={k}, d={d}, k_d={k_d}")
    return k * d * np.log(2.0 * np.e * k_d / k)


def range_subspace_basis(model: GgnModel, upscaler: "UpscaleOperator | None" = None) -> np.ndarray:
    """Orthonormal basis of the column space of the final layer (M x r).

    With an upscaler, the basis spans ``U W`` instead, i.e. the subspace
    holding every upscaled generator output.
    """
    W = model.final
    if upscaler is not None:
        W = upscale(upscaler, W.T).T
    u, s, _ = np.linalg.svd(W, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((W.shape[0], 0))
    r = int(np.sum(s > RANK_RTOL * s[0]))
    return u[:, :r]


def save_model(model: GgnModel, path) -> None:
    blocks = [(f"W{i + 1}", w) for i, w in enumerate(model.layers)] + [("W", model.final)]
    meta = {"depth": model.depth, "widths": list(model.widths), "grid": list(model.grid),
            "signal_dim": model.signal_dim}
    write_container(path, "ggn", meta, blocks)


def load_model(path) -> GgnModel:
    meta, blocks = read_container(path, "ggn")
    layers = tuple(blocks[f"W{i + 1}"] for i in range(meta["depth"]))
    return GgnModel(layers, blocks["W"], tuple(meta["grid"]))


# ---------------------------------------------------------------------------
# bicubic upscaling

def _catmull_rom(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


def interpolation_matrix(src: int, dst: int) -> np.ndarray:
    """1-D Catmull-Rom resampling matrix (dst x src), pixel-center aligned, edges clamped."""
    mat = np.zeros((dst, src))
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    base = np.floor(x).astype(int)
    for off in range(-1, 3):
        idx = base + off
        wts = _catmull_rom(x - idx)
        np.add.at(mat, (np.arange(dst), np.clip(idx, 0, src - 1)), wts)
    return mat


@dataclass(frozen=True)
class UpscaleOperator:
    """Bicubic (Catmull-Rom, a = -0.5) map from an r x r grid to an R x R grid."""

    src: int
    dst: int
    kernel: str = "bicubic"

    def __post_init__(self):
        if self.src < 1 or self.dst < self.src:
            raise ValueError(f"need 1 <= src <= dst, got {self.src} -> {self.dst}")
        if self.kernel != "bicubic":
            raise ValueError("only the bicubic kernel is supported")

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.src == self.dst:
            return np.eye(self.src)
        return interpolation_matrix(self.src, self.dst)

    def adjoint(self, field) -> np.ndarray:
        """Transpose of :func:`upscale`, mapping R x R signals back to r x r."""
        y = np.asarray(field, dtype=np.float64)
        if y.shape[-1] != self.dst ** 2:
            raise ValueError(f"field length {y.shape[-1]} != {self.dst ** 2}")
        if self.src == self.dst:
            return y.copy()
        A = self.matrix
        grid = y.reshape(*y.shape[:-1], self.dst, self.dst)
        out = A.T @ grid @ A
        return out.reshape(*y.shape[:-1], self.src ** 2)


def upscale(op: UpscaleOperator, field) -> np.ndarray:
    x = np.asarray(field, dtype=np.float64)
    if x.shape[-1] != op.src ** 2:
        raise ValueError(f"field length {x.shape[-1]} != {op.src ** 2} for resolution {op.src}")
    if op.src == op.dst:
        return x.copy()
    A = op.matrix
    grid = x.reshape(*x.shape[:-1], op.src, op.src)
    out = A @ grid @ A.T
    return out.reshape(*x.shape[:-1], op.dst ** 2)
