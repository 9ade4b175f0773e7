"""Unsupervised MLP autoencoder whose decoder is a (k, d) generalized generative network.

The encoder is an ordinary ReLU MLP with biases (widths mirror the decoder's
in reverse); the decoder has bias-free hidden layers and a linear output
layer, so it is a valid ``GgnModel``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .generator import GgnModel, random_model
from .optim import Adam
from .seeding import rng_for

CHECKPOINT_VERSION = 1


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class AutoencoderModel:
    enc_weights: list
    enc_biases: list
    decoder: GgnModel
    resolution: int
    log: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.decoder.k


def _encode(weights, biases, X):
    acts = [X]
    h = X
    for i, (w, c) in enumerate(zip(weights, biases)):
        a = h @ w.T + c
        h = np.maximum(a, 0.0) if i < len(weights) - 1 else a
        acts.append(h)
    return acts


def _decode(layers, final, Z):
    acts = [Z]
    h = Z
    for w in layers:
        h = np.maximum(h @ w.T, 0.0)
        acts.append(h)
    return acts, h @ final.T


def _loss_and_grads(params, n_enc, n_dec, X):
    enc_w = params[:n_enc]
    enc_b = params[n_enc:2 * n_enc]
    dec = params[2 * n_enc:2 * n_enc + n_dec]
    final = params[-1]
    enc_acts = _encode(enc_w, enc_b, X)
    Z = enc_acts[-1]
    dec_acts, out = _decode(dec, final, Z)
    R = out - X
    loss = float(np.mean(R * R))
    g = 2.0 * R / R.size

    grads_final = g.T @ dec_acts[-1]
    g = g @ final
    grads_dec = [None] * n_dec
    for i in reversed(range(n_dec)):
        g = g * (dec_acts[i + 1] > 0)
        grads_dec[i] = g.T @ dec_acts[i]
        g = g @ dec[i]
    grads_w = [None] * n_enc
    grads_b = [None] * n_enc
    for i in reversed(range(n_enc)):
        if i < n_enc - 1:
            g = g * (enc_acts[i + 1] > 0)
        grads_w[i] = g.T @ enc_acts[i]
        grads_b[i] = g.sum(axis=0)
        g = g @ enc_w[i]
    return loss, grads_w + grads_b + grads_dec + [grads_final]


def reconstruct(model: AutoencoderModel, X) -> np.ndarray:
    Z = _encode(model.enc_weights, model.enc_biases, np.asarray(X, dtype=np.float64))[-1]
    return _decode(model.decoder.layers, model.decoder.final, Z)[1]


def reconstruction_mse(model: AutoencoderModel, X) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(np.mean((reconstruct(model, X) - X) ** 2))


def init_autoencoder(resolution: int, widths, seed: int = 0) -> AutoencoderModel:
    widths = [int(w) for w in widths]
    M = resolution * resolution
    decoder = random_model(widths, (resolution, resolution), seed)
    enc_dims = [M] + widths[::-1]
    rng = rng_for(seed, "encoder-init")
    enc_w = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(enc_dims, enc_dims[1:])]
    enc_b = [np.zeros(b) for b in enc_dims[1:]]
    return AutoencoderModel(enc_w, enc_b, decoder, resolution)


def train_autoencoder(fields, k: int = 16, widths=None, epochs: int = 2000, lr: float = 1e-3, batch: int = 32,
                      seed: int = 0, resolution: int | None = None) -> AutoencoderModel:
    """Minimize mean squared reconstruction error with minibatch Adam.

    ``fields`` is an ``(n, res*res)`` array.  ``widths`` defaults to
    ``(k, 4k, 16k)``; the first entry must equal ``k``.  The log holds the
    full-data loss before training (epoch 0) and after every epoch.
    """
    X = np.asarray(fields, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a nonempty (n, M) array of fields")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if resolution is None:
        resolution = int(round(np.sqrt(X.shape[1])))
    if resolution * resolution != X.shape[1]:
        raise ValueError("fields are not square grids")
    widths = (k, 4 * k, 16 * k) if widths is None else tuple(widths)
    if widths[0] != k:
        raise ValueError("first width must equal the latent dimension k")
    if widths[-1] > X.shape[1]:
        raise ValueError("final width exceeds the signal dimension")

    model = init_autoencoder(resolution, widths, seed)
    n_enc = len(model.enc_weights)
    n_dec = model.decoder.depth
    params = ([w.copy() for w in model.enc_weights] + [b.copy() for b in model.enc_biases]
              + [w.copy() for w in model.decoder.layers] + [model.decoder.final.copy()])
    opt = Adam(lr)
    n = X.shape[0]
    log = [_loss_and_grads(params, n_enc, n_dec, X)[0]]
    for epoch in range(1, epochs + 1):
        order = rng_for(seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, batch):
            loss, grads = _loss_and_grads(params, n_enc, n_dec, X[order[start:start + batch]])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch)
            opt.step(params, grads)
        full = _loss_and_grads(params, n_enc, n_dec, X)[0]
        if not np.isfinite(full):
            raise TrainingDivergenceError(epoch)
        log.append(full)

    decoder = GgnModel(tuple(params[2 * n_enc:2 * n_enc + n_dec]), params[-1], (resolution, resolution))
    return AutoencoderModel(params[:n_enc], params[n_enc:2 * n_enc], decoder, resolution, log)


def encode_dataset(model: AutoencoderModel, fields) -> np.ndarray:
    X = np.asarray(fields, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.resolution ** 2:
        raise ValueError(f"fields must have shape (n, {model.resolution ** 2})")
    return _encode(model.enc_weights, model.enc_biases, X)[-1]


def save_autoencoder(model: AutoencoderModel, path) -> None:
    dec = model.decoder
    blocks = [(f"W{i + 1}", w) for i, w in enumerate(dec.layers)] + [("W", dec.final)]
    blocks += [(f"E{i + 1}", w) for i, w in enumerate(model.enc_weights)]
    blocks += [(f"e{i + 1}", b) for i, b in enumerate(model.enc_biases)]
    meta = {"version": CHECKPOINT_VERSION, "depth": dec.depth, "widths": list(dec.widths), "grid": list(dec.grid),
            "encoder_layers": len(model.enc_weights), "resolution": model.resolution}
    write_container(path, "autoencoder", meta, blocks)


def load_autoencoder(path) -> AutoencoderModel:
    meta, b = read_container(path, "autoencoder")
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported autoencoder checkpoint version {meta['version']}")
    dec = GgnModel(tuple(b[f"W{i + 1}"] for i in range(meta["depth"])), b["W"], tuple(meta["grid"]))
    n_enc = meta["encoder_layers"]
    return AutoencoderModel([b[f"E{i + 1}"] for i in range(n_enc)], [b[f"e{i + 1}"] for i in range(n_enc)],
                            dec, meta["resolution"])


def write_training_log(model: AutoencoderModel, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(model.log):
            out.writerow([epoch, repr(float(loss))])
