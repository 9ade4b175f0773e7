import numpy as np
import pytest

from gencs.darcy import build_dataset
from gencs.generator import GgnModel, forward
from gencs.training import (TrainingDivergenceError, encode_dataset, init_autoencoder, load_autoencoder,
                            reconstruct, reconstruction_mse, save_autoencoder, train_autoencoder,
                            write_training_log, _loss_and_grads)


@pytest.fixture(scope="module")
def fields():
    return build_dataset(24, (16,), seed=0).fields[16]


def flat_params(model):
    return [*model.enc_weights, *model.enc_biases, *model.decoder.layers, model.decoder.final]


def test_overfit_single_field(fields):
    model = train_autoencoder(fields[:1], k=4, widths=(4, 16, 64), epochs=2000, lr=1e-3, seed=0)
    assert reconstruction_mse(model, fields[:1]) <= 1e-4


def test_decoder_is_valid_ggn(fields):
    model = train_autoencoder(fields[:8], k=4, widths=(4, 8, 16), epochs=2, seed=0)
    assert isinstance(model.decoder, GgnModel)
    assert model.decoder.widths == (4, 8, 16) and model.decoder.signal_dim == 256
    assert len(model.log) == 3


def test_one_epoch_changes_weights(fields):
    init = init_autoencoder(16, (4, 8, 16), seed=1)
    model = train_autoencoder(fields[:8], k=4, widths=(4, 8, 16), epochs=1, seed=1)
    assert all(not np.array_equal(a, b) for a, b in zip(flat_params(init), flat_params(model)))


def test_zero_epochs_forbidden(fields):
    with pytest.raises(ValueError):
        train_autoencoder(fields[:4], k=4, widths=(4, 8), epochs=0)


def test_bad_widths(fields):
    with pytest.raises(ValueError):
        train_autoencoder(fields[:4], k=4, widths=(3, 8), epochs=1)
    with pytest.raises(ValueError):
        train_autoencoder(fields[:4], k=4, widths=(4, 512), epochs=1)


def test_deterministic(fields):
    a = train_autoencoder(fields[:8], k=4, widths=(4, 8, 16), epochs=3, seed=2)
    b = train_autoencoder(fields[:8], k=4, widths=(4, 8, 16), epochs=3, seed=2)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(flat_params(a), flat_params(b)))


def test_loss_decreases(fields):
    model = train_autoencoder(fields, k=4, widths=(4, 16, 64), epochs=30, seed=3)
    assert model.log[-1] < model.log[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(fields):
    with pytest.raises(TrainingDivergenceError) as info:
        train_autoencoder(fields[:4] * 1e200, k=4, widths=(4, 8), epochs=3, seed=0)
    assert info.value.epoch == 1


def test_backprop_matches_finite_differences(fields):
    model = init_autoencoder(16, (3, 5, 9), seed=4)
    params = [p.copy() for p in flat_params(model)]
    n_enc, n_dec = len(model.enc_weights), model.decoder.depth
    X = fields[:3]
    _, grads = _loss_and_grads(params, n_enc, n_dec, X)
    rng = np.random.default_rng(0)
    h = 1e-6
    for p, g in zip(params, grads):
        for _ in range(3):
            idx = tuple(rng.integers(s) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            up = _loss_and_grads(params, n_enc, n_dec, X)[0]
            p[idx] = old - h
            dn = _loss_and_grads(params, n_enc, n_dec, X)[0]
            p[idx] = old
            assert g[idx] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-9)


def test_encode_consistency(fields):
    model = train_autoencoder(fields, k=4, widths=(4, 16, 64), epochs=20, seed=5)
    Z = encode_dataset(model, fields)
    assert Z.shape == (len(fields), 4)
    recon = forward(model.decoder, Z)
    np.testing.assert_allclose(recon, reconstruct(model, fields), rtol=1e-12, atol=1e-14)
    assert np.mean((recon - fields) ** 2) <= 1.1 * model.log[-1]


def test_zero_field_zero_latent():
    model = init_autoencoder(16, (4, 8), seed=0)
    assert np.all(encode_dataset(model, np.zeros((1, 256))) == 0)


def test_encode_shape_mismatch(fields):
    model = init_autoencoder(16, (4, 8), seed=0)
    with pytest.raises(ValueError):
        encode_dataset(model, np.zeros((2, 100)))


def test_checkpoint_round_trip(tmp_path, fields):
    model = train_autoencoder(fields[:4], k=4, widths=(4, 8, 16), epochs=2, seed=6)
    save_autoencoder(model, tmp_path / "ae.bin")
    back = load_autoencoder(tmp_path / "ae.bin")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(flat_params(model), flat_params(back)))
    write_training_log(model, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 4
