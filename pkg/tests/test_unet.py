import logging

import numpy as np
import pytest

from fsgcc_tde import nn, unet
from fsgcc_tde.unet import (Architecture, ModelFileError, TrainConfig, UNetModel, denoise,
                            load_model, save_model, split_indices, train, unet_backward)

SMALL = Architecture((2, 4), (4, 2, 1))

# Loss values are O(1), so central differences carry round-off near
# 1e-16 / 1e-5 = 1e-11. Relative errors use max(|analytic|, |numeric|, 1e-6)
# as denominator, which keeps exactly-zero gradients (conv biases ahead of
# batch norm) from dividing noise by noise.
GRAD_FLOOR = 1e-6


def _randomized_small_model(seed=3):
    m = UNetModel.create(SMALL, seed=seed)
    rng = np.random.default_rng(seed)
    for name, p in m.params.items():
        if name.endswith((".b", ".beta")):
            p[:] = rng.normal(0, 0.1, p.shape)
        elif name.endswith(".gamma"):
            p[:] = rng.uniform(0.5, 1.5, p.shape)
    return m


@pytest.mark.parametrize("h,w", [(16, 64), (16, 128), (16, 256), (32, 64), (32, 128), (32, 256)])
def test_output_shape_matches_input(h, w):
    m = UNetModel.create(seed=0).eval_mode()
    x = np.random.default_rng(0).random((1, 1, h, w))
    assert unet.unet_forward(m, x).shape == (1, 1, h, w)


def test_rejects_non_power_of_two_input():
    m = UNetModel.create(seed=0)
    with pytest.raises(ValueError):
        unet.unet_forward(m, np.zeros((2, 1, 24, 128)))
    with pytest.raises(ValueError):
        unet.unet_forward(m, np.zeros((2, 2, 32, 128)))


def test_zero_input_gives_finite_output():
    m = UNetModel.create(seed=1).eval_mode()
    out, tape = m.forward(np.zeros((1, 1, 32, 128)))
    assert np.all(np.isfinite(out))
    # zero input and zero biases: the first pre-activation is identically zero
    assert not tape[0][4].any()


def test_parameter_count_of_default_architecture():
    m = UNetModel.create()
    assert m.parameter_count() == 506_737
    assert sum(p.size for p in m.params.values()) == 506_737
    assert unet.PUBLISHED_PARAMETER_COUNT == 301_097


def test_output_layer_has_no_batch_norm():
    m = UNetModel.create()
    assert "conv9" not in m.bn
    assert m.params["conv9.w"].shape == (1, 16, 1, 1)
    assert all(m.params[f"conv{i}.w"].shape[2:] == (10, 5) for i in range(1, 9))


def test_gradient_check_on_reduced_model():
    m = _randomized_small_model()
    rng = np.random.default_rng(4)
    x, y = rng.random((2, 4, 1, 8, 16))
    _, grads = unet_backward(m, x, y)
    slots = [(name, idx) for name, p in m.params.items() for idx in np.ndindex(p.shape)]
    picks = rng.choice(len(slots), size=120, replace=False)

    def loss():
        return nn.mse_loss(m.forward(x)[0], y)

    worst = 0.0
    for k in picks:
        name, idx = slots[k]
        p = m.params[name]
        old = p[idx]
        p[idx] = old + 1e-5
        up = loss()
        p[idx] = old - 1e-5
        down = loss()
        p[idx] = old
        num, ana = (up - down) / 2e-5, grads[name][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), GRAD_FLOOR))
    assert worst < 1e-4


def test_backward_needs_training_mode():
    m = UNetModel.create(SMALL).eval_mode()
    with pytest.raises(RuntimeError):
        unet_backward(m, np.zeros((2, 1, 8, 16)), np.zeros((2, 1, 8, 16)))


def test_inference_is_deterministic():
    m = _randomized_small_model()
    x = np.random.default_rng(5).random((3, 8, 16))
    assert denoise(m, x).tobytes() == denoise(m, x).tobytes()


def test_denoise_rescales_by_input_maximum():
    m = _randomized_small_model()
    x = np.random.default_rng(6).random((8, 16))
    assert np.allclose(denoise(m, 5.0 * x), 5.0 * denoise(m, x))


def test_split_is_seeded_and_disjoint():
    tr, va = split_indices(50, 0.2, 7)
    assert len(va) == 10 and not set(tr) & set(va)
    tr2, va2 = split_indices(50, 0.2, 7)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)


def _toy(n=24, seed=8):
    rng = np.random.default_rng(seed)
    clean = np.zeros((n, 8, 16))
    clean[np.arange(n), :, rng.integers(4, 12, n)] = 1.0
    return clean + 0.3 * rng.random(clean.shape), clean


def test_training_reduces_loss_and_returns_best_snapshot():
    x, y = _toy()
    cfg = TrainConfig(max_epochs=8, batch_size=4, seed=1)
    best, hist = train(UNetModel.create(SMALL, seed=2), x, y, cfg)
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]
    _, va = split_indices(len(x), 0.2, 1)
    xs, ys = unet.normalize_max(x)[0][:, None], unet.normalize_max(y)[0][:, None]
    got = unet.evaluate_loss(best, xs[va], ys[va])
    assert got == pytest.approx(min(h["val_loss"] for h in hist), rel=1e-12)
    assert not best.training
    assert best.train_fingerprint == cfg.fingerprint()


def test_training_is_reproducible():
    x, y = _toy()
    cfg = TrainConfig(max_epochs=2, batch_size=4, seed=3)
    a, ha = train(UNetModel.create(SMALL, seed=4), x, y, cfg)
    b, hb = train(UNetModel.create(SMALL, seed=4), x, y, cfg)
    assert ha == hb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_plateau_schedule_and_early_stop(monkeypatch):
    # a validation loss that never improves after epoch 1
    monkeypatch.setattr(unet, "evaluate_loss", lambda *a, **k: 1.0)
    x, y = _toy(12)
    _, hist = train(UNetModel.create(SMALL), x, y, TrainConfig(max_epochs=50, batch_size=4))
    assert len(hist) == 11
    lrs = [h["lr"] for h in hist]
    assert lrs == [1e-3] * 4 + [5e-4] * 3 + [2.5e-4] * 3 + [1.25e-4]


def test_training_rejects_empty_or_mismatched_data():
    m = UNetModel.create(SMALL)
    with pytest.raises(ValueError):
        train(m, np.zeros((0, 8, 16)), np.zeros((0, 8, 16)))
    with pytest.raises(ValueError):
        train(m, np.zeros((4, 8, 16)), np.zeros((4, 8, 32)))


def test_save_load_round_trip(tmp_path):
    x, y = _toy(12)
    m, _ = train(UNetModel.create(SMALL, seed=5), x, y, TrainConfig(max_epochs=1, batch_size=4))
    path = tmp_path / "model.bin"
    save_model(m, path)
    back = load_model(path)
    assert back.arch == m.arch and back.train_fingerprint == m.train_fingerprint
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    for name, bn in m.bn.items():
        assert np.array_equal(back.bn[name].running_mean, bn.running_mean)
        assert np.array_equal(back.bn[name].running_var, bn.running_var)
    assert denoise(back, x).tobytes() == denoise(m, x).tobytes()
    save_model(back, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_load_rejects_damaged_files(tmp_path):
    path = tmp_path / "model.bin"
    save_model(UNetModel.create(SMALL), path)
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(ModelFileError, match="payload"):
        load_model(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"X" + data[1:])
    with pytest.raises(ModelFileError, match="magic"):
        load_model(tmp_path / "magic.bin")
    with pytest.raises(ModelFileError, match="architecture"):
        load_model(path, expected_arch=Architecture())


def test_train_logs_progress(caplog):
    x, y = _toy(12)
    with caplog.at_level(logging.INFO, logger="fsgcc_tde"):
        train(UNetModel.create(SMALL), x, y, TrainConfig(max_epochs=1, batch_size=4))
    assert "epoch 1" in caplog.text


def test_mirror_lags_matches_swapped_microphones():
    from fsgcc_tde.fsgcc import FsGccConfig, fs_gcc
    rng = np.random.default_rng(4)
    a, b = np.fft.fft(rng.standard_normal((2, 256)), axis=-1)
    cfg = FsGccConfig(dft_length=256, window_support=16, hop=8, band_count=8)
    ab = fs_gcc(a, b, cfg).magnitude
    ba = fs_gcc(b, a, cfg).magnitude
    assert np.allclose(unet.mirror_lags(ab)[:, 1:], ba[:, 1:], atol=1e-15)
    x = rng.standard_normal((3, 1, 4, 8))
    assert np.array_equal(unet.mirror_lags(unet.mirror_lags(x)), x)
