"""Encoder architectures: linearity of the planted map, cloning, persistence."""

import numpy as np
import pytest

from anchorlab import tensor as T
from anchorlab.encoders import (
    PlantedConfig,
    clone_unfrozen,
    encode_batch,
    encode_np,
    freeze,
    init_encoder,
    load_model,
    planted_teacher,
    pre_embedding,
    save_model,
)
from anchorlab.errors import ConfigError, DimensionError
from anchorlab.tensor import GradTape, Tensor


def _rand_raster(seed, hw=(32, 32), n=1):
    g = np.random.default_rng(seed)
    return g.uniform(0, 1, size=(n, *hw, 3)).astype(np.float32)


def test_planted_alpha0_is_linear(micro_teacher):
    x1 = _rand_raster(1)[0]
    x2 = _rand_raster(2)[0]
    z1 = pre_embedding(micro_teacher, x1)[0]
    z2 = pre_embedding(micro_teacher, x2)[0]
    z12 = pre_embedding(micro_teacher, x1 + x2)[0]
    assert np.allclose(z12, z1 + z2, atol=1e-4)


def test_planted_alpha_breaks_linearity():
    t = planted_teacher(PlantedConfig(seed=7, alpha=2.0), d=16, input_hw=(32, 32))
    x1 = _rand_raster(1)[0]
    x2 = _rand_raster(2)[0]
    z1 = pre_embedding(t, x1)[0]
    z2 = pre_embedding(t, x2)[0]
    z12 = pre_embedding(t, x1 + x2)[0]
    assert not np.allclose(z12, z1 + z2, atol=1e-3)


def test_planted_is_frozen_and_deterministic():
    a = planted_teacher(PlantedConfig(seed=3), d=8, input_hw=(32, 32))
    b = planted_teacher(PlantedConfig(seed=3), d=8, input_hw=(32, 32))
    assert a.frozen and not a.trainable_params()
    assert a.param_checksum() == b.param_checksum()
    with pytest.raises(ConfigError):
        planted_teacher(PlantedConfig(seed=3), d=8, input_hw=(30, 30))
    with pytest.raises(ConfigError):
        PlantedConfig(seed=1, alpha=-0.5)


@pytest.mark.parametrize("arch", ["linear", "mlp", "cnn"])
def test_embeddings_unit_norm(arch):
    hw = (32, 32) if arch == "cnn" else (16, 16)
    model = init_encoder(arch, 5, d=8, input_hw=hw)
    embs = encode_np(model, _rand_raster(9, hw=hw, n=4))
    assert embs.shape == (4, 8)
    assert np.allclose(np.linalg.norm(embs, axis=1), 1.0, atol=1e-5)


@pytest.mark.parametrize("arch", ["linear", "mlp", "cnn"])
def test_architecture_gradients(arch):
    hw = (32, 32) if arch == "cnn" else (8, 8)
    model = init_encoder(arch, 13, d=4, input_hw=hw)
    batch = _rand_raster(21, hw=hw, n=2)
    target = np.random.default_rng(0).standard_normal((2, 4)).astype(np.float32)

    def loss_np():
        return float((encode_np(model, batch) * target).sum())

    with GradTape() as tape:
        embs = encode_batch(model, batch)
        loss = T.tsum(embs * Tensor(target))
        tape.backward(loss)
    # spot-check a handful of coordinates per parameter against central FD
    g = np.random.default_rng(99)
    eps = 1e-2
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in g.choice(flat.size, size=min(5, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_np()
            flat[i] = orig - eps
            lo = loss_np()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            assert abs(gflat[i] - fd) / max(abs(fd), 1e-2) < 2e-3, name


def test_clone_of_planted_matches_linear_part(micro_teacher):
    clone = clone_unfrozen(micro_teacher)
    assert clone.arch == "linear" and not clone.frozen
    batch = _rand_raster(3, n=3)
    assert np.allclose(encode_np(micro_teacher, batch), encode_np(clone, batch), atol=1e-5)


def test_clone_copies_do_not_alias():
    model = init_encoder("mlp", 2, d=4, input_hw=(8, 8))
    clone = clone_unfrozen(model)
    clone.params["W1"].data += 1.0
    assert not np.allclose(model.params["W1"].data, clone.params["W1"].data)


def test_freeze_preserves_outputs():
    model = init_encoder("mlp", 8, d=8, input_hw=(16, 16))
    frozen = freeze(model)
    batch = _rand_raster(4, hw=(16, 16), n=2)
    assert frozen.frozen and not frozen.trainable_params()
    assert np.allclose(encode_np(model, batch), encode_np(frozen, batch))


def test_bad_inputs():
    model = init_encoder("linear", 1, d=4, input_hw=(16, 16))
    with pytest.raises(DimensionError):
        encode_np(model, np.zeros((2, 8, 8, 3), dtype=np.float32))
    with pytest.raises(ConfigError):
        init_encoder("transformer", 1)
    with pytest.raises(ConfigError):
        init_encoder("cnn", 1, input_hw=(8, 8))


@pytest.mark.parametrize("arch", ["linear", "mlp", "cnn"])
def test_save_load_roundtrip(tmp_path, arch):
    hw = (32, 32) if arch == "cnn" else (16, 16)
    model = init_encoder(arch, 77, d=8, input_hw=hw)
    save_model(model, tmp_path / arch)
    back = load_model(tmp_path / arch)
    assert back.param_checksum() == model.param_checksum()
    batch = _rand_raster(5, hw=hw, n=2)
    assert np.array_equal(encode_np(back, batch), encode_np(model, batch))


def test_save_load_planted(tmp_path, micro_teacher):
    save_model(micro_teacher, tmp_path / "planted")
    back = load_model(tmp_path / "planted")
    assert back.frozen and back.meta["alpha"] == 0.0
    batch = _rand_raster(6, n=2)
    assert np.array_equal(encode_np(back, batch), encode_np(micro_teacher, batch))
