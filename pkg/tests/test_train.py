import dataclasses

import numpy as np
import pytest

from smdsr import data, denoiser, diffusion, train
from smdsr.data import SceneSpec
from smdsr.train import TrainConfig

SMALL = TrainConfig(iterations=500, batch_size=4, patch_size=16, T=20, width=8, depth=1,
                    num_scenes=2, lr0=2e-3, scene=SceneSpec(h=32, w=32))


def read_losses(path):
    return np.loadtxt(path, delimiter=",", skiprows=1)[:, 1]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = {}
    for base in (False, True):
        d = tmp_path_factory.mktemp(f"base{int(base)}")
        cfg = dataclasses.replace(SMALL, baseline=base)
        ckpt = train.train(cfg, checkpoint_path=d / "m.bin", log_path=d / "loss.csv")
        out[base] = (ckpt, read_losses(d / "loss.csv"), d)
    return out


class TestTraining:
    @pytest.mark.parametrize("base", [False, True])
    def test_loss_falls_by_two_thirds(self, trained, base):
        _, losses, _ = trained[base]
        assert losses.shape == (500,)
        assert losses[-50:].mean() < losses[:50].mean() / 3

    def test_log_has_cosine_lr(self, trained, tmp_path):
        _, _, d = trained[False]
        lr = np.loadtxt(d / "loss.csv", delimiter=",", skiprows=1)[:, 2]
        expected = [denoiser.cosine_lr(SMALL.lr0, k, 500) for k in range(500)]
        np.testing.assert_allclose(lr, expected, rtol=1e-6)
        assert np.all(np.diff(lr) <= 0)

    def test_checkpoint_on_disk_matches(self, trained):
        ckpt, _, d = trained[True]
        loaded = denoiser.load_checkpoint(d / "m.bin")
        np.testing.assert_array_equal(loaded.params.vector, ckpt.params.vector)
        assert loaded.adam.step == 500

    def test_deterministic(self, trained):
        cfg = dataclasses.replace(SMALL, iterations=20)
        a = train.train(cfg).params.vector
        b = train.train(cfg).params.vector
        np.testing.assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_raises(self):
        cfg = dataclasses.replace(SMALL, iterations=50, lr0=1e12)
        with pytest.raises(FloatingPointError):
            train.train(cfg)

    def test_patch_larger_than_scene(self):
        with pytest.raises(ValueError):
            train.train(dataclasses.replace(SMALL, patch_size=64, iterations=1))

    def test_reads_dataset_directory(self, tmp_path):
        data.write_dataset(tmp_path, SceneSpec(h=32, w=32), 2)
        cfg = dataclasses.replace(SMALL, iterations=5, data_dir=str(tmp_path))
        a = train.train(cfg).params.vector
        b = train.train(dataclasses.replace(SMALL, iterations=5)).params.vector
        np.testing.assert_array_equal(a, b)


class TestRestore:
    @pytest.fixture
    def lr(self):
        _, lr, _ = data.make_scenes(SceneSpec(h=32, w=32, seed=77), 1)[0]
        return lr

    def test_same_seed_identical(self, trained, lr):
        ckpt = trained[False][0]
        np.testing.assert_array_equal(train.restore(ckpt, lr, 5), train.restore(ckpt, lr, 5))

    def test_different_seed_differs(self, trained, lr):
        ckpt = trained[False][0]
        assert not np.array_equal(train.restore(ckpt, lr, 5), train.restore(ckpt, lr, 6))

    def test_shape_and_path(self, trained, lr):
        ckpt, _, d = trained[False]
        sr = train.restore(str(d / "m.bin"), lr, 1)
        assert sr.shape == (3, 4 * lr.shape[1], 4 * lr.shape[2])
        np.testing.assert_array_equal(sr, train.restore(ckpt, lr, 1))

    def test_rejects_wrong_channels(self, trained):
        with pytest.raises(ValueError):
            train.restore(trained[False][0], np.zeros((1, 8, 8), np.uint8), 0)

    def test_options_seed_is_overridden(self, trained, lr):
        ckpt = trained[False][0]
        a = train.restore(ckpt, lr, 2, diffusion.SamplerOptions(seed=99))
        np.testing.assert_array_equal(a, train.restore(ckpt, lr, 2))
