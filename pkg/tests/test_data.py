from collections import deque

import numpy as np
import pytest
from scipy.stats import chisquare

from smdsr.data import (
    SceneSpec,
    box_downsample,
    gen_synthetic,
    make_residual,
    read_dataset,
    residual_to_image,
    to_unit,
    upsample_bilinear,
    write_dataset,
)
from smdsr.train import sample_timesteps


def flood_fill_size(labels, y, x):
    target = labels[y, x]
    seen = np.zeros(labels.shape, bool)
    seen[y, x] = True
    todo = deque([(y, x)])
    n = 0
    while todo:
        cy, cx = todo.popleft()
        n += 1
        for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
            if 0 <= ny < labels.shape[0] and 0 <= nx < labels.shape[1] and not seen[ny, nx] \
                    and labels[ny, nx] == target:
                seen[ny, nx] = True
                todo.append((ny, nx))
    return n


class TestGenSynthetic:
    def test_single_region(self):
        hr, lr, labels = gen_synthetic(SceneSpec(h=32, w=32, regions=1, seed=3))
        assert np.all(labels == labels[0, 0])
        assert hr.shape == (3, 32, 32) and lr.shape == (3, 8, 8)

    def test_same_seed_same_scene(self):
        a = gen_synthetic(SceneSpec(seed=7))
        b = gen_synthetic(SceneSpec(seed=7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_different_seed_differs(self):
        assert not np.array_equal(gen_synthetic(SceneSpec(seed=1))[0], gen_synthetic(SceneSpec(seed=2))[0])

    @pytest.mark.parametrize("seed", range(5))
    def test_four_connected_regions(self, seed):
        _, _, labels = gen_synthetic(SceneSpec(h=64, w=64, regions=4, seed=seed))
        values = np.unique(labels)
        assert values.size == 4
        for v in values:
            ys, xs = np.nonzero(labels == v)
            assert flood_fill_size(labels, ys[0], xs[0]) == ys.size

    def test_lr_is_box_downsample(self):
        hr, lr, _ = gen_synthetic(SceneSpec(h=16, w=24, regions=2, seed=0))
        expected = np.rint(hr.reshape(3, 4, 4, 6, 4).mean(axis=(2, 4)))
        np.testing.assert_array_equal(lr, expected)

    @pytest.mark.parametrize("kw", [{"regions": 0}, {"h": 30}, {"w": 0}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            SceneSpec(**kw)


class TestResidual:
    def test_exact_upsample_gives_zero(self):
        lr = np.full((3, 4, 4), 90, dtype=np.uint8)
        hr = np.full((3, 16, 16), 90, dtype=np.uint8)
        np.testing.assert_array_equal(make_residual(hr, lr), 0.0)

    def test_round_trip(self):
        hr, lr, _ = gen_synthetic(SceneSpec(seed=4))
        back = residual_to_image(lr, make_residual(hr, lr))
        np.testing.assert_allclose(back, to_unit(hr), atol=1e-12)

    def test_range(self):
        hr, lr, _ = gen_synthetic(SceneSpec(seed=5))
        assert np.abs(make_residual(hr, lr)).max() <= 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            make_residual(np.zeros((3, 16, 16)), np.zeros((3, 5, 4)))

    def test_bilinear_constant_and_mean(self):
        img = np.random.default_rng(0).uniform(size=(1, 4, 6))
        up = upsample_bilinear(img)
        assert up.shape == (1, 16, 24)
        np.testing.assert_allclose(upsample_bilinear(np.full((2, 3, 3), 0.25)), 0.25, rtol=1e-15)
        # half-pixel centres: a 2-pixel ramp [0, 1] upsamples to the 4x grid below
        ramp = upsample_bilinear(np.array([[[0.0, 1.0]]]), 4)[0, 0]
        expected = np.clip((np.arange(8) + 0.5) / 4 - 0.5, 0, 1)
        np.testing.assert_allclose(ramp, expected, atol=1e-15)

    def test_box_downsample(self):
        img = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_array_equal(box_downsample(img, 2)[0], [[2.5, 4.5], [10.5, 12.5]])


def test_dataset_round_trip(tmp_path):
    spec = SceneSpec(h=16, w=16, regions=2, seed=11)
    write_dataset(tmp_path, spec, 3)
    scenes = read_dataset(tmp_path)
    assert len(scenes) == 3
    for i, (hr, lr, labels) in enumerate(scenes):
        ref = gen_synthetic(SceneSpec(h=16, w=16, regions=2, seed=11 + i))
        for a, b in zip((hr, lr, labels), ref):
            np.testing.assert_array_equal(a, b)


def test_timestep_sampling_is_uniform():
    T, n = 100, 100_000
    draws = sample_timesteps(np.random.default_rng(0), T, n)
    assert draws.min() >= 1 and draws.max() <= T
    counts = np.bincount(draws, minlength=T + 1)[1:]
    assert chisquare(counts).pvalue > 0.001
