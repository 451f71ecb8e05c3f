import dataclasses

import numpy as np
import pytest

from smdsr import checks, diffusion, imageio, mask, schedule


def flipped_phi(T, kind="cosine"):
    sch = schedule.build_schedule(T, kind)
    return dataclasses.replace(sch, phi=-np.array(sch.phi))


def mask_reading_sampler(denoiser, condition, sch, opts=None):
    h, w = condition.shape[-2:]
    hint = mask.encode_label_map(np.zeros((h, w), dtype=np.uint16))
    return diffusion.reverse_sample(denoiser, condition + 0.0 * hint, sch, opts)


def sampler_with_mask_arg(denoiser, condition, sch, opts=None, e_sam=None):
    return diffusion.reverse_sample(denoiser, condition, sch, opts)


@pytest.fixture(scope="module")
def clean():
    return checks.run_invariant_suite(seed=0)


class TestSuite:
    def test_everything_passes(self, clean):
        assert clean.passed, clean.format()

    def test_report_lines(self, clean):
        lines = clean.format().splitlines()
        assert lines[-1] == "overall=pass"
        names = [ln.split("=", 1)[0] for ln in lines[:-1]]
        assert names == [r.name for r in clean.results]
        assert len(set(names)) == len(names) == 8

    def test_phi_sign_flip_is_caught(self):
        report = checks.run_invariant_suite(seed=0, schedule_factory=flipped_phi)
        by_name = {r.name: r for r in report.results}
        assert not by_name["posterior_equivalence"].passed
        assert not report.passed

    def test_mask_reading_sampler_is_caught(self):
        report = checks.run_invariant_suite(seed=0, sampler=mask_reading_sampler)
        by_name = {r.name: r for r in report.results}
        assert not by_name["no_mask_inference"].passed
        assert "mask data accessed" in by_name["no_mask_inference"].detail

    def test_mask_parameter_is_caught(self):
        passed, detail = checks.check_no_mask_inference(sampler_with_mask_arg, 0)
        assert not passed
        assert "e_sam" in detail

    def test_crash_counts_as_failure(self):
        def broken(T, kind="cosine"):
            raise RuntimeError("boom")
        report = checks.run_invariant_suite(seed=0, schedule_factory=broken)
        assert not report.passed
        assert any("boom" in r.detail for r in report.results)


class TestForbidContext:
    def test_restores_functions(self):
        before = (mask.encode_label_map, imageio.read_spe)
        with checks._mask_access_forbidden(), pytest.raises(RuntimeError):
            mask.encode_label_map(np.zeros((2, 2)))
        assert (mask.encode_label_map, imageio.read_spe) == before

    @pytest.mark.parametrize("seed", [0, 3])
    def test_oracle_sampler_seeds(self, seed):
        passed, _ = checks.check_oracle_sampler(schedule.build_schedule, diffusion.reverse_sample, seed)
        assert passed
