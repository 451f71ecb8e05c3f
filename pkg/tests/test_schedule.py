import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdsr.schedule import (
    MAX_BETA,
    build_schedule,
    dump_table,
    phi_direct,
    read_table,
    schedule_from_betas,
)


@pytest.fixture(scope="module")
def cosine100():
    return build_schedule(100, "cosine", 0.008)


class TestBuildSchedule:
    def test_cosine_t100_monotone_and_bounded(self, cosine100):
        abar = cosine100.alpha_bar
        assert np.all(np.diff(abar) < 0)
        beta = cosine100.beta[1:]
        assert np.all(beta > 0) and np.all(beta <= MAX_BETA)

    def test_cosine_t1(self):
        sch = build_schedule(1, "cosine", 0.008)
        assert sch.phi[1] == math.sqrt(sch.beta[1])
        assert sch.posterior_beta_tilde[1] == 0.0

    def test_linear_t10_alpha_bar_is_product(self):
        sch = build_schedule(10, "linear")
        betas = np.linspace(1e-4, 0.02, 10)
        np.testing.assert_array_equal(sch.beta[1:], betas)
        prod = 1.0
        for b in betas:
            prod *= 1.0 - b
        assert sch.alpha_bar[10] == pytest.approx(prod, rel=1e-15)

    def test_cosine_matches_closed_form_before_clipping(self, cosine100):
        s, T = 0.008, 100
        f = lambda t: math.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
        for t in (1, 10, 50, 90):
            assert cosine100.alpha_bar[t] == pytest.approx(f(t) / f(0), rel=1e-12)
        assert cosine100.beta[100] == MAX_BETA

    @pytest.mark.parametrize("T,s", [(0, 0.008), (-3, 0.008), (10, -0.1)])
    def test_invalid_arguments(self, T, s):
        with pytest.raises(ValueError):
            build_schedule(T, "cosine", s)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_schedule(10, "quadratic")

    def test_arrays_are_read_only(self, cosine100):
        with pytest.raises(ValueError):
            cosine100.phi[3] = 0.0


class TestInvariants:
    @pytest.mark.parametrize("T,kind", [(1, "cosine"), (10, "linear"), (100, "cosine"), (100, "linear")])
    def test_recurrences(self, T, kind):
        sch = build_schedule(T, kind)
        assert sch.alpha_bar[0] == 1.0
        for t in range(1, T + 1):
            assert sch.alpha[t] == 1.0 - sch.beta[t]
            assert sch.alpha_bar[t] == sch.alpha[t] * sch.alpha_bar[t - 1]
            assert sch.alpha_bar[t] < sch.alpha_bar[t - 1]
        assert sch.phi[1] == math.sqrt(sch.beta[1])
        for t in range(2, T + 1):
            expected = math.sqrt(sch.alpha[t]) * sch.phi[t - 1] + math.sqrt(sch.beta[t])
            assert sch.phi[t] == expected

    @pytest.mark.parametrize("T,kind", [(1, "cosine"), (10, "linear"), (100, "cosine")])
    def test_beta_tilde_stored_exactly(self, T, kind):
        sch = build_schedule(T, kind)
        assert sch.posterior_beta_tilde[1] == 0.0
        for t in range(1, T + 1):
            expected = (1 - sch.alpha_bar[t - 1]) * sch.beta[t] / (1 - sch.alpha_bar[t])
            assert sch.posterior_beta_tilde[t] == expected


class TestPhiDirect:
    def test_t1_is_sqrt_beta1(self, cosine100):
        assert phi_direct(cosine100, 1) == pytest.approx(math.sqrt(cosine100.beta[1]), rel=1e-15)

    @pytest.mark.parametrize("T,kind", [(1, "cosine"), (10, "linear"), (100, "cosine")])
    def test_matches_recurrence_everywhere(self, T, kind):
        sch = build_schedule(T, kind)
        for t in range(1, T + 1):
            assert abs(phi_direct(sch, t) - sch.phi[t]) <= 1e-10 * max(1.0, sch.phi[t])

    def test_constant_beta_two_terms(self):
        b = 0.1
        sch = schedule_from_betas([b] * 5)
        expected = math.sqrt(1 - b) * math.sqrt(b) + math.sqrt(b)
        assert phi_direct(sch, 2) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("t", [0, 101])
    def test_out_of_range(self, cosine100, t):
        with pytest.raises(ValueError):
            phi_direct(cosine100, t)


def test_dump_table_round_trip(cosine100):
    buf = io.StringIO()
    dump_table(cosine100, buf)
    table = read_table(buf.getvalue())
    np.testing.assert_array_equal(table["t"], np.arange(1, 101))
    np.testing.assert_array_equal(table["beta"], cosine100.beta[1:])
    np.testing.assert_array_equal(table["alpha_bar"], cosine100.alpha_bar[1:])
    np.testing.assert_array_equal(table["phi"], cosine100.phi[1:])
    np.testing.assert_array_equal(table["beta_tilde"], cosine100.posterior_beta_tilde[1:])


class TestProperties:
    @given(st.integers(1, 300), st.sampled_from(["cosine", "linear"]))
    @settings(max_examples=40, deadline=None)
    def test_algebra_any_length(self, T, kind):
        sch = build_schedule(T, kind)
        assert sch.posterior_beta_tilde[1] == 0.0
        assert np.all(np.diff(sch.alpha_bar) < 0)
        assert np.all(sch.posterior_beta_tilde[1:] <= sch.beta[1:] + 1e-15)
        for t in {1, (T + 1) // 2, T}:
            assert sch.phi[t] == pytest.approx(phi_direct(sch, t), rel=1e-10)

    @given(st.lists(st.floats(1e-5, 0.5), min_size=1, max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_custom_betas(self, betas):
        sch = schedule_from_betas(betas)
        np.testing.assert_allclose(sch.alpha_bar[1:], np.cumprod(1 - np.asarray(betas)), rtol=1e-12)
        assert np.all(sch.phi[1:] > 0)
