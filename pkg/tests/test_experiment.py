import pytest

from smdsr.experiment import ABReport, SeedResult


def report(pairs, bilinear=20.0):
    return ABReport(bilinear, [SeedResult(i, m, b, 0.0) for i, (m, b) in enumerate(pairs)])


class TestVerdict:
    def test_clear_win(self):
        r = report([(25, 24), (25, 24.5), (24, 24.2)])
        assert r.wins == 2 and r.majority and r.non_inferior and r.beat_bilinear and r.passed

    @pytest.mark.parametrize("delta,ok", [(0.09, True), (0.1, True), (0.11, False)])
    def test_margin(self, delta, ok):
        r = report([(25 - delta, 25)])
        assert r.non_inferior is ok

    def test_tie_is_not_a_win(self):
        r = report([(25, 25), (25, 25)])
        assert r.wins == 0 and not r.majority and r.non_inferior

    def test_half_is_not_majority(self):
        assert not report([(26, 25), (24, 25)]).majority

    def test_bilinear_must_be_beaten_by_both(self):
        assert not report([(25, 19)]).beat_bilinear
        assert not report([(19, 25)]).beat_bilinear

    def test_format(self):
        text = report([(25, 24)]).format()
        assert "seed=0 modulated=25.000 baseline=24.000 win=yes" in text
        assert text.rstrip().endswith("beat_bilinear=True")
