import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smdsr.imageio import read_label_map, read_netpbm, read_spe, write_label_map, write_netpbm, write_spe


class TestNetpbm:
    def test_ppm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (3, 5, 7), dtype=np.uint8)
        write_netpbm(tmp_path / "a.ppm", img)
        back = read_netpbm(tmp_path / "a.ppm")
        assert back.dtype == np.uint8
        np.testing.assert_array_equal(back, img)

    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (4, 9), dtype=np.uint8)
        write_netpbm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_netpbm(tmp_path / "a.pgm"), img)

    def test_pixel_order_is_interleaved(self, tmp_path):
        img = np.zeros((3, 1, 2), dtype=np.uint8)
        img[:, 0, 0] = [1, 2, 3]
        img[:, 0, 1] = [4, 5, 6]
        write_netpbm(tmp_path / "a.ppm", img)
        raw = (tmp_path / "a.ppm").read_bytes()
        assert raw == b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06"

    def test_sixteen_bit_is_big_endian(self, tmp_path):
        labels = np.array([[1, 258]], dtype=np.uint16)
        write_label_map(tmp_path / "l.pgm", labels)
        raw = (tmp_path / "l.pgm").read_bytes()
        assert raw.endswith(b"\x00\x01\x01\x02")
        np.testing.assert_array_equal(read_label_map(tmp_path / "l.pgm"), labels)

    def test_comments_in_header(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2 # size\n255\n\x00\x01\x02\x03")
        np.testing.assert_array_equal(read_netpbm(tmp_path / "c.pgm"), [[0, 1], [2, 3]])

    @pytest.mark.parametrize("payload", [b"P3\n1 1\n255\n0 0 0", b"P5\n2 2\n255\n\x00"])
    def test_rejects_bad_files(self, tmp_path, payload):
        (tmp_path / "bad.pgm").write_bytes(payload)
        with pytest.raises(ValueError):
            read_netpbm(tmp_path / "bad.pgm")

    def test_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            write_netpbm(tmp_path / "x.pgm", np.full((2, 2), 300), maxval=255)


def test_spe_round_trip(tmp_path):
    values = np.random.default_rng(2).normal(size=(1, 6, 4)).astype(np.float32)
    write_spe(tmp_path / "m.spe", values)
    raw = (tmp_path / "m.spe").read_bytes()
    assert raw[:4] == b"SPE1" and len(raw) == 16 + 6 * 4 * 4
    np.testing.assert_array_equal(read_spe(tmp_path / "m.spe"), values)


@given(st.integers(1, 3).flatmap(lambda c: arrays(np.uint8, st.tuples(st.just(c), st.integers(1, 9), st.integers(1, 9)))))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_netpbm_round_trip_property(tmp_path, img):
    if img.shape[0] == 2:
        img = img[:1]
    path = tmp_path / ("p.ppm" if img.shape[0] == 3 else "p.pgm")
    write_netpbm(path, img if img.shape[0] == 3 else img[0])
    back = read_netpbm(path)
    np.testing.assert_array_equal(back, img if img.shape[0] == 3 else img[0])


@given(arrays(np.uint16, st.tuples(st.integers(1, 8), st.integers(1, 8))))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_label_map_round_trip_property(tmp_path, labels):
    write_label_map(tmp_path / "l.pgm", labels)
    np.testing.assert_array_equal(read_label_map(tmp_path / "l.pgm"), labels)
