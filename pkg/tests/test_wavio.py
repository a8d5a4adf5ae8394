import numpy as np
import pytest

from mdmsim import wavio
from mdmsim.channel import CrosstalkSpec, FiberSpec, ImpairmentSpec, make_fiber
from mdmsim.wavio import WavioError


class TestWaveform:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 1000)) + 1j * rng.standard_normal((3, 1000))
        p = tmp_path / "w.bin"
        wavio.write_waveform(p, x, 512e9)
        y, fs = wavio.read_waveform(p)
        assert fs == 512e9
        np.testing.assert_allclose(y, x, atol=1e-6)  # complex64 storage

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(WavioError, match="magic"):
            wavio.read_waveform(p)

    def test_truncation_detected(self, tmp_path):
        p = tmp_path / "w.bin"
        wavio.write_waveform(p, np.ones((2, 100), dtype=complex), 1e9)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(WavioError, match="truncated"):
            wavio.read_waveform(p)


class TestGrid:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((64, 128)).astype(np.float32)
        p = tmp_path / "g.bin"
        wavio.write_grid(p, g, 1e-6, 2e-6)
        h, dx, dy = wavio.read_grid(p)
        assert (dx, dy) == (1e-6, 2e-6)
        np.testing.assert_array_equal(h.astype(np.float32), g)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(WavioError):
            wavio.write_grid(tmp_path / "g.bin", np.zeros(10), 1e-6, 1e-6)


class TestRealization:
    @pytest.mark.parametrize("osnr", [18.0, np.inf])
    def test_roundtrip(self, tmp_path, osnr):
        ch = make_fiber(FiberSpec(), CrosstalkSpec(-10.0),
                        ImpairmentSpec(osnr_db=osnr), seed=42)
        p = tmp_path / "r.bin"
        wavio.write_realization(p, ch)
        back = wavio.read_realization(p)
        assert back.seed == 42
        assert back.imp.osnr_db == osnr
        assert back.fiber == ch.fiber
        np.testing.assert_array_equal(back.section_unitaries,
                                      ch.section_unitaries)
        np.testing.assert_array_equal(back.section_delays, ch.section_delays)
        np.testing.assert_array_equal(back.inter_group, ch.inter_group)


class TestCsv:
    def test_rfc4180_quoting(self, tmp_path):
        p = tmp_path / "t.csv"
        wavio.write_csv(p, ["a", "b,c", 'd"e'], [["x,y", 1, 2.5]])
        text = p.read_bytes().decode()
        lines = text.split("\r\n")
        assert lines[0] == 'a,"b,c","d""e"'
        assert lines[1] == '"x,y",1,2.5'

    def test_17_digit_roundtrip(self, tmp_path):
        vals = [1 / 3, np.pi, 1e-300, 123456.789012345678]
        p = tmp_path / "n.csv"
        wavio.write_csv(p, ["v"], [[v] for v in vals])
        lines = p.read_bytes().decode().strip().split("\r\n")[1:]
        assert len(lines) == len(vals)
        for v, line in zip(vals, lines):
            assert float(line) == v

    def test_complex_csv(self, tmp_path):
        p = tmp_path / "c.csv"
        wavio.write_complex_csv(p, np.array([1 + 2j, -0.5j]))
        lines = p.read_bytes().decode().strip().split("\r\n")
        assert lines[0] == "index,re,im"
        assert lines[1] == "0,1,2"
        assert lines[2].startswith("1,")

    def test_bool_formatting(self):
        assert wavio.format_number(True) == "true"
        assert wavio.format_number(np.False_) == "false"
        assert wavio.format_number(np.int64(7)) == "7"
