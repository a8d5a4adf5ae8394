import numpy as np
import pytest

from mdmsim import rxdsp, sigkit
from mdmsim.rxdsp import (DspConfig, DspError, cpe_vv, foc, mimo_cma,
                          q_from_ber, select_wavelength, timing_recover)
from mdmsim.sigkit import FilterSpec, SampledSignal

RS = 16e9


def shaped_qpsk(n_symbols=8192, sps=2, seed=0):
    bits = sigkit.prbs(18, 2 * n_symbols, seed=seed + 1).bits
    sym = sigkit.qpsk_map(bits)
    sig = sigkit.shape_filter(sym, FilterSpec(), sps, RS)
    return sig, sym, bits


class TestSelectWavelength:
    def test_extracts_carrier(self):
        sig, sym, _ = shaped_qpsk(4096, sps=32)
        comp = sigkit.freq_shift(sig.samples, 50e9, sig.sample_rate)
        out = select_wavelength(comp, sig.sample_rate, 50e9, RS)
        assert out.sample_rate == 2 * RS
        np.testing.assert_allclose(out.power, 1.0, rtol=1e-9)

    def test_offset_outside_band_rejected(self):
        with pytest.raises(DspError):
            select_wavelength(np.ones(1024, dtype=complex), 64e9, 40e9, RS)


class TestTiming:
    @pytest.mark.parametrize("delay_frac", [-0.31, -0.1, 0.07, 0.23, 0.42])
    def test_recovers_fractional_delay(self, delay_frac):
        sig, _, _ = shaped_qpsk(8192, sps=2)
        t_sym = 1.0 / RS
        delayed = sigkit.fractional_delay(sig.samples, delay_frac * t_sym,
                                          sig.sample_rate)
        base = timing_recover((sig,))
        res = timing_recover((SampledSignal(delayed, sig.sample_rate),))
        assert res.converged
        # the absolute estimate includes the shaping filter's group delay;
        # the injected delay must show up as the shift relative to baseline
        err = (res.fractional_delay_s - base.fractional_delay_s
               - delay_frac * t_sym) / t_sym
        err = (err + 0.5) % 1.0 - 0.5  # timing is defined modulo T
        assert abs(err) < 0.02

    def test_shared_clock(self):
        sig, _, _ = shaped_qpsk(8192, sps=2)
        t_sym = 1.0 / RS
        d = sigkit.fractional_delay(sig.samples, 0.2 * t_sym, sig.sample_rate)
        res = timing_recover((SampledSignal(d, sig.sample_rate),) * 4)
        assert res.converged and len(res.streams) == 4


class TestFoc:
    def test_200mhz_within_1mhz(self):
        _, sym, _ = shaped_qpsk(16384)
        shifted = sigkit.freq_shift(sym, 200e6, RS)
        _, f_hat = foc(shifted, RS)
        assert abs(f_hat - 200e6) < 1e6

    def test_corrected_stream_is_static(self):
        _, sym, _ = shaped_qpsk(16384)
        shifted = sigkit.freq_shift(sym, 137e6, RS)
        out, _ = foc(shifted, RS)
        # residual rotation across the record stays well inside a quadrant
        drift = np.angle(np.mean(out[-1024:] * np.conj(sym[-1024:]))
                         / np.mean(out[:1024] * np.conj(sym[:1024])))
        assert abs(drift) < np.pi / 8

    def test_declared_offset_beyond_bound_rejected(self):
        _, sym, _ = shaped_qpsk(4096)
        with pytest.raises(DspError, match="ambiguity"):
            foc(sym, RS, declared_offset=3e9)


class TestCpe:
    def test_recovers_static_phase(self):
        _, sym, _ = shaped_qpsk(8192)
        rotated = sym * np.exp(1j * np.pi / 8)
        out, track = cpe_vv(rotated)
        # V&V leaves a quadrant ambiguity; compare modulo pi/2 rotations
        resid = min(np.max(np.abs(out * np.exp(-0.5j * np.pi * q) - sym))
                    for q in range(4))
        assert resid < 1e-9

    def test_tracks_slow_wander(self):
        _, sym, _ = shaped_qpsk(8192)
        phase = 0.3 * np.sin(2 * np.pi * np.arange(sym.size) / sym.size)
        out, _ = cpe_vv(sym * np.exp(1j * phase), block=64)
        # remove the V&V quadrant ambiguity before demapping
        q = int(np.argmin([np.mean(np.abs(out * np.exp(-0.5j * np.pi * k)
                                          - sym)) for k in range(4)]))
        bits = sigkit.qpsk_demap(out * np.exp(-0.5j * np.pi * q))
        ref = sigkit.qpsk_demap(sym)
        assert np.count_nonzero(bits != ref) == 0


class TestMetrics:
    def test_q_from_ber_known_point(self):
        # BER 1e-3 corresponds to Q ~ 3.09 (9.8 dB)
        assert abs(q_from_ber(1e-3, 10 ** 6) - 9.8) < 0.1

    def test_evm_zero_for_clean(self):
        _, sym, _ = shaped_qpsk(4096)
        assert rxdsp.evm_percent(sym) < 1e-6


class TestMimoCma:
    def test_identity_mixing_passthrough(self):
        streams = []
        for k in range(2):
            sig, _, _ = shaped_qpsk(8192, sps=2, seed=10 + k)
            streams.append(sig)
        cfg = DspConfig(cma_epochs=20, cma_polish_epochs=0)
        y, state = mimo_cma(tuple(streams), cfg)
        assert y.shape[0] == 2
        assert state.taps.shape == (2, 2, cfg.n_taps)
        assert state.reinit_events == []
        # modulus converged
        p = np.abs(y) ** 2
        assert np.all(p.var(axis=1) / p.mean(axis=1) ** 2 < 0.05)

    def test_unitary_mixture_recovered(self):
        rng = np.random.default_rng(0)
        sigs, refs = [], []
        for k in range(2):
            sig, _, bits = shaped_qpsk(8192, sps=2, seed=20 + k)
            sigs.append(sig.samples)
            refs.append(bits)
        x = np.stack(sigs)
        th = 0.7
        u = np.array([[np.cos(th), np.sin(th)],
                      [-np.sin(th), np.cos(th)]], dtype=complex)
        mixed = u @ x
        streams = tuple(SampledSignal(m, 2 * RS) for m in mixed)
        y, _ = mimo_cma(streams, DspConfig(cma_epochs=60))
        # every reference recovered by some output
        for ref in refs:
            bers = []
            for oi in range(2):
                bits = sigkit.qpsk_demap(
                    y[oi] / np.sqrt(np.mean(np.abs(y[oi]) ** 2)))
                bers.append(sigkit.ber_count(ref, bits, resolve_ambiguity=True,
                                             max_delay=128).ber)
            assert min(bers) < 1e-3

    def test_config_validation(self):
        with pytest.raises(DspError):
            DspConfig(n_taps=50)
        with pytest.raises(DspError):
            DspConfig(cma_step=0.5)
        with pytest.raises(DspError):
            DspConfig(sps_eq=4)
        with pytest.raises(DspError):
            DspConfig(cma_polish_step_scale=0.0)
