"""Core signal-processing primitives: PRBS sources, QPSK mapping, pulse
shaping, OSNR-referenced noise loading, and BER counting.

Conventions used throughout the package:

- complex baseband waveforms are unitless field amplitudes with average
  power normalized to 1.0 at module boundaries (gains and losses are
  always explicit);
- OSNR is referenced to a 12.5 GHz (0.1 nm at 1550 nm) noise bandwidth
  unless overridden;
- all randomness flows through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import signal as sps_signal

OSNR_REF_BW = 12.5e9

# Primitive feedback polynomials (full polynomial as an integer bit mask,
# bit k set = x^k term).  Standard ITU-style choices.
DEFAULT_POLYNOMIALS = {
    7: (1 << 7) | (1 << 6) | 1,
    15: (1 << 15) | (1 << 14) | 1,
    18: (1 << 18) | (1 << 11) | 1,
    23: (1 << 23) | (1 << 18) | 1,
}

_SQRT2_INV = 1.0 / np.sqrt(2.0)


class SigkitError(ValueError):
    """Invalid argument or contract violation in a signal primitive."""


@dataclass(frozen=True)
class BitStream:
    """A binary sequence plus the descriptor of the generator that made it."""

    bits: np.ndarray
    generator: str = "unknown"

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.size == 0:
            raise SigkitError("BitStream must be nonempty")
        if bits.max(initial=0) > 1:
            raise SigkitError("BitStream values must be 0/1")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return self.bits.size


@dataclass(frozen=True)
class SampledSignal:
    """Complex baseband samples with rate and band-offset metadata."""

    samples: np.ndarray
    sample_rate: float
    center_offset: float = 0.0

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if samples.size == 0:
            raise SigkitError("SampledSignal must be nonempty")
        if self.sample_rate <= 0:
            raise SigkitError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class FilterSpec:
    """Pulse-shaping / selection filter description.

    ``cutoff_3db`` is the single-sided -3 dB frequency in Hz.  For
    ``raised_root`` the roll-off is derived from the cutoff relative to
    the symbol rate at application time.
    """

    kind: str = "bessel_lowpass"
    order: int = 5
    cutoff_3db: float = 0.7 * 16e9

    def __post_init__(self):
        if self.kind not in ("bessel_lowpass", "raised_root", "ideal_brickwall"):
            raise SigkitError(f"unknown filter kind {self.kind!r}")
        if self.order < 1:
            raise SigkitError("filter order must be >= 1")
        if self.cutoff_3db <= 0:
            raise SigkitError("cutoff_3db must be positive")


# ---------------------------------------------------------------------------
# PRBS


@njit(cache=True)
def _lfsr_bits(order, fbmask, seed, n):  # pragma: no cover - numba
    out = np.empty(n, dtype=np.uint8)
    state = seed
    top = order - 1
    for i in range(n):
        out[i] = state & 1
        fb = state & fbmask
        # parity of fb
        p = 0
        while fb:
            p ^= fb & 1
            fb >>= 1
        state = (state >> 1) | (p << top)
    return out


def _poly_mulmod(a: int, b: int, p: int, order: int) -> int:
    """Multiply two GF(2) polynomials modulo p (degree ``order``)."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> order & 1:
            a ^= p
    return r


def _poly_powmod(a: int, e: int, p: int, order: int) -> int:
    r = 1
    while e:
        if e & 1:
            r = _poly_mulmod(r, a, p, order)
        a = _poly_mulmod(a, a, p, order)
        e >>= 1
    return r


def lfsr_period(polynomial: int, order: int) -> int:
    """Multiplicative order of x modulo the polynomial.

    Equals 2**order - 1 exactly when the polynomial is primitive; used by
    the optional PRBS validation.
    """
    from sympy import factorint

    m = (1 << order) - 1
    if _poly_powmod(2, m, polynomial, order) != 1:
        return -1  # not even a divisor of 2^k - 1; degenerate polynomial
    period = m
    for q in factorint(m):
        while period % q == 0 and _poly_powmod(2, period // q, polynomial, order) == 1:
            period //= q
    return period


def prbs(order: int, n: int, polynomial: int | None = None, seed: int = 1,
         validate: bool = False) -> BitStream:
    """First ``n`` bits of a maximal-length LFSR sequence.

    The LFSR is a right-shifting Fibonacci register: the output is the LSB
    of the state and the feedback is the parity of the state masked by the
    reciprocal tap positions.  With a primitive polynomial the period is
    exactly 2**order - 1.
    """
    if seed == 0:
        raise SigkitError("LFSR seed must be nonzero (all-zero state is absorbing)")
    if polynomial is None:
        try:
            polynomial = DEFAULT_POLYNOMIALS[order]
        except KeyError:
            raise SigkitError(
                f"no default polynomial for order {order}; pass one explicitly"
            ) from None
    if polynomial >> order != 1:
        raise SigkitError("polynomial degree must equal the LFSR order")
    if validate and order <= 18 and lfsr_period(polynomial, order) != (1 << order) - 1:
        raise SigkitError(
            f"polynomial {polynomial:#x} is not primitive for order {order}"
        )
    fbmask = 0
    for e in range(1, order + 1):
        if polynomial >> e & 1:
            fbmask |= 1 << (order - e)
    bits = _lfsr_bits(order, fbmask, seed & ((1 << order) - 1), int(n))
    return BitStream(bits, generator=f"prbs{order}/poly={polynomial:#x}/seed={seed}")


# ---------------------------------------------------------------------------
# QPSK mapping

def qpsk_map(bits: BitStream | np.ndarray) -> np.ndarray:
    """Gray-map bit pairs to unit-modulus QPSK symbols (1 sample/symbol).

    00 -> (+1+1j)/sqrt2, 01 -> (-1+1j)/sqrt2, 11 -> (-1-1j)/sqrt2,
    10 -> (+1-1j)/sqrt2: the first bit selects the imaginary sign, the
    second the real sign.
    """
    b = bits.bits if isinstance(bits, BitStream) else np.asarray(bits, dtype=np.uint8)
    if b.size % 2:
        raise SigkitError("qpsk_map requires an even number of bits")
    b0 = b[0::2].astype(np.float64)
    b1 = b[1::2].astype(np.float64)
    return _SQRT2_INV * ((1.0 - 2.0 * b1) + 1j * (1.0 - 2.0 * b0))


def qpsk_demap(symbols: np.ndarray) -> np.ndarray:
    """Hard-decision inverse of :func:`qpsk_map`."""
    s = np.asarray(symbols)
    bits = np.empty(2 * s.size, dtype=np.uint8)
    bits[0::2] = s.imag < 0
    bits[1::2] = s.real < 0
    return bits


# ---------------------------------------------------------------------------
# Pulse shaping


def filter_response(spec: FilterSpec, freqs: np.ndarray,
                    symbol_rate: float | None = None) -> np.ndarray:
    """Complex filter response sampled at the given frequencies (Hz)."""
    f = np.asarray(freqs, dtype=np.float64)
    if spec.kind == "ideal_brickwall":
        return (np.abs(f) <= spec.cutoff_3db).astype(np.complex128)
    if spec.kind == "bessel_lowpass":
        b, a = sps_signal.bessel(spec.order, 1.0, "low", analog=True, norm="mag")
        _, h = sps_signal.freqs(b, a, worN=f / spec.cutoff_3db)
        return h
    # raised_root: roll-off implied by cutoff relative to the symbol rate
    if symbol_rate is None:
        raise SigkitError("raised_root response needs the symbol rate")
    beta = 2.0 * spec.cutoff_3db / symbol_rate - 1.0
    if not 0.0 <= beta <= 1.0:
        raise SigkitError("raised_root cutoff must lie in [Rs/2, Rs]")
    rs = symbol_rate
    af = np.abs(f)
    h = np.zeros_like(af)
    flat = af <= (1 - beta) * rs / 2
    h[flat] = 1.0
    if beta > 0:
        roll = ~flat & (af <= (1 + beta) * rs / 2)
        h[roll] = np.sqrt(
            0.5 * (1 + np.cos(np.pi / (beta * rs) * (af[roll] - (1 - beta) * rs / 2)))
        )
    return h.astype(np.complex128)


def shape_filter(symbols: np.ndarray, spec: FilterSpec, sps: int,
                 symbol_rate: float) -> SampledSignal:
    """Upsample symbols by zero insertion and apply the analog-prototype
    filter response on the FFT grid.

    The zero-inserted stream is white over the full sampling band, so the
    filter removes the spectral images; the deterministic gain
    1/sqrt(mean |H|^2) restores near-unit power for a unit-power symbol
    stream (exact for a white stream, independent of the data).
    """
    if sps < 2:
        raise SigkitError("sps must be >= 2")
    fs = sps * symbol_rate
    if spec.cutoff_3db >= fs / 2:
        raise SigkitError("filter cutoff must be below Nyquist")
    s = np.asarray(symbols, dtype=np.complex128)
    up = np.zeros(s.size * sps, dtype=np.complex128)
    up[::sps] = s * np.sqrt(sps)
    freqs = np.fft.fftfreq(up.size, d=1.0 / fs)
    h = filter_response(spec, freqs, symbol_rate=symbol_rate)
    h = h / np.sqrt(np.mean(np.abs(h) ** 2))
    out = np.fft.ifft(np.fft.fft(up) * h)
    return SampledSignal(out, sample_rate=fs)


# ---------------------------------------------------------------------------
# Noise loading


def awgn_osnr(signal: SampledSignal, osnr_db: float, rng: np.random.Generator,
              ref_bw: float = OSNR_REF_BW,
              signal_power: float | None = None) -> SampledSignal:
    """Add circular complex Gaussian noise for a target OSNR.

    The OSNR is signal power over the noise power falling in ``ref_bw``;
    the generated noise is white over the full simulated band.
    ``signal_power`` overrides the measured power as the OSNR reference
    (used when the waveform carries several WDM carriers and the OSNR is
    per-carrier).
    """
    if np.isinf(osnr_db):
        return signal
    p_sig = signal.power if signal_power is None else float(signal_power)
    osnr_lin = 10.0 ** (osnr_db / 10.0)
    p_noise = p_sig / osnr_lin * (signal.sample_rate / ref_bw)
    sigma = np.sqrt(p_noise / 2.0)
    n = sigma * (rng.standard_normal(len(signal)) + 1j * rng.standard_normal(len(signal)))
    return SampledSignal(signal.samples + n, signal.sample_rate, signal.center_offset)


# ---------------------------------------------------------------------------
# BER counting


@dataclass(frozen=True)
class BerResult:
    ber: float
    errors: int
    delay: int
    rotation: int
    nbits: int = field(default=0)


def _bits_to_pm(bits: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * bits.astype(np.float64)


def ber_count(tx: BitStream | np.ndarray, rx: BitStream | np.ndarray,
              resolve_ambiguity: bool = False,
              max_delay: int | None = None) -> BerResult:
    """Count bit errors between a reference and a received bit stream.

    With ``resolve_ambiguity`` the search covers circular integer symbol
    delays and the four QPSK quadrant rotations, reporting the minimizing
    combination (ties break to the smallest delay, then rotation).
    Delays are circular because every delay in the simulation chain is
    applied as an FFT linear phase.
    """
    txb = tx.bits if isinstance(tx, BitStream) else np.asarray(tx, dtype=np.uint8)
    rxb = rx.bits if isinstance(rx, BitStream) else np.asarray(rx, dtype=np.uint8)
    if txb.size == 0 or rxb.size == 0:
        raise SigkitError("ber_count requires nonempty streams")

    if not resolve_ambiguity:
        n = min(txb.size, rxb.size)
        errors = int(np.count_nonzero(txb[:n] != rxb[:n]))
        return BerResult(errors / n, errors, 0, 0, n)

    if rxb.size < 4096:
        raise SigkitError("ambiguity search needs >= 4096 rx bits")
    if txb.size % 2 or rxb.size % 2:
        raise SigkitError("ambiguity search operates on whole symbols (even bit counts)")

    n_sym_tx = txb.size // 2
    n_sym_rx = min(rxb.size // 2, n_sym_tx)
    rx_sym = qpsk_map(rxb[: 2 * n_sym_rx])

    # FFT circular correlation of +/-1 bit sequences gives the match count
    # at every delay in one pass per (rotation, bit position).
    tx0 = _bits_to_pm(txb[0::2])
    tx1 = _bits_to_pm(txb[1::2])
    ftx0 = np.fft.fft(tx0)
    ftx1 = np.fft.fft(tx1)

    nbits = 2 * n_sym_rx
    best = None
    rot = np.exp(1j * np.pi / 2 * np.arange(4))
    for r in range(4):
        # detected rotation r means rx = tx * exp(+j*pi/2*r)
        rbits = qpsk_demap(rx_sym * np.conj(rot[r]))
        r0 = np.zeros(n_sym_tx)
        r1 = np.zeros(n_sym_tx)
        r0[:n_sym_rx] = _bits_to_pm(rbits[0::2])
        r1[:n_sym_rx] = _bits_to_pm(rbits[1::2])
        # corr_k = sum_n tx[(n + k) mod N] * rx[n]; rx delayed by d peaks at
        # k = -d, so re-index to positive delay.
        corr = np.fft.ifft(ftx0 * np.conj(np.fft.fft(r0))).real
        corr += np.fft.ifft(ftx1 * np.conj(np.fft.fft(r1))).real
        corr = np.roll(corr[::-1], 1)
        errs = np.rint((nbits - corr) / 2).astype(np.int64)
        if max_delay is not None:
            keep = np.zeros(n_sym_tx, dtype=bool)
            d = np.arange(n_sym_tx)
            keep |= d <= max_delay
            keep |= (n_sym_tx - d) <= max_delay
            errs = np.where(keep, errs, nbits + 1)
        d_best = int(np.argmin(errs))
        cand = (int(errs[d_best]), d_best, r)
        if best is None or cand < best:
            best = cand
    errors, delay, rotation = best
    return BerResult(errors / nbits, errors, delay, rotation, nbits)


# ---------------------------------------------------------------------------
# Shared spectral helpers


def freq_shift(samples: np.ndarray, shift_hz: float, sample_rate: float) -> np.ndarray:
    """Multiply by a complex exponential (baseband frequency shift)."""
    n = np.arange(samples.size)
    return samples * np.exp(2j * np.pi * shift_hz / sample_rate * n)


def fractional_delay(samples: np.ndarray, delay_s: float, sample_rate: float) -> np.ndarray:
    """Circular (FFT linear-phase) delay by an arbitrary time."""
    f = np.fft.fftfreq(samples.size, d=1.0 / sample_rate)
    return np.fft.ifft(np.fft.fft(samples) * np.exp(-2j * np.pi * f * delay_s))


def resample_fft(samples: np.ndarray, sample_rate: float, new_rate: float) -> np.ndarray:
    """Exact band-limited resampling by FFT bin truncation/extension.

    Requires the resulting length ``n * new_rate / sample_rate`` to be an
    integer (always true for the power-of-two rates used here).
    """
    n = samples.size
    m_f = n * new_rate / sample_rate
    m = int(round(m_f))
    if abs(m - m_f) > 1e-9:
        raise SigkitError("resample_fft requires a commensurate rate ratio")
    if m == n:
        return samples.copy()
    spec = np.fft.fftshift(np.fft.fft(samples))
    if m < n:
        lo = (n - m) // 2
        spec = spec[lo:lo + m]
    else:
        pad = np.zeros(m, dtype=np.complex128)
        lo = (m - n) // 2
        pad[lo:lo + n] = spec
        spec = pad
    return np.fft.ifft(np.fft.ifftshift(spec)) * (m / n)
