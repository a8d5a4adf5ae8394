"""Transmitter: 8-mode x 10-wavelength QPSK frame construction.

Builds one complex-baseband frame per spatial/polarization channel.  Each
frame carries the full WDM comb (every carrier shaped, frequency-shifted
to its grid offset and summed), and the per-(mode, carrier) reference bit
streams are retained for BER evaluation.  Also computes the headline
capacity / spectral-efficiency figures.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sigkit
from .sigkit import FilterSpec, SampledSignal, SigkitError

C_LIGHT = 299792458.0


class TxError(ValueError):
    """Invalid transmitter configuration."""


@dataclass(frozen=True, order=True)
class ModeChannelId:
    """One spatial/polarization channel: azimuthal order l and polarization."""

    l: int
    pol: str

    def __post_init__(self):
        if self.pol not in ("X", "Y"):
            raise TxError("pol must be 'X' or 'Y'")

    @property
    def group(self) -> int:
        return abs(self.l)

    @property
    def label(self) -> str:
        return f"l{self.l:+d}{self.pol}"


#: Canonical 8-channel ordering: group |l|=2 first, then |l|=3; within a
#: group +l before -l, X before Y.
PAPER_MODES = tuple(
    ModeChannelId(l, pol)
    for l in (+2, -2, +3, -3)
    for pol in ("X", "Y")
)

#: Receiver index (one dual-pol coherent receiver per spatial mode).
SPATIAL_ORDER = (+2, -2, +3, -3)


@dataclass(frozen=True)
class WdmGrid:
    """Uniform WDM carrier grid described by its start wavelength and spacing."""

    n_channels: int = 10
    start_wavelength_nm: float = 1549.8
    spacing_ghz: float = 25.0

    def __post_init__(self):
        if self.n_channels < 1:
            raise TxError("grid needs at least one channel")
        if self.spacing_ghz <= 0:
            raise TxError("grid spacing must be positive")

    @property
    def spacing_hz(self) -> float:
        return self.spacing_ghz * 1e9

    @property
    def spacing_nm(self) -> float:
        lam = self.center_wavelength_nm * 1e-9
        return self.spacing_hz * lam ** 2 / C_LIGHT * 1e9

    @property
    def center_index(self) -> int:
        return (self.n_channels - 1) // 2

    @property
    def center_wavelength_nm(self) -> float:
        # grid is uniform in frequency; the nm start value anchors the band
        f0 = C_LIGHT / (self.start_wavelength_nm * 1e-9)
        fc = f0 - (self.n_channels - 1) / 2 * self.spacing_hz
        return C_LIGHT / fc * 1e9

    def offsets_hz(self) -> np.ndarray:
        """Baseband carrier offsets from band center, ascending frequency."""
        i = np.arange(self.n_channels)
        return (i - (self.n_channels - 1) / 2) * self.spacing_hz

    def wavelengths_nm(self) -> np.ndarray:
        """Carrier wavelengths, index-aligned with :meth:`offsets_hz`.

        Offsets ascend in frequency, so wavelengths descend: the start
        wavelength (1549.8 nm in the paper scenario) is the shortest and
        sits at the last index, i.e. the +112.5 GHz offset.
        """
        f0 = C_LIGHT / (self.start_wavelength_nm * 1e-9)
        freqs = f0 - np.arange(self.n_channels) * self.spacing_hz
        return C_LIGHT / freqs[::-1] * 1e9

    @property
    def span_hz(self) -> float:
        return (self.n_channels - 1) * self.spacing_hz


DEFAULT_DECORRELATION_DELAYS = (0, 257, 601, 1021, 1543, 1801, 2083, 2381)


@dataclass(frozen=True)
class TxConfig:
    symbol_rate: float = 16e9
    bits_per_symbol: int = 2
    n_symbols: int = 2 ** 14
    sps: int = 32
    grid: WdmGrid = field(default_factory=WdmGrid)
    modes: tuple[ModeChannelId, ...] = PAPER_MODES
    decorrelation_delays: tuple[int, ...] = DEFAULT_DECORRELATION_DELAYS
    replicate_adjacent_wdm: bool = False
    shaping: FilterSpec | None = None
    prbs_order: int = 18
    carriers: tuple[int, ...] | None = None  # None = all grid carriers

    def __post_init__(self):
        if self.bits_per_symbol != 2:
            raise TxError("only QPSK (2 bits/symbol) is supported")
        if self.n_symbols < 4096:
            raise TxError("n_symbols must be >= 4096 for BER runs")
        if len(self.decorrelation_delays) < len(self.modes):
            raise TxError("need one decorrelation delay per mode channel")
        if len(set(self.decorrelation_delays[: len(self.modes)])) != len(self.modes):
            raise TxError("decorrelation delays must be pairwise distinct")
        if self.shaping is None:
            object.__setattr__(
                self, "shaping",
                FilterSpec("bessel_lowpass", 5, 0.7 * self.symbol_rate),
            )
        if self.carriers is not None:
            bad = [c for c in self.carriers if not 0 <= c < self.grid.n_channels]
            if bad:
                raise TxError(f"carrier indices out of range: {bad}")

    @property
    def sample_rate(self) -> float:
        return self.sps * self.symbol_rate

    def active_carriers(self) -> tuple[int, ...]:
        if self.carriers is None:
            return tuple(range(self.grid.n_channels))
        return tuple(sorted(self.carriers))

    def min_sps(self) -> int:
        need = 2.0 * (self.grid.span_hz + self.symbol_rate)
        return int(np.ceil(need / self.symbol_rate))


@dataclass(frozen=True)
class Frame:
    """One channel's composite waveform plus rate metadata."""

    samples: np.ndarray
    sample_rate: float
    mode: ModeChannelId

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class TxFrameSet:
    frames: dict[ModeChannelId, Frame]
    reference_bits: dict[tuple[ModeChannelId, int], np.ndarray]
    config: TxConfig

    @property
    def sample_rate(self) -> float:
        return next(iter(self.frames.values())).sample_rate

    def as_matrix(self) -> np.ndarray:
        """Channel-by-sample matrix in the configured mode order."""
        return np.stack([self.frames[m].samples for m in self.config.modes])

    def with_matrix(self, matrix: np.ndarray) -> "TxFrameSet":
        frames = {
            m: Frame(matrix[i], self.sample_rate, m)
            for i, m in enumerate(self.config.modes)
        }
        return TxFrameSet(frames, self.reference_bits, self.config)


def build_tx(config: TxConfig, rng: np.random.Generator) -> TxFrameSet:
    """Generate the transmitted frame set.

    Per mode channel: draw PRBS bits per carrier (shared across carriers
    when ``replicate_adjacent_wdm`` is set, mirroring the single-modulator
    hardware), apply the decorrelation delay as a circular symbol shift,
    QPSK-map, shape, shift each carrier to its grid offset, sum and
    normalize to unit average power.
    """
    if config.sps < config.min_sps():
        raise TxError(
            f"sample rate too low for the WDM span: need sps >= {config.min_sps()}"
        )
    offsets = config.grid.offsets_hz()
    carriers = config.active_carriers()
    fs = config.sample_rate
    nbits = 2 * config.n_symbols

    frames: dict[ModeChannelId, Frame] = {}
    refs: dict[tuple[ModeChannelId, int], np.ndarray] = {}
    for mi, mode in enumerate(config.modes):
        comp = np.zeros(config.n_symbols * config.sps, dtype=np.complex128)
        shared_bits = None
        for ci in carriers:
            if config.replicate_adjacent_wdm and shared_bits is not None:
                bits = shared_bits
            else:
                seed = int(rng.integers(1, (1 << config.prbs_order) - 1))
                bits = sigkit.prbs(config.prbs_order, nbits, seed=seed).bits
                shared_bits = bits
            delay = config.decorrelation_delays[mi]
            bits = np.roll(bits.reshape(-1, 2), delay, axis=0).ravel()
            sym = sigkit.qpsk_map(bits)
            shaped = sigkit.shape_filter(sym, config.shaping, config.sps,
                                         config.symbol_rate)
            comp += sigkit.freq_shift(shaped.samples, offsets[ci], fs)
            refs[(mode, ci)] = bits
        comp /= np.sqrt(np.mean(np.abs(comp) ** 2))
        frames[mode] = Frame(comp, fs, mode)
    return TxFrameSet(frames, refs, config)


@dataclass(frozen=True)
class CapacityReport:
    gross_capacity_bps: float
    net_capacity_bps: float
    se_bps_hz: float
    se_distance_bps_hz_km: float


def capacity_report(config: TxConfig, fiber_length_km: float,
                    fec_overhead: float = 0.0) -> CapacityReport:
    """Aggregate capacity / spectral-efficiency arithmetic.

    gross = modes x carriers x symbol_rate x bits_per_symbol;
    SE = modes x symbol_rate x bits_per_symbol / grid spacing;
    SE-distance = SE x length; net = gross / (1 + fec_overhead).
    """
    n_modes = len(config.modes)
    n_car = config.grid.n_channels
    gross = n_modes * n_car * config.symbol_rate * config.bits_per_symbol
    se = n_modes * config.symbol_rate * config.bits_per_symbol / config.grid.spacing_hz
    return CapacityReport(
        gross_capacity_bps=gross,
        net_capacity_bps=gross / (1.0 + fec_overhead),
        se_bps_hz=se,
        se_distance_bps_hz_km=se * fiber_length_km,
    )


def group_channels(modes: tuple[ModeChannelId, ...], group: int) -> list[int]:
    """Indices (into the mode ordering) of the four channels of one group."""
    idx = [i for i, m in enumerate(modes) if m.group == group]
    if len(idx) != 4:
        raise TxError(f"mode group |l|={group} does not have exactly 4 channels")
    return idx
