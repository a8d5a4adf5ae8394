"""Sectioned ring-core fiber channel model.

The 8 channels form two 4-channel mode groups.  Each fiber section applies
an independent Haar-random 4x4 unitary per group plus per-channel group
delays; chromatic dispersion is a quadratic spectral phase; a single
static end-to-end coupling matrix leaks a configured power fraction
between the groups.  Receiver-side impairments (laser frequency offset,
Wiener phase noise, OSNR-setting noise) are applied per mode group after
the linear channel.

All per-section operators are diagonal or memoryless in the frequency
domain, so propagation runs as one FFT per channel, a cascade of block
matrix products and spectral phases, and one inverse FFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sigkit
from .txchain import C_LIGHT, PAPER_MODES, ModeChannelId, TxFrameSet, group_channels


class ChannelError(ValueError):
    """Invalid channel configuration or incompatible frames."""


@dataclass(frozen=True)
class FiberSpec:
    length_km: float = 50.0
    atten_db_per_km: float = 0.31
    n_sections: int = 16
    intra_mg_dmd_ps_per_km: float = 20.0
    cd_ps_nm_km: float = 17.0
    dneff_mg2_mg3: float = 3.3e-3
    group_walkoff: bool = True
    # ring-core geometry, carried as metadata only
    geometry: dict = field(default_factory=lambda: {
        "r_inner_um": 3.5, "r_outer_um": 7.5, "delta_n": 0.01,
        "notch_um": (4.5, 5.5), "notch_delta_n": 0.009,
    })

    def __post_init__(self):
        if self.length_km <= 0:
            raise ChannelError("fiber length must be positive")
        if self.n_sections < 1:
            raise ChannelError("need at least one fiber section")

    @property
    def dmd_spread_s(self) -> float:
        return self.intra_mg_dmd_ps_per_km * 1e-12 * self.length_km

    @property
    def total_atten_db(self) -> float:
        return self.atten_db_per_km * self.length_km

    @property
    def walkoff_s(self) -> float:
        if not self.group_walkoff:
            return 0.0
        return self.dneff_mg2_mg3 * self.length_km * 1e3 / C_LIGHT


@dataclass(frozen=True)
class CrosstalkSpec:
    inter_mg_xt_db: float = -10.0
    structure: str = "static_matrix"

    def __post_init__(self):
        if self.inter_mg_xt_db >= 0:
            raise ChannelError("crosstalk must be negative dB")
        if self.structure != "static_matrix":
            raise ChannelError("only the static end-to-end coupling is implemented")


@dataclass(frozen=True)
class ImpairmentSpec:
    """Receiver/laser impairments.

    ``freq_offset_hz`` is per mode group (one LO per dual-receiver pair);
    a scalar applies to both groups.  ``linewidth_hz`` is the combined
    Tx + LO Lorentzian linewidth driving the Wiener phase walk.
    """

    freq_offset_hz: float | tuple[float, float] = (170e6, -140e6)
    linewidth_hz: float = 100e3
    osnr_db: float = np.inf

    def __post_init__(self):
        if self.linewidth_hz < 0:
            raise ChannelError("linewidth must be >= 0")

    def group_offsets(self) -> tuple[float, float]:
        if np.isscalar(self.freq_offset_hz):
            return (float(self.freq_offset_hz),) * 2
        off = tuple(float(v) for v in self.freq_offset_hz)
        if len(off) != 2:
            raise ChannelError("freq_offset_hz needs one value per mode group")
        return off


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed n x n unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    # fix the phase ambiguity so the distribution is exactly Haar
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def _inter_group_matrix(xt_db: float, rng: np.random.Generator) -> np.ndarray:
    """Unitary 8x8 coupling whose off-block row power is exactly 10^(xt/10)."""
    if np.isneginf(xt_db):
        return np.eye(8, dtype=np.complex128)
    x = 10.0 ** (xt_db / 10.0)
    if x >= 1.0:
        raise ChannelError("inter-group crosstalk must stay below 0 dB")
    c, s = np.sqrt(1.0 - x), np.sqrt(x)
    rot = np.block([
        [c * np.eye(4), s * np.eye(4)],
        [-s * np.eye(4), c * np.eye(4)],
    ]).astype(np.complex128)
    left = np.zeros((8, 8), dtype=np.complex128)
    right = np.zeros((8, 8), dtype=np.complex128)
    left[:4, :4] = haar_unitary(4, rng)
    left[4:, 4:] = haar_unitary(4, rng)
    right[:4, :4] = haar_unitary(4, rng)
    right[4:, 4:] = haar_unitary(4, rng)
    return left @ rot @ right


@dataclass(frozen=True)
class ChannelRealization:
    """Frozen, seeded draw of the fiber model.

    ``section_unitaries`` has shape (n_sections, 2, 4, 4) (one unitary per
    group per section); ``section_delays`` has shape (n_sections, 8) in
    seconds, indexed by the canonical channel order.
    """

    fiber: FiberSpec
    xt: CrosstalkSpec
    imp: ImpairmentSpec
    seed: int
    section_unitaries: np.ndarray
    section_delays: np.ndarray
    inter_group: np.ndarray
    modes: tuple[ModeChannelId, ...] = PAPER_MODES
    frozen_identity: bool = False

    def with_inter_group(self, matrix: np.ndarray) -> "ChannelRealization":
        """Same realization with the end-to-end coupling replaced (used to
        put the physical sorter matrix in the loop)."""
        m = np.asarray(matrix, dtype=np.complex128)
        if m.shape != (8, 8):
            raise ChannelError("inter-group matrix must be 8x8")
        return ChannelRealization(
            self.fiber, self.xt, self.imp, self.seed,
            self.section_unitaries, self.section_delays, m,
            self.modes, self.frozen_identity,
        )

    def group_slices(self) -> tuple[list[int], list[int]]:
        return (group_channels(self.modes, 2), group_channels(self.modes, 3))


def make_fiber(fiber: FiberSpec, xt: CrosstalkSpec, imp: ImpairmentSpec,
               seed: int, frozen_identity: bool = False) -> ChannelRealization:
    """Draw a channel realization; deterministic for a given seed.

    ``frozen_identity`` replaces every random element by the identity
    (debug aid: the channel reduces to pure attenuation + impairments).
    """
    rng = np.random.default_rng(seed)
    s = fiber.n_sections
    if frozen_identity:
        unitaries = np.broadcast_to(np.eye(4, dtype=np.complex128),
                                    (s, 2, 4, 4)).copy()
        delays = np.zeros((s, 8))
        inter = np.eye(8, dtype=np.complex128)
    else:
        unitaries = np.empty((s, 2, 4, 4), dtype=np.complex128)
        for i in range(s):
            for g in range(2):
                unitaries[i, g] = haar_unitary(4, rng)
        delays = rng.uniform(0.0, fiber.dmd_spread_s / s, size=(s, 8))
        inter = _inter_group_matrix(xt.inter_mg_xt_db, rng)
    return ChannelRealization(fiber, xt, imp, seed, unitaries, delays, inter,
                              frozen_identity=frozen_identity)


def propagate(frames: TxFrameSet, ch: ChannelRealization,
              rng: np.random.Generator | None = None,
              noise: bool = True, attenuation: bool = True,
              phase_impairments: bool = True,
              n_carriers_for_osnr: int | None = None) -> TxFrameSet:
    """Propagate an 8-channel frame set through a channel realization.

    Per section: per-group unitary mixing, per-channel fractional delays,
    chromatic dispersion; then the end-to-end inter-group coupling, group
    walk-off delay, total attenuation, per-group laser frequency offset and
    Wiener phase noise, and OSNR-referenced noise loading.

    The ``noise`` / ``attenuation`` / ``phase_impairments`` switches
    disable the non-linear-time-invariant parts for transfer-matrix
    probing and loss-arithmetic checks.
    """
    cfg = frames.config
    if tuple(cfg.modes) != tuple(ch.modes):
        raise ChannelError("frame set and realization use different mode orders")
    x = frames.as_matrix()
    n_ch, n = x.shape
    fs = frames.sample_rate

    spec = np.fft.fft(x, axis=1)
    f = np.fft.fftfreq(n, d=1.0 / fs)
    g2, g3 = ch.group_slices()

    for si in range(ch.fiber.n_sections):
        spec[g2] = ch.section_unitaries[si, 0] @ spec[g2]
        spec[g3] = ch.section_unitaries[si, 1] @ spec[g3]
        spec *= np.exp(-2j * np.pi * np.outer(ch.section_delays[si], f))

    # chromatic dispersion over the whole span (quadratic spectral phase)
    lam = cfg.grid.center_wavelength_nm * 1e-9
    d_total = ch.fiber.cd_ps_nm_km * 1e-6 * ch.fiber.length_km * 1e3  # s/m^2 * m
    spec *= np.exp(-1j * np.pi * lam ** 2 * d_total / C_LIGHT * f ** 2)

    # inter-group coupling, then group walk-off (|l|=3 arrives later)
    spec = ch.inter_group @ spec
    if ch.fiber.walkoff_s:
        spec[g3] *= np.exp(-2j * np.pi * ch.fiber.walkoff_s * f)

    y = np.fft.ifft(spec, axis=1)

    if attenuation:
        y *= 10.0 ** (-ch.fiber.total_atten_db / 20.0)

    if phase_impairments:
        if rng is None:
            raise ChannelError("phase impairments need an RNG handle")
        offsets = ch.imp.group_offsets()
        t = np.arange(n) / fs
        var = 2.0 * np.pi * ch.imp.linewidth_hz / fs
        for gi, gsel in enumerate((g2, g3)):
            # every delay in the simulator is circular (FFT linear phase),
            # so the laser processes must be circularly continuous too:
            # the offset snaps to an integer number of cycles per record
            # and the Wiener walk is closed as a Brownian bridge.  Both
            # perturbations are below the FOC/CPE tracking resolution.
            f_q = np.round(offsets[gi] * n / fs) * fs / n
            rot = np.exp(2j * np.pi * f_q * t)
            if var > 0:
                phase = np.cumsum(np.sqrt(var) * rng.standard_normal(n))
                phase -= np.arange(n) * (phase[-1] / (n - 1))
                rot = rot * np.exp(1j * phase)
            y[gsel] *= rot

    out = frames.with_matrix(y)
    if noise and not np.isinf(ch.imp.osnr_db):
        if rng is None:
            raise ChannelError("noise loading needs an RNG handle")
        ncar = n_carriers_for_osnr or len(cfg.active_carriers())
        noisy = {}
        for m, fr in out.frames.items():
            sig = sigkit.SampledSignal(fr.samples, fs)
            # per-carrier OSNR: the composite power is shared by ncar carriers
            sig = sigkit.awgn_osnr(sig, ch.imp.osnr_db, rng,
                                   signal_power=sig.power / ncar)
            noisy[m] = type(fr)(sig.samples, fs, m)
        out = TxFrameSet(noisy, out.reference_bits, out.config)
    return out


def transfer_matrix(system, n_channels: int = 8, probe_len: int = 4096,
                    sample_rate: float = 512e9, seed: int = 0) -> np.ndarray:
    """Measured power transfer matrix of a linear system closure.

    ``system`` maps a (n_channels, probe_len) complex matrix to an output
    matrix; each input channel is excited in turn with a unit-power
    band-limited probe and the per-output powers are returned in dB,
    indexed [output, input].
    """
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(probe_len) + 1j * rng.standard_normal(probe_len)
    probe /= np.sqrt(np.mean(np.abs(probe) ** 2))
    power = np.zeros((n_channels, n_channels))
    for j in range(n_channels):
        x = np.zeros((n_channels, probe_len), dtype=np.complex128)
        x[j] = probe
        y = system(x)
        power[:, j] = np.mean(np.abs(y) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.maximum(power, 1e-30))


def realization_transfer_matrix(ch: ChannelRealization, frames_template: TxFrameSet,
                                probe_len: int = 4096) -> np.ndarray:
    """Transfer matrix of a realization's linear part (loss and noise off)."""
    cfg = frames_template.config

    def system(x):
        from .txchain import Frame, TxFrameSet
        frames = {m: Frame(x[i], frames_template.sample_rate, m)
                  for i, m in enumerate(cfg.modes)}
        fset = TxFrameSet(frames, {}, cfg)
        out = propagate(fset, ch, noise=False, attenuation=False,
                        phase_impairments=False)
        return out.as_matrix()

    return transfer_matrix(system, len(cfg.modes), probe_len,
                           frames_template.sample_rate)


def offblock_leakage_db(tmat_db: np.ndarray, modes=PAPER_MODES) -> np.ndarray:
    """Per-input-channel off-block leaked power (dB) from a transfer matrix."""
    g2 = group_channels(modes, 2)
    g3 = group_channels(modes, 3)
    lin = 10.0 ** (tmat_db / 10.0)
    leak = np.empty(len(modes))
    for j in range(len(modes)):
        other = g3 if j in g2 else g2
        leak[j] = lin[other, j].sum()
    return 10.0 * np.log10(np.maximum(leak, 1e-30))
