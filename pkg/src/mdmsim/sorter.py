"""Fourier-optics simulation of the compact OAM mode sorter (DEMUX).

Scalar, paraxial, monochromatic model of the two-plane log-polar
coordinate-transformation sorter: a ring-core OAM field hits an
"unwrapper" phase plate (with the transform lens folded in), propagates
through the quartz plate to a "corrector" plate that flattens the
residual phase, and an anamorphic lens then focuses the resulting tilted
plane waves into spots whose displacement is proportional to the
azimuthal order l.  The focal-plane spots are coupled into an SMF array,
yielding a complex port-coupling matrix that can replace the link
simulation's abstract inter-group crosstalk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class SorterError(ValueError):
    """Invalid sorter geometry or sampling."""


# ---------------------------------------------------------------------------
# Field grid


@dataclass(frozen=True)
class FieldGrid:
    """2-D complex scalar field sampled on a uniform grid."""

    values: np.ndarray  # (ny, nx) complex
    dx: float
    dy: float
    wavelength: float = 1550e-9
    clipping_loss: float = 0.0  # power fraction removed by band limiting

    def __post_init__(self):
        ny, nx = self.values.shape
        if nx & (nx - 1) or ny & (ny - 1):
            raise SorterError("grid dimensions must be powers of two")
        if not np.all(np.isfinite(self.values)):
            raise SorterError("field contains non-finite values")
        if self.dx <= 0 or self.dy <= 0 or self.wavelength <= 0:
            raise SorterError("dx, dy and wavelength must be positive")

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx * self.dy)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered (x, y) coordinate arrays, broadcastable to the field."""
        x = (np.arange(self.nx) - self.nx // 2) * self.dx
        y = (np.arange(self.ny) - self.ny // 2) * self.dy
        return x[None, :], y[:, None]


def make_grid(n: int = 1024, dx: float = 2.5e-6,
              wavelength: float = 1550e-9) -> FieldGrid:
    """Empty square grid with the default DEMUX sampling."""
    return FieldGrid(np.zeros((n, n), dtype=np.complex128), dx, dx, wavelength)


# ---------------------------------------------------------------------------
# OAM ring modes


@dataclass(frozen=True)
class OamModeSpec:
    """Ring-core OAM mode: Gaussian annulus amplitude, exp(i l phi) phase."""

    l: int
    ring_radius: float = 150e-6
    ring_width: float = 40e-6
    profile: str = "gaussian-annulus"

    def __post_init__(self):
        if self.ring_width <= 0 or self.ring_radius <= 0:
            raise SorterError("ring radius and width must be positive")
        if abs(self.l) > 6:
            raise SorterError("|l| <= 6 supported")
        if self.profile != "gaussian-annulus":
            raise SorterError(f"unknown amplitude profile {self.profile!r}")


def gen_ring_oam(grid: FieldGrid, spec: OamModeSpec) -> FieldGrid:
    """Unit-power ring field A(r) exp(i l phi) on the grid geometry."""
    if spec.ring_width / min(grid.dx, grid.dy) < 16:
        raise SorterError(
            f"ring width {spec.ring_width:.3g} m under-resolved: needs >= 16 "
            f"pixels, got {spec.ring_width / min(grid.dx, grid.dy):.1f}"
        )
    beam_diameter = 2.0 * (spec.ring_radius + spec.ring_width)
    span = min(grid.nx * grid.dx, grid.ny * grid.dy)
    if span < 4.0 * beam_diameter:
        raise SorterError(
            f"grid span {span:.3g} m below 4x beam diameter "
            f"{4.0 * beam_diameter:.3g} m"
        )
    x, y = grid.coords()
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    amp = np.exp(-((r - spec.ring_radius) / spec.ring_width) ** 2)
    psi = amp * np.exp(1j * spec.l * phi)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx * grid.dy)
    return replace(grid, values=psi)


# ---------------------------------------------------------------------------
# Phase plates


QUARTZ_INDEX = 1.444


@dataclass(frozen=True)
class DoeSpec:
    """Two-plane coordinate-transformation element pair."""

    mapping: str = "log_polar"
    a: float = 156e-6  # transform scale: v = a * theta
    b: float = 150e-6  # radial reference: u = -a ln(r / b)
    plate_thickness: float = 5e-3
    plate_index: float = QUARTZ_INDEX
    focal_length: float = 200e-3

    def __post_init__(self):
        if self.mapping not in ("log_polar", "spiral"):
            raise SorterError(f"unknown mapping {self.mapping!r}")
        if self.mapping == "spiral":
            raise SorterError(
                "the spiral mapping is reserved but not implemented; "
                "use 'log_polar'"
            )
        if self.a <= 0 or self.b <= 0:
            raise SorterError("transform scales a, b must be positive")
        if self.plate_thickness <= 0 or self.plate_index < 1.0:
            raise SorterError("invalid plate geometry")

    @property
    def plate_separation(self) -> float:
        """Optical path between the DOE surfaces (thickness / index)."""
        return self.plate_thickness / self.plate_index

    def spot_pitch(self, wavelength: float) -> float:
        """Focal-plane displacement per unit l: lambda f / (2 pi a)."""
        return wavelength * self.focal_length / (2.0 * np.pi * self.a)


def doe_phase(spec: DoeSpec, grid: FieldGrid) -> tuple[np.ndarray, np.ndarray]:
    """Unwrapper and corrector phase maps, wrapped to [0, 2pi).

    Unwrapper (log-polar):
        phi1(x, y) = (2 pi a / lambda d) [y atan2(y, x) - x ln(r / b) + x]
    Corrector (stationary-phase conjugate on the (u, v) plane):
        phi2(u, v) = -(2 pi a b / lambda d) exp(-u/a) cos(v/a)
    The transform lens (-pi r^2 / lambda d) and the Fresnel-term removal
    (-pi (u^2+v^2) / lambda d) are applied separately in the pipeline so
    the returned maps are the pure mapping phases.
    """
    lam_d = grid.wavelength * spec.plate_separation
    x, y = grid.coords()
    r = np.hypot(x, y)
    r_safe = np.where(r > 0, r, grid.dx * 1e-6)
    phi1 = (2.0 * np.pi * spec.a / lam_d) * (
        y * np.arctan2(y, x) - x * np.log(r_safe / spec.b) + x
    )
    u, v = x, y  # corrector plane reuses the grid coordinates
    phi2 = -(2.0 * np.pi * spec.a * spec.b / lam_d) * np.exp(-u / spec.a) \
        * np.cos(v / spec.a)
    phi2 = phi2 + np.zeros_like(phi1)
    return np.mod(phi1, 2.0 * np.pi), np.mod(phi2, 2.0 * np.pi)


# ---------------------------------------------------------------------------
# Propagation


def propagate_fresnel(field: FieldGrid, distance: float,
                      clip_tolerance: float = 1e-3) -> FieldGrid:
    """Band-limited angular-spectrum propagation over ``distance``.

    Applies exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2)) in the spectral
    domain with evanescent components zeroed.  Spatial frequencies beyond
    the alias-free band limit of the sampled kernel are clipped; the
    removed power fraction accumulates in ``clipping_loss`` on the
    returned field (never silent).  If clipping would exceed
    ``clip_tolerance``, an error names the grid size that satisfies the
    bound at this sampling.
    """
    if distance == 0.0:
        return field
    if distance < 0:
        raise SorterError("backward propagation not supported")
    lam = field.wavelength
    fx = np.fft.fftfreq(field.nx, d=field.dx)[None, :]
    fy = np.fft.fftfreq(field.ny, d=field.dy)[:, None]
    spec = np.fft.fft2(field.values)

    # alias-free bound per axis: the kernel's phase gradient must stay
    # below half a cycle per frequency sample
    dfx = 1.0 / (field.nx * field.dx)
    dfy = 1.0 / (field.ny * field.dy)
    fx_lim = 1.0 / (lam * np.sqrt((2.0 * dfx * distance) ** 2 + 1.0))
    fy_lim = 1.0 / (lam * np.sqrt((2.0 * dfy * distance) ** 2 + 1.0))
    out_of_band = (np.abs(fx) > fx_lim) | (np.abs(fy) > fy_lim)
    p = np.abs(spec) ** 2
    total = p.sum()
    frac = float(p[out_of_band].sum() / total) if total > 0 else 0.0
    if frac > clip_tolerance:
        # doubling n halves df and raises the Nyquist frequency, both of
        # which relax the bound; report the first power of two that works
        need = max(field.nx, field.ny)
        while need < 2 ** 16:
            need *= 2
            lim = 1.0 / (lam * np.sqrt(
                (2.0 * distance / (need * field.dx)) ** 2 + 1.0))
            if lim >= 0.5 / field.dx:
                break
        raise SorterError(
            f"aliasing bound violated for distance {distance:.3g} m: "
            f"{frac:.2e} of the power lies beyond the band limit "
            f"(tolerance {clip_tolerance:.1e}); a {need}x{need} grid at "
            f"this dx would satisfy it"
        )
    spec[out_of_band] = 0.0

    arg = 1.0 / lam ** 2 - fx ** 2 - fy ** 2
    kernel = np.where(arg > 0,
                      np.exp(2j * np.pi * distance * np.sqrt(np.maximum(arg, 0.0))),
                      0.0)
    out = np.fft.ifft2(spec * kernel)
    return replace(field, values=out,
                   clipping_loss=field.clipping_loss + frac)


def _apply_phase(field: FieldGrid, phase: np.ndarray) -> FieldGrid:
    return replace(field, values=field.values * np.exp(1j * phase))


def unwrap_field(field: FieldGrid, doe: DoeSpec) -> FieldGrid:
    """Unwrapper plate -> quartz plate -> corrector plate.

    Returns the corrector-plane field: each input exp(i l phi) emerges as
    an approximately plane wave tilted by l / (2 pi a) along the v axis.
    """
    phi1, phi2 = doe_phase(doe, field)
    lam = field.wavelength
    d = doe.plate_separation
    x, y = field.coords()
    lens1 = -np.pi * (x ** 2 + y ** 2) / (lam * d)
    f = _apply_phase(field, phi1 + lens1)
    f = propagate_fresnel(f, d)
    fresnel2 = -np.pi * (x ** 2 + y ** 2) / (lam * d)
    return _apply_phase(f, phi2 + fresnel2)


# ---------------------------------------------------------------------------
# Focal plane and SMF coupling


@dataclass(frozen=True)
class SmfArraySpec:
    """Single-mode-fiber port array in the sorter focal plane."""

    spot_pitch: float
    mode_field_radius: float = 14e-6
    port_orders: tuple[int, ...] = (+2, -2, +3, -3)

    def __post_init__(self):
        if self.spot_pitch <= 0 or self.mode_field_radius <= 0:
            raise SorterError("pitch and mode-field radius must be positive")
        centers = sorted(self.port_centers())
        for p, q in zip(centers, centers[1:]):
            if q - p < 2.0 * self.mode_field_radius:
                raise SorterError("ports overlap at the 1/e^2 radius")

    @property
    def n_ports(self) -> int:
        return len(self.port_orders)

    def port_centers(self) -> tuple[float, ...]:
        return tuple(l * self.spot_pitch for l in self.port_orders)


def default_smf(doe: DoeSpec, wavelength: float = 1550e-9) -> SmfArraySpec:
    return SmfArraySpec(spot_pitch=doe.spot_pitch(wavelength))


@dataclass(frozen=True)
class FocalResult:
    centroid: float              # meters along the sort axis
    couplings: np.ndarray        # complex, one per SMF port
    intensity: np.ndarray        # focal-plane image (ny, n_fft)
    axis: np.ndarray             # sort-axis coordinates, meters


def focal_spots(field: FieldGrid, focal_length: float, smf: SmfArraySpec,
                lens: str = "anamorphic", pad: int = 8) -> FocalResult:
    """Focus the corrector-plane field and couple it into the SMF array.

    ``lens='anamorphic'`` Fourier-transforms along the sort (v) axis and
    images the orthogonal axis, per the elliptical lens in the DEMUX;
    ``lens='circular'`` applies a full 2-D Fourier transform.  The sort
    axis is zero-padded ``pad``-fold for focal-plane sampling of
    lambda f / (pad N dx).  Couplings are overlap integrals with a
    Gaussian of the configured mode-field radius at each port center.
    """
    if lens not in ("anamorphic", "circular"):
        raise SorterError(f"unknown lens model {lens!r}")
    lam = field.wavelength
    n_fft = pad * field.ny
    # sort axis is the grid v (row) axis; report it as the horizontal
    # displacement coordinate of the focal plane
    vals = np.fft.fftshift(
        np.fft.fft(np.fft.ifftshift(field.values, axes=0), n=n_fft, axis=0),
        axes=0)
    if lens == "circular":
        vals = np.fft.fftshift(
            np.fft.fft(np.fft.ifftshift(vals, axes=1), axis=1), axes=1)
    df = 1.0 / (n_fft * field.dy)
    axis = (np.arange(n_fft) - n_fft // 2) * df * lam * focal_length
    # unitary scaling: dy per input sample, focal pixel lambda f df
    vals = vals * field.dy / np.sqrt(lam * focal_length)

    intensity = np.abs(vals) ** 2
    marg = intensity.sum(axis=1)
    centroid = float(np.sum(axis * marg) / np.sum(marg))
    if abs(centroid) > axis[-1]:
        raise SorterError("focal spot centroid outside the simulated grid")

    dxf = axis[1] - axis[0]
    couplings = np.empty(smf.n_ports, dtype=np.complex128)
    w = smf.mode_field_radius
    x_im, _ = field.coords()  # imaged (non-sort) axis keeps input coords
    for pi, center in enumerate(smf.port_centers()):
        g_sort = np.exp(-((axis - center) / w) ** 2)
        g_im = np.exp(-(x_im[0] / w) ** 2)
        gauss = g_sort[:, None] * g_im[None, :]
        gauss /= np.sqrt(np.sum(gauss ** 2) * dxf * field.dx)
        couplings[pi] = np.sum(np.conj(gauss) * vals) * dxf * field.dx
    return FocalResult(centroid, couplings, intensity, axis)


# ---------------------------------------------------------------------------
# End-to-end coupling matrix


def sorter_matrix(modes: list[OamModeSpec], doe: DoeSpec,
                  smf: SmfArraySpec | None = None,
                  grid: FieldGrid | None = None,
                  lens: str = "anamorphic") -> np.ndarray:
    """Complex port-coupling matrix of the full sorter pipeline.

    Entry [p, m] is the complex amplitude of input mode ``modes[m]`` at
    SMF port ``p``.  Columns of a passive device sum to <= 1 in power.
    """
    grid = grid if grid is not None else make_grid()
    smf = smf if smf is not None else default_smf(doe, grid.wavelength)
    cols = []
    for spec in modes:
        f = gen_ring_oam(grid, spec)
        f = unwrap_field(f, doe)
        cols.append(focal_spots(f, doe.focal_length, smf, lens=lens).couplings)
    return np.stack(cols, axis=1)


def inter_group_coupling(matrix: np.ndarray, port_orders: tuple[int, ...],
                         xt_db: float) -> np.ndarray:
    """8x8 channel coupling from a measured 4x4 sorter matrix.

    Rows are renormalized to unit power with the off-group share rescaled
    to ``xt_db`` (the end-to-end crosstalk figure is quoted for the whole
    system including the DEMUX, so the device matrix is adjusted to hit
    the configured total).  Polarization is a passthrough label: the
    scalar coupling applies identically to X and Y.
    """
    if matrix.shape != (4, 4):
        raise SorterError("expected a 4x4 sorter matrix")
    x = 10.0 ** (xt_db / 10.0)
    if not 0.0 <= x < 1.0:
        raise SorterError("crosstalk must be below 0 dB")
    groups = np.array([abs(l) for l in port_orders])
    m = matrix.astype(np.complex128).copy()
    for i in range(4):
        same = groups == groups[i]
        p_in = np.sum(np.abs(m[i, same]) ** 2)
        p_off = np.sum(np.abs(m[i, ~same]) ** 2)
        if p_in <= 0 or p_off <= 0:
            raise SorterError("degenerate sorter matrix row")
        m[i, same] *= np.sqrt((1.0 - x) / p_in)
        m[i, ~same] *= np.sqrt(x / p_off)
    return np.kron(m, np.eye(2))
