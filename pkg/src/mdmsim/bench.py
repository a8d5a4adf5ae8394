"""Scenario runner: config parsing, cell execution, reporting.

A scenario JSON file describes the transmitter, fiber, crosstalk,
impairments, DSP, sorter and run selection.  ``run_scenario`` executes
the tx -> channel (-> optional physical sorter coupling) -> rx pipeline
for every requested (mode group, wavelength) cell, writes ``report.json``
plus CSV tables (BER table, transfer matrix, constellations, taps,
spectra) and renders the matching figures next to them.

Exit-code contract: 0 = all cells under the FEC threshold, 2 = at least
one cell over it, 1 = configuration or execution error.
"""

from __future__ import annotations

import dataclasses
import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import channel as chn
from . import plots, rxdsp, sigkit, sorter, txchain, wavio

FEC_THRESHOLD = 2.4e-2
SCHEMA_VERSION = 1


class BenchError(ValueError):
    """Invalid scenario configuration, with a field-path diagnostic."""


# ---------------------------------------------------------------------------
# Scenario configuration


@dataclass(frozen=True)
class SorterSettings:
    """How the inter-group coupling is realized.

    ``abstract`` uses the analytic unitary coupling at the configured XT;
    ``physical`` runs the Fourier-optics sorter pipeline and rescales its
    4x4 port matrix so the end-to-end system crosstalk matches the
    configured figure.
    """

    mode: str = "abstract"
    doe: sorter.DoeSpec = field(default_factory=sorter.DoeSpec)
    smf: sorter.SmfArraySpec | None = None
    ring_radius: float = 150e-6
    ring_width: float = 40e-6
    grid_n: int = 1024
    grid_dx: float = 2.5e-6

    def __post_init__(self):
        if self.mode not in ("abstract", "physical"):
            raise BenchError(
                f"sorter.mode must be 'abstract' or 'physical', got {self.mode!r}"
            )


@dataclass(frozen=True)
class RunSettings:
    seed: int
    n_symbols: int = 2 ** 14
    wavelengths: str | tuple[int, ...] = "desk"
    groups: str | tuple[int, ...] = "all"

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise BenchError("run.seed must be an integer (no wall-clock seeding)")
        if self.seed < 0:
            raise BenchError("run.seed must be non-negative")

    def wavelength_indices(self, grid: txchain.WdmGrid, full: bool) -> tuple[int, ...]:
        if full or self.wavelengths == "all":
            return tuple(range(grid.n_channels))
        if self.wavelengths == "desk":
            # desk-scale default: both edges plus the center carrier
            return tuple(sorted({0, grid.center_index, grid.n_channels - 1}))
        idx = tuple(int(w) for w in self.wavelengths)
        bad = [w for w in idx if not 0 <= w < grid.n_channels]
        if bad:
            raise BenchError(f"run.wavelengths out of range: {bad}")
        return idx

    def group_list(self) -> tuple[int, ...]:
        if self.groups == "all":
            return (2, 3)
        gl = tuple(int(g) for g in self.groups)
        bad = [g for g in gl if g not in (2, 3)]
        if bad:
            raise BenchError(f"run.groups must be drawn from (2, 3), got {bad}")
        return gl


@dataclass(frozen=True)
class ScenarioConfig:
    tx: txchain.TxConfig
    fiber: chn.FiberSpec
    xt: chn.CrosstalkSpec
    imp: chn.ImpairmentSpec
    dsp: rxdsp.DspConfig
    sorter: SorterSettings
    run: RunSettings
    outputs: str = "out"


# ---------------------------------------------------------------------------
# JSON parsing


def _strip_comments(obj):
    if isinstance(obj, dict):
        return {k: _strip_comments(v) for k, v in obj.items()
                if not k.startswith("_comment")}
    if isinstance(obj, list):
        return [_strip_comments(v) for v in obj]
    return obj


def _build(cls, data: dict, path: str, converters: dict | None = None):
    """Construct a dataclass from a JSON dict with field-path diagnostics."""
    if not isinstance(data, dict):
        raise BenchError(f"{path}: expected an object, got {type(data).__name__}")
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise BenchError(
            f"{path}: unknown field(s) {sorted(unknown)}; valid fields: "
            f"{sorted(valid)}"
        )
    kwargs = {}
    for k, v in data.items():
        conv = (converters or {}).get(k)
        try:
            kwargs[k] = conv(v) if conv else v
        except BenchError:
            raise
        except (ValueError, TypeError) as exc:
            raise BenchError(f"{path}.{k}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise BenchError(f"{path}: {exc}") from exc


def _parse_tx(data: dict) -> txchain.TxConfig:
    return _build(txchain.TxConfig, data, "tx", {
        "grid": lambda g: _build(txchain.WdmGrid, g, "tx.grid"),
        "shaping": lambda s: _build(sigkit.FilterSpec, s, "tx.shaping"),
        "carriers": lambda c: tuple(int(x) for x in c),
        "decorrelation_delays": lambda d: tuple(int(x) for x in d),
    })


def _parse_imp(data: dict) -> chn.ImpairmentSpec:
    def osnr(v):
        return np.inf if v == "inf" else float(v)

    def offset(v):
        return tuple(float(x) for x in v) if isinstance(v, list) else float(v)

    return _build(chn.ImpairmentSpec, data, "imp",
                  {"osnr_db": osnr, "freq_offset_hz": offset})


def _parse_sorter(data: dict) -> SorterSettings:
    return _build(SorterSettings, data, "sorter", {
        "doe": lambda d: _build(sorter.DoeSpec, d, "sorter.doe"),
        "smf": lambda s: _build(sorter.SmfArraySpec, s, "sorter.smf", {
            "port_orders": lambda p: tuple(int(x) for x in p)}),
    })


def _parse_run(data: dict) -> RunSettings:
    def subset(v):
        return v if isinstance(v, str) else tuple(int(x) for x in v)

    return _build(RunSettings, data, "run",
                  {"wavelengths": subset, "groups": subset})


_SECTION_PARSERS = {
    "tx": _parse_tx,
    "fiber": lambda d: _build(chn.FiberSpec, d, "fiber"),
    "xt": lambda d: _build(chn.CrosstalkSpec, d, "xt"),
    "imp": _parse_imp,
    "dsp": lambda d: _build(rxdsp.DspConfig, d, "dsp"),
    "sorter": _parse_sorter,
    "run": _parse_run,
}


def parse_config(data: dict) -> ScenarioConfig:
    data = _strip_comments(data)
    unknown = set(data) - set(_SECTION_PARSERS) - {"outputs"}
    if unknown:
        raise BenchError(
            f"unknown top-level section(s) {sorted(unknown)}; valid sections: "
            f"{sorted(_SECTION_PARSERS) + ['outputs']}"
        )
    if "run" not in data:
        raise BenchError("run: section is required (it carries the seed)")
    sections = {name: parser(data.get(name, {}))
                for name, parser in _SECTION_PARSERS.items()}
    outputs = data.get("outputs", "out")
    if not isinstance(outputs, str):
        raise BenchError("outputs: expected a directory path string")
    cfg = ScenarioConfig(outputs=outputs, **sections)
    # run.n_symbols governs the frame length
    cfg = replace(cfg, tx=replace(cfg.tx, n_symbols=cfg.run.n_symbols))
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise BenchError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def config_echo(cfg: ScenarioConfig) -> dict:
    """JSON-safe dict mirror of the parsed configuration."""

    def safe(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: safe(getattr(obj, f.name))
                    for f in dataclasses.fields(obj)}
        if isinstance(obj, dict):
            return {str(k): safe(v) for k, v in obj.items()}
        if isinstance(obj, (tuple, list)):
            return [safe(v) for v in obj]
        if isinstance(obj, float) and np.isinf(obj):
            return "inf"
        if isinstance(obj, (np.integer, np.floating)):
            return obj.item()
        if isinstance(obj, txchain.ModeChannelId):
            return obj.label
        return obj

    return safe(cfg)


# ---------------------------------------------------------------------------
# Cell execution


def cell_seed(base_seed: int, group: int, wavelength_index: int) -> int:
    """Order-independent per-cell RNG seed: base xor a stable cell hash."""
    tag = f"cell:{group}:{wavelength_index}".encode()
    return (base_seed ^ zlib.crc32(tag)) & 0xFFFFFFFFFFFFFFFF


def _physical_inter_group(cfg: ScenarioConfig) -> np.ndarray:
    ss = cfg.sorter
    lam = cfg.tx.grid.center_wavelength_nm * 1e-9
    grid = sorter.make_grid(ss.grid_n, ss.grid_dx, lam)
    smf = ss.smf if ss.smf is not None else sorter.default_smf(ss.doe, lam)
    modes = [sorter.OamModeSpec(l, ss.ring_radius, ss.ring_width)
             for l in smf.port_orders]
    m4 = sorter.sorter_matrix(modes, ss.doe, smf=smf, grid=grid)
    return sorter.inter_group_coupling(m4, smf.port_orders,
                                       cfg.xt.inter_mg_xt_db)


def _run_cell(out_frames, cfg: ScenarioConfig, group: int, wi: int,
              walkoff_s: float, n_carriers: int):
    """Demodulate one (group, wavelength) cell with its own noise draw."""
    rng = np.random.default_rng(cell_seed(cfg.run.seed, group, wi))
    frames = out_frames
    if np.isfinite(cfg.imp.osnr_db):
        noisy = dict(frames.frames)
        for m in frames.config.modes:
            if m.group != group:
                continue
            fr = frames.frames[m]
            sig = sigkit.SampledSignal(fr.samples, fr.sample_rate)
            sig = sigkit.awgn_osnr(sig, cfg.imp.osnr_db, rng,
                                   signal_power=sig.power / n_carriers)
            noisy[m] = txchain.Frame(sig.samples, fr.sample_rate, m)
        frames = txchain.TxFrameSet(noisy, frames.reference_bits, frames.config)
    return rxdsp.demod_chain(
        frames, group=group, carrier_index=wi, cfg=cfg.dsp,
        group_delay_s=walkoff_s if group == 3 else 0.0,
        cd_ps_nm_total=cfg.fiber.cd_ps_nm_km * cfg.fiber.length_km,
    )


def _worker_count() -> int:
    env = os.environ.get("MDMSIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise BenchError(f"MDMSIM_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise BenchError("MDMSIM_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


def _psd_db(samples: np.ndarray, fs: float, nseg: int = 4096):
    from scipy import signal as sps_signal

    f, p = sps_signal.welch(samples, fs=fs, nperseg=nseg,
                            return_onesided=False, detrend=False)
    order = np.argsort(f)
    return f[order], 10.0 * np.log10(np.maximum(p[order], 1e-30))


# ---------------------------------------------------------------------------
# Scenario runner


def run_scenario(cfg: ScenarioConfig, out_dir=None, seed_override: int | None = None,
                 full: bool = False) -> tuple[dict, int]:
    """Execute a scenario, write its report files, return (report, exit_code)."""
    from . import __version__

    if seed_override is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=int(seed_override)))
    out = Path(out_dir if out_dir is not None else cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)

    wavelengths = cfg.run.wavelength_indices(cfg.tx.grid, full)
    groups = cfg.run.group_list()
    txcfg = replace(cfg.tx, carriers=wavelengths)

    rng_tx = np.random.default_rng(cfg.run.seed)
    fset = txchain.build_tx(txcfg, rng_tx)
    ch = chn.make_fiber(cfg.fiber, cfg.xt, cfg.imp, seed=cfg.run.seed)
    if cfg.sorter.mode == "physical":
        ch = ch.with_inter_group(_physical_inter_group(cfg))

    # linear channel + phase impairments once; OSNR noise drawn per cell
    out_frames = chn.propagate(
        fset, ch, rng=np.random.default_rng(cfg.run.seed + 1),
        noise=False, phase_impairments=True,
    )

    tmat_db = chn.realization_transfer_matrix(ch, fset)
    labels = [m.label for m in txcfg.modes]
    cap = txchain.capacity_report(cfg.tx, cfg.fiber.length_km)
    wl_nm = txcfg.grid.wavelengths_nm()
    n_car = len(txcfg.active_carriers())

    cells = [(g, wi) for g in groups for wi in wavelengths]
    results = {}
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = {
            (g, wi): pool.submit(_run_cell, out_frames, cfg, g, wi,
                                 cfg.fiber.walkoff_s, n_car)
            for g, wi in cells
        }
        for key, fut in futures.items():
            results[key] = fut.result()

    # ---- report assembly (single-threaded, deterministic order) ----
    ber_rows = []
    cell_reports = []
    all_pass = True
    for g, wi in cells:
        res = results[(g, wi)]
        cell_pass = res.worst_ber < FEC_THRESHOLD
        all_pass &= cell_pass
        chans = []
        for c in res.channels:
            ber_rows.append((
                c.mode.label, c.mode.l, c.mode.pol, g, wi,
                float(wl_nm[wi]), c.ber.ber, c.ber.errors, c.ber.nbits,
                c.q_db, c.evm, c.ber.ber < FEC_THRESHOLD,
            ))
            chans.append({
                "mode": c.mode.label,
                "ber": c.ber.ber,
                "errors": c.ber.errors,
                "nbits": c.ber.nbits,
                "q_db": c.q_db,
                "evm_percent": c.evm,
                "freq_offset_hz": c.freq_offset_hz,
                "pass": bool(c.ber.ber < FEC_THRESHOLD),
            })
        cell_reports.append({
            "group": g,
            "wavelength_index": wi,
            "wavelength_nm": float(wl_nm[wi]),
            "channels": chans,
            "pair_ber": {str(l): v for l, v in res.pair_ber.items()},
            "equalizer_reinits": res.equalizer.reinit_events,
            "timing_converged": res.timing_converged,
            "pass": bool(cell_pass),
        })

    report = {
        "schema_version": SCHEMA_VERSION,
        "software_version": __version__,
        "seed": cfg.run.seed,
        "fec_threshold": FEC_THRESHOLD,
        "capacity": {
            "gross_capacity_bps": cap.gross_capacity_bps,
            "net_capacity_bps": cap.net_capacity_bps,
            "se_bps_hz": cap.se_bps_hz,
            "se_distance_bps_hz_km": cap.se_distance_bps_hz_km,
        },
        "transfer_matrix_db": [[float(v) for v in row] for row in tmat_db],
        "channel_labels": labels,
        "cells": cell_reports,
        "all_pass": bool(all_pass),
        "config": config_echo(cfg),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    wavio.write_csv(out / "ber_table.csv",
                    ["mode", "l", "pol", "group", "wavelength_index",
                     "wavelength_nm", "ber", "errors", "nbits", "q_db",
                     "evm_percent", "pass"],
                    ber_rows)
    wavio.write_csv(out / "transfer_matrix.csv",
                    ["output"] + labels,
                    [[labels[i]] + [tmat_db[i, j] for j in range(len(labels))]
                     for i in range(len(labels))])

    fs = fset.sample_rate
    f_tx, p_tx = _psd_db(fset.as_matrix().mean(axis=0), fs)
    _, p_rx = _psd_db(out_frames.as_matrix().mean(axis=0), fs)
    wavio.write_csv(out / "spectra.csv",
                    ["freq_ghz", "tx_psd_db", "rx_psd_db"],
                    zip(f_tx / 1e9, p_tx, p_rx))

    for g, wi in cells:
        res = results[(g, wi)]
        for c in res.channels:
            name = f"constellation_{c.mode.label}_w{wi}"
            wavio.write_complex_csv(out / f"{name}.csv", c.constellation[:4096])
            plots.save_constellation(out / f"{name}.png", c.constellation,
                                     f"{c.mode.label} w{wi} "
                                     f"BER {c.ber.ber:.2e}")
        name = f"taps_g{g}_w{wi}"
        wavio.write_complex_csv(out / f"{name}.csv", res.equalizer.taps)
        plots.save_taps(out / f"{name}.png", res.equalizer.taps,
                        f"group {g}, wavelength {wi}")

    plots.save_transfer_matrix(out / "transfer_matrix.png", tmat_db, labels)
    plots.save_ber_bars(out / "ber_table.png", [
        {"mode_label": r[0] + f"/g{r[3]}", "wavelength_nm": r[5], "ber": r[6]}
        for r in ber_rows
    ])
    plots.save_spectrum(out / "spectra.png", f_tx / 1e9, p_tx,
                        "transmitted composite spectrum")

    return report, (0 if all_pass else 2)


# ---------------------------------------------------------------------------
# Parameter sweep


_SWEEPABLE_ROOTS = ("tx", "fiber", "xt", "imp", "dsp", "run")


def _resolve_param(cfg: ScenarioConfig, dotted: str):
    """Validate a dotted path; return (root_name, leaf_name)."""
    parts = dotted.split(".")
    if len(parts) != 2 or parts[0] not in _SWEEPABLE_ROOTS:
        valid = [f"{root}.{f.name}" for root in _SWEEPABLE_ROOTS
                 for f in dataclasses.fields(getattr(cfg, root))]
        raise BenchError(
            f"cannot resolve sweep parameter {dotted!r}; valid paths include: "
            f"{', '.join(sorted(valid))}"
        )
    root, leaf = parts
    section = getattr(cfg, root)
    names = {f.name for f in dataclasses.fields(section)}
    if leaf not in names:
        raise BenchError(
            f"{root!r} has no field {leaf!r}; valid fields: {sorted(names)}"
        )
    current = getattr(section, leaf)
    if not isinstance(current, (int, float)) or isinstance(current, bool):
        raise BenchError(f"sweep parameter {dotted!r} is not a numeric field")
    return root, leaf


def sweep(cfg: ScenarioConfig, parameter: str, values, out_dir=None,
          full: bool = False) -> tuple[list, int]:
    """Run the scenario once per parameter value; write sweep_table.csv."""
    values = list(values)
    if not values:
        raise BenchError("sweep needs at least one value")
    root, leaf = _resolve_param(cfg, parameter)
    current = getattr(getattr(cfg, root), leaf)
    out = Path(out_dir if out_dir is not None else cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    worst_exit = 0
    for value in values:
        cast = type(current)(value)
        sub = replace(cfg, **{root: replace(getattr(cfg, root), **{leaf: cast})})
        seed = cell_seed(cfg.run.seed, 0, zlib.crc32(
            f"sweep:{parameter}={wavio.format_number(cast)}".encode()))
        sub_out = out / f"sweep_{leaf}_{wavio.format_number(cast)}"
        report, code = run_scenario(sub, out_dir=sub_out, seed_override=seed,
                                    full=full)
        worst_exit = max(worst_exit, code)
        for cell in report["cells"]:
            for c in cell["channels"]:
                rows.append((parameter, cast, cell["group"],
                             cell["wavelength_nm"], c["ber"], c["pass"]))
    wavio.write_csv(out / "sweep_table.csv",
                    ["parameter", "value", "group", "wavelength", "ber", "pass"],
                    rows)
    return rows, worst_exit


# ---------------------------------------------------------------------------
# Standalone sorter run


def run_sorter(cfg: ScenarioConfig, out_dir=None) -> tuple[dict, int]:
    """Run the physical sorter pipeline alone; emit phase maps, spot
    images and the port coupling matrix."""
    ss = cfg.sorter
    lam = cfg.tx.grid.center_wavelength_nm * 1e-9
    grid = sorter.make_grid(ss.grid_n, ss.grid_dx, lam)
    smf = ss.smf if ss.smf is not None else sorter.default_smf(ss.doe, lam)
    out = Path(out_dir if out_dir is not None else cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)

    phi1, phi2 = sorter.doe_phase(ss.doe, grid)
    wavio.write_grid(out / "phase_unwrapper.bin", phi1, grid.dx, grid.dy)
    wavio.write_grid(out / "phase_corrector.bin", phi2, grid.dx, grid.dy)
    plots.save_phase_map(out / "phase_unwrapper.png", phi1, "unwrapper phase")
    plots.save_phase_map(out / "phase_corrector.png", phi2, "corrector phase")

    rows = []
    matrix_rows = []
    centers = smf.port_centers()
    for l in smf.port_orders:
        spec = sorter.OamModeSpec(l, ss.ring_radius, ss.ring_width)
        f = sorter.gen_ring_oam(grid, spec)
        f = sorter.unwrap_field(f, ss.doe)
        focal = sorter.focal_spots(f, ss.doe.focal_length, smf)
        plots.save_spots(out / f"spots_l{l:+d}.png", focal.intensity,
                         focal.axis, list(centers), f"l = {l:+d} focal spots")
        rows.append((l, focal.centroid))
        matrix_rows.append(focal.couplings)
    m4 = np.stack(matrix_rows, axis=1)  # [port, input mode]

    wavio.write_csv(out / "centroids.csv", ["l", "centroid_m"], rows)
    coup = []
    for pi, port_l in enumerate(smf.port_orders):
        for mi, mode_l in enumerate(smf.port_orders):
            v = m4[pi, mi]
            coup.append((port_l, mode_l, v.real, v.imag,
                         10.0 * np.log10(max(abs(v) ** 2, 1e-30))))
    wavio.write_csv(out / "coupling_matrix.csv",
                    ["port_l", "mode_l", "re", "im", "power_db"], coup)

    diag = np.abs(np.diag(m4)) ** 2
    off = np.abs(m4) ** 2 - np.diag(diag)
    summary = {
        "port_orders": list(smf.port_orders),
        "spot_pitch_m": smf.spot_pitch,
        "centroids_m": {str(l): c for l, c in rows},
        "diag_power_db": [10.0 * np.log10(max(d, 1e-30)) for d in diag],
        "worst_neighbor_db": float(10.0 * np.log10(max(off.max(), 1e-30))),
    }
    (out / "sorter_report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    return summary, 0
