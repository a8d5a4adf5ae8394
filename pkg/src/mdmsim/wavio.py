"""Binary and CSV I/O.

Shared little-endian binary header convention:

* waveforms   — magic ``MDMW``, version u32, n_channels u32, n_samples u64,
  sample_rate f64, then per-channel interleaved complex64 (channel-major);
* float grids — magic ``MDMG``, version u32, ny u32, nx u32, dx f64, dy f64,
  then row-major float32 values (phase maps, intensity images);
* channel realizations — magic ``MDMR``, version u32, a u32-length-prefixed
  JSON parameter blob, then the raw coupling arrays, so a drawn channel can
  be replayed across runs.

CSV output uses plain RFC-4180 fields with numbers printed at 17
significant digits so they round-trip exactly.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

WAVEFORM_MAGIC = b"MDMW"
GRID_MAGIC = b"MDMG"
REALIZATION_MAGIC = b"MDMR"
FORMAT_VERSION = 1


class WavioError(ValueError):
    """Malformed or mismatched binary payload."""


# ---------------------------------------------------------------------------
# Waveforms


def write_waveform(path, samples: np.ndarray, sample_rate: float) -> None:
    """Dump a (n_channels, n_samples) complex array."""
    samples = np.atleast_2d(np.asarray(samples))
    n_ch, n_s = samples.shape
    with open(path, "wb") as fh:
        fh.write(WAVEFORM_MAGIC)
        fh.write(struct.pack("<IIQd", FORMAT_VERSION, n_ch, n_s, sample_rate))
        fh.write(samples.astype(np.complex64).tobytes())


def read_waveform(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WAVEFORM_MAGIC:
            raise WavioError(f"bad waveform magic {magic!r}")
        version, n_ch, n_s, fs = struct.unpack("<IIQd", fh.read(24))
        if version != FORMAT_VERSION:
            raise WavioError(f"unsupported waveform version {version}")
        raw = fh.read()
        if len(raw) < n_ch * n_s * 8:
            raise WavioError("waveform payload truncated")
        data = np.frombuffer(raw, dtype=np.complex64, count=n_ch * n_s)
    return data.reshape(n_ch, n_s).astype(np.complex128), fs


# ---------------------------------------------------------------------------
# Float grids


def write_grid(path, values: np.ndarray, dx: float, dy: float) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise WavioError("grid payload must be 2-D")
    ny, nx = values.shape
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<IIIdd", FORMAT_VERSION, ny, nx, dx, dy))
        fh.write(values.tobytes())


def read_grid(path) -> tuple[np.ndarray, float, float]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRID_MAGIC:
            raise WavioError(f"bad grid magic {magic!r}")
        version, ny, nx, dx, dy = struct.unpack("<IIIdd", fh.read(28))
        if version != FORMAT_VERSION:
            raise WavioError(f"unsupported grid version {version}")
        raw = fh.read()
        if len(raw) < ny * nx * 4:
            raise WavioError("grid payload truncated")
        data = np.frombuffer(raw, dtype=np.float32, count=ny * nx)
    return data.reshape(ny, nx).astype(np.float64), dx, dy


# ---------------------------------------------------------------------------
# Channel realizations


def write_realization(path, ch) -> None:
    """Dump a ChannelRealization (parameters as JSON, arrays raw)."""
    from dataclasses import asdict

    params = {
        "fiber": asdict(ch.fiber),
        "xt": asdict(ch.xt),
        "imp": asdict(ch.imp),
        "seed": ch.seed,
        "frozen_identity": ch.frozen_identity,
        "n_sections": int(ch.section_unitaries.shape[0]),
    }
    # +/- inf OSNR is not valid JSON; encode as string
    if not np.isfinite(params["imp"]["osnr_db"]):
        params["imp"]["osnr_db"] = "inf"
    blob = json.dumps(params, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(REALIZATION_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(ch.section_unitaries.astype(np.complex128).tobytes())
        fh.write(ch.section_delays.astype(np.float64).tobytes())
        fh.write(ch.inter_group.astype(np.complex128).tobytes())


def read_realization(path):
    from .channel import (ChannelRealization, CrosstalkSpec, FiberSpec,
                          ImpairmentSpec)

    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != REALIZATION_MAGIC:
            raise WavioError(f"bad realization magic {magic!r}")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise WavioError(f"unsupported realization version {version}")
        params = json.loads(fh.read(blob_len).decode())
        if params["imp"]["osnr_db"] == "inf":
            params["imp"]["osnr_db"] = np.inf
        if isinstance(params["imp"].get("freq_offset_hz"), list):
            params["imp"]["freq_offset_hz"] = tuple(params["imp"]["freq_offset_hz"])
        # JSON turns tuples into lists; restore them so specs compare equal
        geo = params["fiber"].get("geometry")
        if isinstance(geo, dict):
            params["fiber"]["geometry"] = {
                k: tuple(v) if isinstance(v, list) else v
                for k, v in geo.items()}
        s = params["n_sections"]
        uni = np.frombuffer(fh.read(s * 2 * 4 * 4 * 16), dtype=np.complex128)
        dly = np.frombuffer(fh.read(s * 8 * 8), dtype=np.float64)
        ig = np.frombuffer(fh.read(8 * 8 * 16), dtype=np.complex128)
    return ChannelRealization(
        fiber=FiberSpec(**params["fiber"]),
        xt=CrosstalkSpec(**params["xt"]),
        imp=ImpairmentSpec(**params["imp"]),
        seed=params["seed"],
        section_unitaries=uni.reshape(s, 2, 4, 4).copy(),
        section_delays=dly.reshape(s, 8).copy(),
        inter_group=ig.reshape(8, 8).copy(),
        frozen_identity=params["frozen_identity"],
    )


# ---------------------------------------------------------------------------
# CSV


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _quote(field: str) -> str:
    if any(c in field for c in ',"\n\r'):
        return '"' + field.replace('"', '""') + '"'
    return field


def write_csv(path, header: list[str], rows) -> None:
    """RFC-4180 CSV with 17-significant-digit numeric fields."""
    buf = io.StringIO()
    buf.write(",".join(_quote(h) for h in header) + "\r\n")
    for row in rows:
        buf.write(",".join(_quote(format_number(v)) for v in row) + "\r\n")
    Path(path).write_text(buf.getvalue(), newline="")


def write_complex_csv(path, values: np.ndarray) -> None:
    """Index/re/im dump used for constellations and tap vectors."""
    values = np.asarray(values).ravel()
    rows = [(i, v.real, v.imag) for i, v in enumerate(values)]
    write_csv(path, ["index", "re", "im"], rows)
