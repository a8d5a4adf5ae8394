"""Report figures rendered next to the CSV outputs.

Every plot has a CSV twin written by the bench module; the figures are a
convenience rendering of the same data (transfer-matrix heat map, BER
bars against the FEC threshold, recovered constellations, converged tap
magnitudes, composite spectra, sorter phase maps and focal spots).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FEC_THRESHOLD = 2.4e-2


def save_transfer_matrix(path, tmat_db: np.ndarray, labels: list[str]) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 5.6))
    im = ax.imshow(tmat_db, cmap="viridis", vmin=-40, vmax=0)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("input channel")
    ax.set_ylabel("output channel")
    for i in range(tmat_db.shape[0]):
        for j in range(tmat_db.shape[1]):
            ax.text(j, i, f"{tmat_db[i, j]:.0f}", ha="center", va="center",
                    color="white", fontsize=7)
    fig.colorbar(im, ax=ax, label="power (dB)")
    ax.set_title("channel power transfer matrix")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_ber_bars(path, cells: list[dict]) -> None:
    """cells: dicts with mode_label, wavelength_nm, ber."""
    fig, ax = plt.subplots(figsize=(max(6.4, 0.22 * len(cells)), 4.2))
    xs = np.arange(len(cells))
    bers = np.array([max(c["ber"], 1e-6) for c in cells])
    colors = ["tab:blue" if c["ber"] < FEC_THRESHOLD else "tab:red"
              for c in cells]
    ax.bar(xs, bers, color=colors)
    ax.axhline(FEC_THRESHOLD, color="k", ls="--", lw=1,
               label="2.4e-2 FEC threshold")
    ax.set_yscale("log")
    ax.set_ylim(1e-6, 0.5)
    ax.set_xticks(xs, [f"{c['mode_label']}@{c['wavelength_nm']:.2f}"
                       for c in cells], rotation=90, fontsize=6)
    ax.set_ylabel("BER")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_constellation(path, symbols: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    s = symbols[:4096]
    ax.plot(s.real, s.imag, ".", ms=1.5, alpha=0.4)
    ax.set_xlim(-2, 2)
    ax.set_ylim(-2, 2)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("I")
    ax.set_ylabel("Q")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_taps(path, taps: np.ndarray, title: str) -> None:
    """|w_ij(k)| of the 4x4 bank, one panel per output."""
    n_out, n_in, _ = taps.shape
    fig, axes = plt.subplots(1, n_out, figsize=(3.0 * n_out, 2.8),
                             sharey=True)
    for i, ax in enumerate(np.atleast_1d(axes)):
        for j in range(n_in):
            ax.plot(np.abs(taps[i, j]), lw=0.9, label=f"in {j}")
        ax.set_title(f"output {i}", fontsize=9)
        ax.set_xlabel("tap")
    np.atleast_1d(axes)[0].set_ylabel("|w|")
    np.atleast_1d(axes)[0].legend(fontsize=7)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_spectrum(path, freqs_ghz: np.ndarray, psd_db: np.ndarray,
                  title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(freqs_ghz, psd_db, lw=0.7)
    ax.set_xlabel("frequency offset (GHz)")
    ax.set_ylabel("PSD (dB)")
    ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_phase_map(path, phase: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(phase, cmap="twilight", vmin=0, vmax=2 * np.pi)
    fig.colorbar(im, ax=ax, label="phase (rad)")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_spots(path, intensity: np.ndarray, axis_m: np.ndarray,
               centers_m: list[float], title: str) -> None:
    """Focal-plane intensity marginal along the sort axis with port marks."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    marg = intensity.sum(axis=1)
    ax.plot(axis_m * 1e6, marg / marg.max(), lw=0.9)
    for c in centers_m:
        ax.axvline(c * 1e6, color="tab:red", ls=":", lw=0.8)
    span = 1.6 * max(abs(c) for c in centers_m) if centers_m else None
    if span:
        ax.set_xlim(-span * 1e6, span * 1e6)
    ax.set_xlabel("focal-plane position (um)")
    ax.set_ylabel("normalized intensity")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
