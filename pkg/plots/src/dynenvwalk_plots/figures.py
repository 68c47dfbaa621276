"""Offline figures from dynenvwalk CSV artifacts.

Pure file-to-file transformations: every figure kind reads one CSV written
by the simulator CLI and renders a PNG or SVG (chosen by the output
suffix).  No statistics are computed beyond what is drawn.  Rendering is
deterministic; a metadata strip (see :func:`strip_metadata`) makes reruns
byte-identical.
"""

from __future__ import annotations

import csv
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dynenvwalk-plots"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGURE_KINDS = ("tau_tail_loglog", "qq_normal", "variance_decay",
                "drift_convergence", "delta_m_trend")


class RenderError(ValueError):
    """Bad figure inputs: unknown kind, missing columns, empty data."""


@dataclass
class FigureSpec:
    kind: str
    input_csv: Path
    output_path: Path
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; "
                              f"choose one of {FIGURE_KINDS}")
        self.input_csv = Path(self.input_csv)
        self.output_path = Path(self.output_path)


def read_columns(path: Path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise RenderError(f"{path}: no header row")
        cols: dict[str, list[str]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in reader.fieldnames:
                cols[name].append(row[name])
    return cols


def require_columns(cols: dict[str, list[str]], names: list[str],
                    path: Path) -> None:
    missing = [n for n in names if n not in cols]
    if missing:
        raise RenderError(f"{path}: missing columns {missing}")
    if not cols[names[0]]:
        raise RenderError(f"{path}: no data rows")


def _floats(cols: dict[str, list[str]], name: str) -> np.ndarray:
    return np.array([float(v) for v in cols[name]])


# ---------------------------------------------------------------------------
# Data preparation (pure, tested directly)
# ---------------------------------------------------------------------------

def tau_survival(tau1: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Empirical survival P(tau > t) on integer t plus the log-log LS slope."""
    tau1 = tau1.astype(int)
    tmax = int(tau1.max())
    ts = np.arange(1, tmax + 1)
    counts = np.bincount(tau1, minlength=tmax + 1)
    surv = (tau1.size - np.cumsum(counts)[1:]) / tau1.size
    keep = surv > 0
    ts, surv = ts[keep], surv[keep]
    if ts.size >= 2:
        slope = -np.polyfit(np.log(ts), np.log(surv), 1)[0]
    else:
        slope = math.nan
    return ts, surv, float(slope)


def qq_points(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normal QQ pairs: (theoretical quantile, ordered sample)."""
    n = values.size
    nd = NormalDist()
    theo = np.array([nd.inv_cdf((i - 0.5) / n) for i in range(1, n + 1)])
    return theo, np.sort(values)


def running_ratio(dtau: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Cumulative sum(dx)/sum(dtau) after each block."""
    return np.cumsum(dx) / np.cumsum(dtau)


def smoothed(values: np.ndarray, window: int = 2) -> np.ndarray:
    """Moving average with the given window (same spacing, shorter)."""
    if values.size < window:
        return values.copy()
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


# ---------------------------------------------------------------------------
# Figure builders
# ---------------------------------------------------------------------------

def _finish(fig, ax, spec: FigureSpec, default_title: str,
            default_xlabel: str, default_ylabel: str) -> Path:
    ax.set_title(spec.title or default_title)
    ax.set_xlabel(spec.xlabel or default_xlabel)
    ax.set_ylabel(spec.ylabel or default_ylabel)
    spec.output_path.parent.mkdir(parents=True, exist_ok=True)
    suffix = spec.output_path.suffix.lower()
    if suffix not in (".png", ".svg"):
        raise RenderError(f"unsupported output format {suffix!r}; use .png or .svg")
    kwargs = {"metadata": {"Date": None}} if suffix == ".svg" else {}
    fig.savefig(spec.output_path, dpi=120, **kwargs)
    plt.close(fig)
    return spec.output_path


def _fig_tau_tail(spec: FigureSpec) -> Path:
    cols = read_columns(spec.input_csv)
    require_columns(cols, ["tau1"], spec.input_csv)
    ts, surv, slope = tau_survival(_floats(cols, "tau1"))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(ts, surv, "o", ms=4, label="empirical survival")
    if ts.size >= 2 and np.isfinite(slope):
        anchor = surv[0] * (ts / ts[0]) ** (-slope)
        ax.loglog(ts, anchor, "--", label=f"fit slope {slope:.2f}")
    ax.legend()
    return _finish(fig, ax, spec, "Regeneration-time tail", "t", "P(tau > t)")


def _fig_qq_normal(spec: FigureSpec) -> Path:
    cols = read_columns(spec.input_csv)
    require_columns(cols, ["direction", "replica", "value"], spec.input_csv)
    values = _floats(cols, "value")
    directions = np.array(cols["direction"])
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    lo, hi = values.min(), values.max()
    for direction in sorted(set(directions)):
        theo, emp = qq_points(values[directions == direction])
        ax.plot(theo, emp, ".", ms=3, label=direction)
        lo, hi = min(lo, theo.min()), max(hi, theo.max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=1, label="identity")
    ax.legend()
    return _finish(fig, ax, spec, "Normal QQ of standardized endpoints",
                   "normal quantile", "sample quantile")


def _fig_variance_decay(spec: FigureSpec) -> Path:
    cols = read_columns(spec.input_csv)
    require_columns(cols, ["m", "n", "var_raw", "var_corrected", "se"],
                    spec.input_csv)
    n = _floats(cols, "n")
    raw = _floats(cols, "var_raw")
    corrected = _floats(cols, "var_corrected")
    se = _floats(cols, "se")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.errorbar(n, corrected, yerr=se, fmt="o-", capsize=3, label="corrected")
    ax.plot(n, raw, "s:", alpha=0.6, label="raw")
    ax.axhline(corrected[0], color="grey", ls="--", lw=1, label="flat guide")
    ax.set_xscale("log", base=2)
    ax.legend()
    return _finish(fig, ax, spec, "Across-environment variance by scale",
                   "n", "variance of quenched mean")


def _fig_drift_convergence(spec: FigureSpec) -> Path:
    cols = read_columns(spec.input_csv)
    require_columns(cols, ["replica", "block_index", "dtau"], spec.input_csv)
    dx_cols = sorted(c for c in cols if c.startswith("dx_"))
    if not dx_cols:
        raise RenderError(f"{spec.input_csv}: missing columns ['dx_1', ...]")
    dtau = _floats(cols, "dtau")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    counts = np.arange(1, dtau.size + 1)
    for name in dx_cols:
        running = running_ratio(dtau, _floats(cols, name))
        ax.plot(counts, running, lw=1, label=f"v[{name[3:]}]")
        ax.axhline(running[-1], color="grey", ls=":", lw=0.8)
    ax.legend()
    return _finish(fig, ax, spec, "Running renewal velocity",
                   "blocks", "cumulative sum(dx)/sum(dtau)")


def _fig_delta_m_trend(spec: FigureSpec) -> Path:
    cols = read_columns(spec.input_csv)
    require_columns(cols, ["m", "n", "delta", "se"], spec.input_csv)
    m = _floats(cols, "m")
    delta = _floats(cols, "delta")
    se = _floats(cols, "se")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.errorbar(m, delta, yerr=se, fmt="o-", capsize=3,
                label="same vs independent gap")
    ax.axhline(0.0, color="grey", ls="--", lw=1)
    ax.legend()
    return _finish(fig, ax, spec, "Walker-pair covariance gap by scale",
                   "m (n = b^m)", "delta")


_BUILDERS = {
    "tau_tail_loglog": _fig_tau_tail,
    "qq_normal": _fig_qq_normal,
    "variance_decay": _fig_variance_decay,
    "drift_convergence": _fig_drift_convergence,
    "delta_m_trend": _fig_delta_m_trend,
}


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the written path."""
    if not spec.input_csv.exists():
        raise RenderError(f"input CSV not found: {spec.input_csv}")
    return _BUILDERS[spec.kind](spec)


# ---------------------------------------------------------------------------
# Metadata stripping (byte-stability checks)
# ---------------------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def strip_metadata(path: Path) -> bytes:
    """Image bytes with volatile metadata removed.

    PNG: ancillary chunks (lowercase first type letter: tEXt, zTXt, iTXt,
    tIME, ...) are dropped, keeping the critical image data.  SVG: the
    ``<metadata>`` element (creation date etc.) is removed.
    """
    data = Path(path).read_bytes()
    if data.startswith(_PNG_SIGNATURE):
        out = bytearray(_PNG_SIGNATURE)
        pos = len(_PNG_SIGNATURE)
        while pos < len(data):
            length = struct.unpack(">I", data[pos:pos + 4])[0]
            ctype = data[pos + 4:pos + 8]
            chunk = data[pos:pos + 12 + length]
            if ctype[:1].isupper():
                out += chunk
            pos += 12 + length
        return bytes(out)
    return re.sub(rb"<metadata>.*?</metadata>", b"", data, flags=re.S)
