"""Evaluation metrics: relative errors, block curves, spectrograms, radial spatial spectra."""

from dataclasses import asdict, dataclass, field
import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParameterError, ShapeError, UndefinedMetricError
from .solver import Trajectory

CHANNELS = {"displacement": 0, "velocity": 1}
DEFAULT_WINDOW = 512
DEFAULT_HOP = 128


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    return pred, truth


def _rescaled(pred, truth):
    # power-of-two rescale by the truth peak: exact in binary, and keeps
    # squares of very small or very large fields from under/overflowing
    peak = float(np.max(np.abs(truth))) if truth.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return pred, truth
    _, e = math.frexp(peak)
    if -500 < e < 500:
        return pred, truth
    return np.ldexp(pred, -e), np.ldexp(truth, -e)


def relative_mse(pred, truth):
    """||pred - truth||_2^2 / ||truth||_2^2 over every entry."""
    pred, truth = _rescaled(*_pair(pred, truth))
    denom = np.sum(truth**2)
    if denom == 0:
        raise UndefinedMetricError("relative MSE is undefined for an all-zero ground truth")
    with np.errstate(over="ignore"):  # a ratio beyond float range is reported as inf
        return float(np.sum((pred - truth) ** 2) / denom)


def relative_mae(pred, truth):
    """||pred - truth||_1 / ||truth||_1 over every entry."""
    pred, truth = _pair(pred, truth)
    denom = np.sum(np.abs(truth))
    if denom == 0:
        raise UndefinedMetricError("relative MAE is undefined for an all-zero ground truth")
    return float(np.sum(np.abs(pred - truth)) / denom)


def select_channels(data, channel):
    """``channel`` is 'both', 'displacement' or 'velocity'; returns a view."""
    if channel == "both":
        return data
    return data[..., CHANNELS[channel]]


@dataclass(frozen=True)
class ProbeSpec:
    role: str
    iy: int
    ix: int

    @classmethod
    def center(cls, params):
        return cls("center", int(round(params.Ly / 2 / params.dy)), int(round(params.Lx / 2 / params.dx)))

    @classmethod
    def edge(cls, params):
        # one cell in from the midpoint of the x = 0 edge
        return cls("edge", int(round(params.Ly / 2 / params.dy)), 1)

    @classmethod
    def named(cls, role, params):
        if role == "center":
            return cls.center(params)
        if role == "edge":
            return cls.edge(params)
        raise ParameterError(f"unknown probe role {role!r} (expected 'center' or 'edge')")

    @property
    def index(self):
        return (self.iy, self.ix)


# --- spectral tools -----------------------------------------------------------


def hann(n):
    """Periodic Hann window (COLA at hop n/4 and n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    times: np.ndarray  # frame centres (s)
    freqs: np.ndarray  # Hz
    magnitude: np.ndarray  # (n_frames, n_freqs)
    window_len: int
    hop: int

    def peak_frequency(self):
        power = np.sum(self.magnitude**2, axis=0)
        return float(self.freqs[np.argmax(power)])


def stft_magnitude(signal, fs, window_len=DEFAULT_WINDOW, hop=DEFAULT_HOP):
    signal = np.asarray(signal, dtype=np.float64)
    if window_len < 2 or hop < 1:
        raise ParameterError(f"degenerate STFT window (window_len={window_len}, hop={hop})")
    if window_len > signal.size:
        raise ParameterError(f"window_len {window_len} exceeds signal length {signal.size}")
    frames = np.lib.stride_tricks.sliding_window_view(signal, window_len)[::hop]
    spec = np.abs(np.fft.rfft(frames * hann(window_len), axis=-1))
    times = (np.arange(frames.shape[0]) * hop + window_len / 2) / fs
    freqs = np.fft.rfftfreq(window_len, 1.0 / fs)
    return Spectrogram(times, freqs, spec, window_len, hop)


def probe_signal(traj, probe, channel="displacement"):
    iy, ix = probe.index if isinstance(probe, ProbeSpec) else probe
    Ny, Nx = traj.grid_shape
    if not (0 <= iy < Ny and 0 <= ix < Nx):
        raise ParameterError(f"probe ({iy}, {ix}) outside the {Ny}x{Nx} grid")
    return np.asarray(traj.data[:, iy, ix, CHANNELS[channel]], dtype=np.float64)


def spectrogram(traj, probe, channel="displacement", window_len=DEFAULT_WINDOW, hop=DEFAULT_HOP):
    return stft_magnitude(probe_signal(traj, probe, channel), traj.fs, window_len, hop)


def peak_frequency(signal, fs, band=(0.0, None), n_fft=None):
    """Frequency of the largest Hann-windowed spectral peak inside ``band``.

    Zero-pads to ``n_fft`` (default: 16x the signal length rounded up to a
    power of two) and refines the peak bin with parabolic interpolation of
    the log magnitude.
    """
    x = np.asarray(signal, dtype=np.float64)
    if n_fft is None:
        n_fft = 1 << int(math.ceil(math.log2(16 * x.size)))
    spec = np.abs(np.fft.rfft(x * hann(x.size), n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    lo, hi = band
    mask = freqs >= lo
    if hi is not None:
        mask &= freqs <= hi
    idx = np.flatnonzero(mask)
    if idx.size == 0 or not np.any(spec[idx] > 0):
        raise ParameterError(f"no spectral energy in band {band}")
    k = idx[np.argmax(spec[idx])]
    if 0 < k < spec.size - 1:
        a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    return float((k + delta) * fs / n_fft)


def radial_spatial_power_spectrum(traj, frames=4000, channel="displacement", Lx=None, Ly=None, bin_width=None):
    """Time-averaged spatial power binned by radial wavenumber (cycles/m).

    Per frame the 2-D DFT power |F|^2 / (Nx Ny) is accumulated into bins of
    width ``1 / max(Lx, Ly)`` centred on multiples of the width, then the
    bins are averaged over the first ``frames`` frames. Bin sums equal the
    field energy by Parseval.
    """
    data = traj.data if isinstance(traj, Trajectory) else np.asarray(traj)
    n = min(frames, data.shape[0]) if frames is not None else data.shape[0]
    T, Ny, Nx = data.shape[:3]
    if frames is not None and frames > T:
        raise ParameterError(f"requested {frames} frames from a {T}-frame trajectory")
    if Lx is None or Ly is None:
        p = traj.meta.get("params") if isinstance(traj, Trajectory) else None
        if not p:
            raise ParameterError("plate dimensions unavailable; pass Lx and Ly")
        Lx, Ly = p["Lx"], p["Ly"]
    dx = Lx / (Nx - 1)
    dy = Ly / (Ny - 1)
    width = bin_width or 1.0 / max(Lx, Ly)
    kx = np.fft.fftfreq(Nx, dx)
    ky = np.fft.fftfreq(Ny, dy)
    K = np.hypot(*np.meshgrid(kx, ky))
    bins = np.rint(K / width).astype(int).ravel()
    nbins = bins.max() + 1
    field_ = np.asarray(select_channels(data[:n], channel), dtype=np.float64)
    power = np.abs(np.fft.fft2(field_, axes=(-2, -1))) ** 2 / (Nx * Ny)
    mean_power = power.mean(axis=0).ravel()
    binned = np.bincount(bins, weights=mean_power, minlength=nbins)
    return np.arange(nbins) * width, binned


def energy_fraction_above(centers, power, k_cut):
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[centers > k_cut].sum() / total)


# --- evaluation protocols ---------------------------------------------------


@dataclass
class MetricReport:
    model_id: str
    block_len: int = None
    task: str = "single_block"
    seeds: list = field(default_factory=list)
    rel_mse: float = None
    rel_mae: float = None
    rel_mse_std: float = None  # across runs; None for a single run
    rel_mae_std: float = None
    rel_mse_block_std: float = None  # across evaluation blocks of one run
    rel_mae_block_std: float = None
    n_blocks: int = 0
    per_trajectory: dict = field(default_factory=dict)
    blockwise: dict = None  # {"t_start_s": [...], "rel_mae": [...], "rel_mae_std": [...]}
    spectrograms: dict = field(default_factory=dict)  # label -> Spectrogram
    radial: dict = field(default_factory=dict)  # label -> (centers, power)
    meta: dict = field(default_factory=dict)

    def summary(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("spectrograms", "radial")}
        d["spectrograms"] = {
            label: {"window_len": s.window_len, "hop": s.hop, "shape": list(s.magnitude.shape),
                    "peak_hz": s.peak_frequency()}
            for label, s in self.spectrograms.items()
        }
        d["radial"] = {
            label: {"bins": len(c), "fraction_above_50_cycles_per_m": energy_fraction_above(c, p, 50.0)}
            for label, (c, p) in self.radial.items()
        }
        return d


def evaluate_single_block(predictor, test_set, block_len, stride=100, model_id="model", seeds=None,
                          channel="both"):
    """Single-block task: from every ``stride``-th frame predict ``block_len`` frames.

    Block start indices are 0, stride, 2*stride, ... while the whole block
    fits in the trajectory. Report values are means over all blocks.
    """
    fn = predictor.predict if hasattr(predictor, "predict") else predictor
    mses, maes = [], []
    per_traj = {}
    for i, traj in enumerate(test_set):
        data = traj.data
        T = data.shape[0]
        starts = range(0, T - block_len, stride)
        if len(starts) == 0:
            raise ConfigurationError(f"trajectory of {T} frames is shorter than one block of {block_len} + 1")
        tm, ta = [], []
        for s in starts:
            pred = np.asarray(fn(np.asarray(data[s], dtype=np.float64), block_len))
            truth = np.asarray(data[s + 1 : s + 1 + block_len], dtype=np.float64)
            tm.append(relative_mse(select_channels(pred, channel), select_channels(truth, channel)))
            ta.append(relative_mae(select_channels(pred, channel), select_channels(truth, channel)))
        tid = traj.meta.get("trajectory_id", i)
        per_traj[str(tid)] = {"rel_mse": float(np.mean(tm)), "rel_mae": float(np.mean(ta)), "n_blocks": len(tm)}
        mses.extend(tm)
        maes.extend(ta)
    if not mses:
        raise ConfigurationError("empty test set")
    return MetricReport(
        model_id=model_id,
        block_len=int(block_len),
        task="single_block",
        seeds=list(seeds or []),
        rel_mse=float(np.mean(mses)),
        rel_mae=float(np.mean(maes)),
        rel_mse_block_std=float(np.std(mses)),
        rel_mae_block_std=float(np.std(maes)),
        n_blocks=len(mses),
        per_trajectory=per_traj,
        meta={"stride": stride, "channel": channel},
    )


def blockwise_mae(pred, truth, block_len, fs=16000.0, first_frame=1, channel="both"):
    """Relative MAE of consecutive ``block_len`` blocks; returns ``(t_start_s, values)``.

    ``first_frame`` is the frame index (relative to the initial condition) of
    the first compared frame; trailing frames that do not fill a block are
    dropped.
    """
    p = pred.data if isinstance(pred, Trajectory) else np.asarray(pred)
    t = truth.data if isinstance(truth, Trajectory) else np.asarray(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and truth {t.shape} differ")
    n_blocks = p.shape[0] // block_len
    if n_blocks < 1:
        raise ConfigurationError(f"trajectory of {p.shape[0]} frames is shorter than one block of {block_len}")
    values = np.array([
        relative_mae(select_channels(p[i * block_len:(i + 1) * block_len], channel),
                     select_channels(t[i * block_len:(i + 1) * block_len], channel))
        for i in range(n_blocks)
    ])
    t_start = (first_frame + np.arange(n_blocks) * block_len) / fs
    return t_start, values


def combine_runs(reports):
    """Merge reports of the same model/task/block length across seeds (mean, population std)."""
    if not reports:
        raise ConfigurationError("no reports to combine")
    first = reports[0]
    out = MetricReport(model_id=first.model_id, block_len=first.block_len, task=first.task)
    out.seeds = [s for r in reports for s in (r.seeds or [])]
    mse = np.array([r.rel_mse for r in reports])
    mae = np.array([r.rel_mae for r in reports])
    out.rel_mse, out.rel_mae = float(mse.mean()), float(mae.mean())
    if len(reports) >= 2:
        out.rel_mse_std, out.rel_mae_std = float(mse.std()), float(mae.std())
    out.n_blocks = sum(r.n_blocks for r in reports)
    if all(r.blockwise for r in reports):
        vals = np.array([r.blockwise["rel_mae"] for r in reports])
        out.blockwise = {"t_start_s": first.blockwise["t_start_s"], "rel_mae": vals.mean(axis=0).tolist()}
        if len(reports) >= 2:
            out.blockwise["rel_mae_std"] = vals.std(axis=0).tolist()
    out.spectrograms = dict(first.spectrograms)
    out.radial = dict(first.radial)
    out.meta = {**first.meta, "runs": len(reports)}
    return out


# --- report files -------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _slug(s):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(s))


def emit_report(reports, out_dir, plots=False):
    """Write summary.json, table1.csv and per-series CSVs; returns the written paths."""
    if isinstance(reports, MetricReport):
        reports = [reports]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps([r.summary() for r in reports], sort_keys=True, indent=1) + "\n")
    written.append(summary_path)

    table = out_dir / "table1.csv"
    rows = sorted(
        (r for r in reports if r.rel_mse is not None), key=lambda r: (r.model_id, r.task, r.block_len or 0)
    )
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "task", "steps", "rel_mse", "rel_mse_std", "rel_mae", "rel_mae_std"])
        for r in rows:
            w.writerow([r.model_id, r.task, r.block_len, _fmt(r.rel_mse), _fmt(r.rel_mse_std),
                        _fmt(r.rel_mae), _fmt(r.rel_mae_std)])
    written.append(table)

    for r in reports:
        stem = f"{_slug(r.model_id)}_L{r.block_len}"
        if r.blockwise:
            path = out_dir / f"blockwise_{stem}.csv"
            std = r.blockwise.get("rel_mae_std")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t_start_s", "rel_mae"] + (["rel_mae_std"] if std else []))
                for i, (t, v) in enumerate(zip(r.blockwise["t_start_s"], r.blockwise["rel_mae"])):
                    w.writerow([_fmt(t), _fmt(v)] + ([_fmt(std[i])] if std else []))
            written.append(path)
        for label, (centers, power) in sorted(r.radial.items()):
            path = out_dir / f"radial_{stem}_{_slug(label)}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k_cycles_per_m", "power"])
                for c, p in zip(centers, power):
                    w.writerow([_fmt(c), _fmt(p)])
            written.append(path)
        for label, spec in sorted(r.spectrograms.items()):
            path = out_dir / f"spectrogram_{stem}_{_slug(label)}.csv"
            write_spectrogram_csv(spec, path)
            written.append(path)
    if plots:
        written.extend(_render_plots(reports, out_dir))
    return written


def write_spectrogram_csv(spec, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "f_hz", "magnitude"])
        for i, t in enumerate(spec.times):
            for j, f in enumerate(spec.freqs):
                w.writerow([_fmt(t), _fmt(f), _fmt(spec.magnitude[i, j])])


def _render_plots(reports, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for r in reports:
        stem = f"{_slug(r.model_id)}_L{r.block_len}"
        if r.blockwise:
            fig, ax = plt.subplots(figsize=(6, 3))
            ax.plot(r.blockwise["t_start_s"], r.blockwise["rel_mae"])
            ax.set_xlabel("block start (s)")
            ax.set_ylabel("relative MAE")
            fig.tight_layout()
            path = out_dir / f"blockwise_{stem}.png"
            fig.savefig(path, metadata={"Software": None})
            plt.close(fig)
            paths.append(path)
        for label, (centers, power) in sorted(r.radial.items()):
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.semilogy(centers, np.maximum(power, 1e-300))
            ax.set_xlabel("wavenumber (cycles/m)")
            ax.set_ylabel("power")
            fig.tight_layout()
            path = out_dir / f"radial_{stem}_{_slug(label)}.png"
            fig.savefig(path, metadata={"Software": None})
            plt.close(fig)
            paths.append(path)
    return paths
