"""Dataset generation: random strikes, batch simulation, normalisation, WAV export."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import logging
import math
import os
from pathlib import Path
import warnings
import wave

import numpy as np

from .errors import ConfigurationError, FormatError, InstabilityError, ParameterError
from .fileformat import read_trajectory, write_trajectory
from .plate import FieldSnapshot, PlateParams, build_basis
from .solver import DEFAULT_OVERSAMPLE, Trajectory, simulate

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class StrikeConfig:
    vmax_range: tuple = (5.0, 25.0)
    sigma_range: tuple = (0.02, 0.1)
    center_margin: float = 0.05
    seed: int = 0

    def validate(self, params):
        lo, hi = self.vmax_range
        if not 0 < lo <= hi:
            raise ParameterError(f"vmax_range must satisfy 0 < lo <= hi, got {self.vmax_range}")
        lo, hi = self.sigma_range
        if not 0 < lo <= hi:
            raise ParameterError(f"sigma_range must satisfy 0 < lo <= hi, got {self.sigma_range}")
        if not 0 <= self.center_margin < min(params.Lx, params.Ly) / 2:
            raise ParameterError(f"center_margin {self.center_margin} leaves no interior on the plate")

    def to_dict(self):
        d = asdict(self)
        d["vmax_range"] = list(self.vmax_range)
        d["sigma_range"] = list(self.sigma_range)
        return d


def trajectory_rng(master_seed, index):
    """Independent generator for trajectory ``index`` of a dataset."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(index),)))


def gaussian_strike(params, vmax, sigma, x0, y0):
    x, y = params.coords()
    X, Y = np.meshgrid(x, y)
    v = vmax * np.exp(-((X - x0) ** 2 + (Y - y0) ** 2) / (2.0 * sigma**2))
    v[[0, -1], :] = 0.0
    v[:, [0, -1]] = 0.0
    return FieldSnapshot(np.zeros(params.grid_shape), v)


def sample_strike(rng, strike, params):
    """Draw ``(vmax, sigma, x0, y0)`` for one strike."""
    strike.validate(params)
    vmax = rng.uniform(*strike.vmax_range)
    sigma = rng.uniform(*strike.sigma_range)
    mg = strike.center_margin
    x0 = rng.uniform(mg, params.Lx - mg)
    y0 = rng.uniform(mg, params.Ly - mg)
    return float(vmax), float(sigma), float(x0), float(y0)


def sample_initial_condition(rng, strike, params):
    vmax, sigma, x0, y0 = sample_strike(rng, strike, params)
    return gaussian_strike(params, vmax, sigma, x0, y0)


def split_for_index(index, count):
    """80/10/10 split assigned by trajectory index (rounded for other counts)."""
    n_train = int(round(0.8 * count))
    n_val = int(round(0.1 * count))
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "test"


@dataclass(frozen=True)
class NormStats:
    """Per-channel scale factors; normalised = physical / scale."""

    displacement: float
    velocity: float
    source: str = "train"
    n_values: int = 0

    def __post_init__(self):
        if not (self.displacement > 0 and self.velocity > 0):
            raise ConfigurationError(f"normalisation scales must be positive, got {self.scales}")

    @property
    def scales(self):
        return np.array([self.displacement, self.velocity])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class _Moments:
    """Streaming per-channel count/mean/M2 (Chan et al. pairwise combination)."""

    def __init__(self, n=0, mean=None, m2=None):
        self.n = n
        self.mean = np.zeros(2) if mean is None else np.asarray(mean, dtype=np.float64)
        self.m2 = np.zeros(2) if m2 is None else np.asarray(m2, dtype=np.float64)

    @classmethod
    def of(cls, data):
        x = np.asarray(data, dtype=np.float64).reshape(-1, 2)
        mean = x.mean(axis=0)
        return cls(x.shape[0], mean, ((x - mean) ** 2).sum(axis=0))

    def merge(self, other):
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta**2 * self.n * other.n / n
        return _Moments(n, mean, m2)

    def std(self):
        return np.sqrt(self.m2 / self.n)


@dataclass
class DatasetManifest:
    root: Path
    files: list
    normalization: NormStats
    master_seed: int
    config: dict = field(default_factory=dict)
    config_hash: str = None
    fs: float = 16000.0
    frames: int = 0

    def entries(self, split=None):
        return [f for f in self.files if split is None or f["split"] == split]

    def paths(self, split=None):
        return [self.root / f["path"] for f in self.entries(split)]

    def entry_for(self, trajectory_id):
        for f in self.files:
            if f["id"] == trajectory_id:
                return f
        raise KeyError(trajectory_id)

    def to_dict(self):
        counts = {s: len(self.entries(s)) for s in SPLITS}
        return {
            "format": "plateforge-manifest",
            "version": 1,
            "master_seed": self.master_seed,
            "fs": self.fs,
            "frames": self.frames,
            "splits": counts,
            "files": self.files,
            "normalization": self.normalization.to_dict() if self.normalization else None,
            "config": self.config,
            "config_hash": self.config_hash,
        }

    def write(self):
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        return path

    @classmethod
    def load(cls, root):
        root = Path(root)
        path = root / MANIFEST_NAME if root.is_dir() else root
        d = json.loads(path.read_text())
        if d.get("format") != "plateforge-manifest":
            raise FormatError(f"{path} is not a dataset manifest")
        norm = d.get("normalization")
        return cls(
            root=path.parent,
            files=d["files"],
            normalization=NormStats.from_dict(norm) if norm else None,
            master_seed=d["master_seed"],
            config=d.get("config", {}),
            config_hash=d.get("config_hash"),
            fs=d.get("fs", 16000.0),
            frames=d.get("frames", 0),
        )


def _generate_one(job):
    (index, count, params_d, strike_d, frames, oversample, Mx, My, out_dir, dtype, master_seed, extra_meta) = job
    params = PlateParams.from_dict(params_d)
    strike = StrikeConfig(**{**strike_d, "vmax_range": tuple(strike_d["vmax_range"]),
                             "sigma_range": tuple(strike_d["sigma_range"])})
    basis = build_basis(params, Mx, My)
    rng = trajectory_rng(master_seed, index)
    vmax, sigma, x0, y0 = sample_strike(rng, strike, params)
    ic = gaussian_strike(params, vmax, sigma, x0, y0)
    split = split_for_index(index, count)
    name = f"traj_{index:04d}.plt"
    entry = {"id": index, "path": name, "split": split, "seed": master_seed,
             "strike": {"vmax": vmax, "sigma": sigma, "x0": x0, "y0": y0}}
    try:
        traj = simulate(params, basis, ic, frames, oversample, keep_modal=False)
    except InstabilityError as exc:
        entry.update(status="failed", error=str(exc), step=exc.step)
        return entry, None
    traj.meta.update(extra_meta)
    traj.meta.update(
        kind="ground_truth", trajectory_id=index, split=split, seed=master_seed,
        strike=entry["strike"], strike_config=strike.to_dict(),
    )
    entry["sha256"] = write_trajectory(traj, Path(out_dir) / name, dtype=dtype)
    entry["status"] = "ok"
    stored = traj.data.astype(np.float32) if dtype == "f32" else traj.data
    moments = _Moments.of(stored)
    return entry, (moments.n, moments.mean.tolist(), moments.m2.tolist())


def generate_dataset(params, strike, out_dir, count=100, duration=1.0, oversample=DEFAULT_OVERSAMPLE,
                     Mx=15, My=15, dtype="f32", jobs=1, config=None, config_hash=None):
    """Simulate ``count`` random strikes and write them plus ``manifest.json`` to ``out_dir``.

    Trajectory ``i`` draws from its own generator derived from
    ``(strike.seed, i)``, so the result is independent of ``jobs``.
    """
    strike.validate(params)
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    frames = int(round(duration * params.fs))
    extra = {"config_hash": config_hash} if config_hash else {}
    jobs_list = [
        (i, count, params.to_dict(), strike.to_dict(), frames, oversample, Mx, My, str(out_dir), dtype,
         int(strike.seed), extra)
        for i in range(count)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_one, jobs_list))
    else:
        results = [_generate_one(j) for j in jobs_list]

    files = []
    train = _Moments()
    failed = []
    for entry, moments in results:
        files.append(entry)
        if entry["status"] != "ok":
            failed.append(entry)
            log.warning("trajectory %d failed: %s", entry["id"], entry["error"])
        elif entry["split"] == "train":
            train = train.merge(_Moments(moments[0], moments[1], moments[2]))
    stats = None
    if train.n:
        std = train.std()
        stats = NormStats(float(std[0]), float(std[1]), source="train", n_values=int(train.n))
    manifest = DatasetManifest(
        root=out_dir, files=files, normalization=stats, master_seed=int(strike.seed),
        config=config or {}, config_hash=config_hash, fs=params.fs, frames=frames,
    )
    manifest.write()
    if failed:
        raise InstabilityError(
            f"{len(failed)} trajectories failed: " + "; ".join(f"#{e['id']}: {e['error']}" for e in failed),
            step=failed[0].get("step"),
        )
    return manifest


def compute_norm_stats(manifest, chunk_frames=2000):
    """Per-channel std over every frame and grid point of the training split, read from disk."""
    paths = manifest.paths("train")
    if not paths:
        raise ConfigurationError("manifest has no training trajectories")
    total = _Moments()
    for path in paths:
        traj = read_trajectory(path, mmap=True)
        m = _Moments()
        for start in range(0, len(traj), chunk_frames):
            m = m.merge(_Moments.of(traj.data[start:start + chunk_frames]))
        total = total.merge(m)
    std = total.std()
    return NormStats(float(std[0]), float(std[1]), source="train", n_values=int(total.n))


def apply_normalization(traj, stats, direction="forward"):
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    current = traj.meta.get("normalization")
    if direction == "forward":
        data = np.asarray(traj.data, dtype=np.float64) / stats.scales
        norm = stats.to_dict()
    else:
        data = np.asarray(traj.data, dtype=np.float64) * stats.scales
        norm = None
    if direction == "inverse" and current is not None and NormStats.from_dict(current) != stats:
        raise ConfigurationError("inverse normalisation with stats that differ from the ones applied")
    meta = dict(traj.meta)
    meta["normalization"] = norm
    return Trajectory(data=data, fs=traj.fs, meta=meta)


def load_split(manifest, split, normalized=True, frames=None):
    """Yield trajectories of one split, normalised with the manifest's training stats."""
    for path in manifest.paths(split):
        traj = read_trajectory(path, frames=frames)
        if normalized:
            traj = apply_normalization(traj, manifest.normalization)
        yield traj


def export_wav(traj, probe, path, channel="displacement"):
    """Write the probe signal as 16-bit mono PCM at the trajectory rate.

    The signal is peak-normalised; the peak (physical units) is written to a
    ``.scale.txt`` sidecar. Returns the scale factor.
    """
    iy, ix = probe
    Ny, Nx = traj.grid_shape
    if not (0 <= iy < Ny and 0 <= ix < Nx):
        raise ParameterError(f"probe {probe} outside the {Ny}x{Nx} grid")
    c = {"displacement": 0, "velocity": 1}[channel]
    signal = np.asarray(traj.data[:, iy, ix, c], dtype=np.float64)
    peak = float(np.max(np.abs(signal))) if signal.size else 0.0
    if peak == 0.0:
        warnings.warn(f"probe signal at {probe} is silent; writing an all-zero WAV", RuntimeWarning)
        pcm = np.zeros(signal.size, dtype="<i2")
    else:
        pcm = np.round(signal / peak * 32767.0).astype("<i2")
    path = Path(path)
    fs = int(round(traj.fs))
    if not math.isclose(fs, traj.fs):
        raise ParameterError(f"WAV needs an integer sampling rate, got {traj.fs}")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(fs)
        w.writeframes(pcm.tobytes())
    sidecar = path.with_suffix(".scale.txt")
    sidecar.write_text(
        f"channel={channel}\nprobe_iy={iy}\nprobe_ix={ix}\nfs={fs}\n"
        f"scale={peak!r}\n# physical = pcm / 32767 * scale\n"
    )
    return peak


def default_jobs():
    return os.cpu_count() or 1

