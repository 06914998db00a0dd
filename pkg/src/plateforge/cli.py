"""plateforge command line.

Exit codes: 0 success, 2 usage/configuration, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import json
import logging
import math
from pathlib import Path
import sys

import numpy as np

from . import metrics
from .config import load_config
from .dataset import (
    DatasetManifest,
    apply_normalization,
    default_jobs,
    export_wav,
    gaussian_strike,
    generate_dataset,
    load_split,
    sample_strike,
    trajectory_rng,
)
from .errors import (
    ConfigurationError,
    FormatError,
    InstabilityError,
    PairingError,
    ParameterError,
    PredictorError,
    ShapeError,
    UndefinedMetricError,
    UnsupportedRegimeError,
)
from .fileformat import read_trajectory, write_trajectory
from .plate import build_basis
from .solver import Trajectory, simulate
from .surrogate import (
    SolverPredictor,
    autoregressive_rollout,
    fit_diag_lti,
    load_external_predictions,
    load_model,
    save_model,
)

log = logging.getLogger("plateforge")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
SPECTRUM_RESOLUTION_HZ = 0.25


def _jobs(args, cfg):
    n = args.jobs if getattr(args, "jobs", None) is not None else (cfg.jobs if cfg else 0)
    return n or default_jobs()


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_generate(args):
    cfg = _config(args)
    overrides = {}
    if args.count is not None:
        overrides["count"] = args.count
    if args.duration is not None:
        overrides["duration"] = args.duration
    if args.dtype is not None:
        overrides["dtype"] = args.dtype
    if overrides:
        cfg = cfg.replace(dataset=overrides)
    ds = cfg.dataset
    manifest = generate_dataset(
        cfg.plate_params(), cfg.strike_config(), args.out, count=ds.count, duration=ds.duration,
        oversample=cfg.solver.oversample, Mx=cfg.solver.Mx, My=cfg.solver.My, dtype=ds.dtype,
        jobs=_jobs(args, cfg), config=cfg.to_dict(), config_hash=cfg.hash(),
    )
    print(f"wrote {len(manifest.files)} trajectories and {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_solve(args):
    cfg = _config(args)
    params = cfg.plate_params()
    basis = build_basis(params, cfg.solver.Mx, cfg.solver.My)
    if args.vmax is not None:
        strike = (args.vmax, args.sigma, args.x0 if args.x0 is not None else params.Lx / 2,
                  args.y0 if args.y0 is not None else params.Ly / 2)
    else:
        strike = sample_strike(trajectory_rng(cfg.seed, args.index), cfg.strike_config(), params)
    ic = gaussian_strike(params, *strike)
    steps = args.steps or int(round(cfg.dataset.duration * params.fs))
    traj = simulate(params, basis, ic, steps, cfg.solver.oversample, keep_modal=False)
    traj.meta.update(
        kind="ground_truth", trajectory_id=args.index, seed=cfg.seed, config_hash=cfg.hash(),
        strike=dict(zip(("vmax", "sigma", "x0", "y0"), strike)),
    )
    write_trajectory(traj, args.out, dtype=args.dtype or cfg.dataset.dtype)
    print(f"wrote {args.out} ({steps} frames)")
    return 0


def cmd_fit(args):
    cfg = _config(args)
    manifest = DatasetManifest.load(args.data)
    if manifest.normalization is None:
        raise ConfigurationError(f"{args.data}: manifest has no training normalisation")
    sg = cfg.surrogate
    model = fit_diag_lti(
        load_split(manifest, "train"), rank=args.rank or sg.rank, sub_step=sg.sub_step,
        pair_stride=sg.pair_stride, normalization=manifest.normalization.to_dict(),
    )
    digest = save_model(model, args.out, extra={
        "config_hash": cfg.hash(), "dataset_config_hash": manifest.config_hash, "model_id": args.model_id,
    })
    print(f"wrote {args.out} (rank {model.latent_dim}, sha256 {digest[:12]})")
    return 0


def _predictor(args, cfg, manifest):
    if args.oracle:
        params = cfg.plate_params()
        return (SolverPredictor(params, build_basis(params, cfg.solver.Mx, cfg.solver.My),
                                cfg.solver.oversample, manifest.normalization), "oracle")
    model = load_model(args.model)
    return model, model.meta.get("model_id") or "dmd"


def cmd_rollout(args):
    cfg = _config(args)
    manifest = DatasetManifest.load(args.data)
    if not args.oracle and not args.model:
        raise ConfigurationError("rollout needs --model or --oracle")
    predictor, model_id = _predictor(args, cfg, manifest)
    block = args.block or cfg.surrogate.block_lengths[-1]
    steps = args.steps or cfg.evaluation.rollout_steps
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for entry in manifest.entries(args.split):
        truth = read_trajectory(manifest.root / entry["path"], frames=slice(0, 1))
        initial = apply_normalization(truth, manifest.normalization).data[0]
        try:
            pred = autoregressive_rollout(predictor, initial, block, steps, fs=manifest.fs)
        except PredictorError as exc:
            if exc.partial is not None:
                exc.partial.meta.update(trajectory_id=entry["id"], model_id=model_id, start_index=0,
                                        normalization=manifest.normalization.to_dict())
                write_trajectory(exc.partial, out / f"pred_{model_id}_{entry['id']:04d}_L{block}.partial.plt")
            raise
        pred.meta.update(
            trajectory_id=entry["id"], model_id=model_id, start_index=0, config_hash=cfg.hash(),
            normalization=manifest.normalization.to_dict(),
        )
        write_trajectory(pred, out / f"pred_{model_id}_{entry['id']:04d}_L{block}.plt", dtype="f64")
        n += 1
    print(f"wrote {n} prediction files to {out}")
    return 0


def _to_units(traj, stats, physical):
    norm = traj.meta.get("normalization")
    if physical:
        return apply_normalization(traj, stats, "inverse").data if norm else np.asarray(traj.data, dtype=np.float64)
    return np.asarray(traj.data, dtype=np.float64) if norm else apply_normalization(traj, stats).data


def cmd_evaluate(args):
    cfg = _config(args)
    ev = cfg.evaluation
    physical = args.physical or ev.physical_units
    manifest = DatasetManifest.load(args.data)
    stats = manifest.normalization
    params = cfg.plate_params()
    reports = []

    groups = {}
    for path in sorted(Path(args.pred).glob("*.plt")):
        if path.name.endswith(".partial.plt"):
            continue
        pair = load_external_predictions(path, manifest)
        key = (pair.prediction.meta.get("model_id", "external"), int(pair.prediction.meta.get("block_len", 0)))
        groups.setdefault(key, []).append(pair)
    for (model_id, block_len), pairs in sorted(groups.items()):
        pairs.sort(key=lambda p: p.trajectory_id)
        mses, maes, curves = [], [], []
        per_traj = {}
        rad_pred, rad_truth = [], []
        spectrograms = {}
        for i, pair in enumerate(pairs):
            truth_traj = pair.truth()
            pred = _to_units(pair.prediction, stats, physical)
            truth = _to_units(truth_traj, stats, physical)
            p_sel = metrics.select_channels(pred, ev.channel)
            t_sel = metrics.select_channels(truth, ev.channel)
            mse, mae = metrics.relative_mse(p_sel, t_sel), metrics.relative_mae(p_sel, t_sel)
            per_traj[str(pair.trajectory_id)] = {"rel_mse": mse, "rel_mae": mae}
            mses.append(mse)
            maes.append(mae)
            if block_len and len(pred) >= block_len:
                t0, curve = metrics.blockwise_mae(pred, truth, block_len, manifest.fs,
                                                  first_frame=pair.start_index + 1, channel=ev.channel)
                curves.append(curve)
            n_spec = min(ev.spectrum_frames, len(pred))
            kw = dict(frames=n_spec, channel=ev.spectrum_channel, Lx=params.Lx, Ly=params.Ly)
            rad_pred.append(metrics.radial_spatial_power_spectrum(pred, **kw))
            rad_truth.append(metrics.radial_spatial_power_spectrum(truth, **kw))
            if i == 0:
                for role in ev.probes:
                    probe = metrics.ProbeSpec.named(role, params)
                    for label, arr in (("pred", pred), ("truth", truth)):
                        tr = Trajectory(data=arr, fs=manifest.fs)
                        if len(tr) >= ev.window_len:
                            spectrograms[f"{label}_{pair.trajectory_id}_{role}"] = metrics.spectrogram(
                                tr, probe, ev.spectrum_channel, ev.window_len, ev.hop)
        report = metrics.MetricReport(
            model_id=model_id, block_len=block_len, task="rollout",
            rel_mse=float(np.mean(mses)), rel_mae=float(np.mean(maes)),
            rel_mse_block_std=float(np.std(mses)), rel_mae_block_std=float(np.std(maes)),
            n_blocks=len(mses), per_trajectory=per_traj, spectrograms=spectrograms,
            radial={
                "pred": (rad_pred[0][0], np.mean([r[1] for r in rad_pred], axis=0)),
                "truth": (rad_truth[0][0], np.mean([r[1] for r in rad_truth], axis=0)),
            },
            meta={"units": "physical" if physical else "normalized", "channel": ev.channel,
                  "stft": {"window": "hann", "window_len": ev.window_len, "hop": ev.hop},
                  "config_hash": cfg.hash()},
        )
        if curves:
            n = min(len(c) for c in curves)
            report.blockwise = {"t_start_s": t0[:n].tolist(),
                                "rel_mae": np.mean([c[:n] for c in curves], axis=0).tolist()}
        reports.append(report)

    if args.model:
        model = load_model(args.model)
        model_id = model.meta.get("model_id") or "dmd"
        for L in args.blocks or cfg.surrogate.block_lengths:
            test = load_split(manifest, "test")
            r = metrics.evaluate_single_block(model, test, L, ev.stride, model_id=model_id,
                                              seeds=[cfg.seed], channel=ev.channel)
            r.meta["config_hash"] = cfg.hash()
            reports.append(r)
    if not reports:
        raise ConfigurationError("nothing to evaluate: no prediction files and no --model")
    written = metrics.emit_report(reports, args.out, plots=args.plots)
    print(f"wrote {len(written)} report files to {args.out}")
    return 0


def _probe_for(args, traj):
    p = traj.meta.get("params")
    if p is None:
        raise FormatError("trajectory header carries no plate parameters")
    from .plate import PlateParams

    return metrics.ProbeSpec.named(args.probe, PlateParams.from_dict(p))


def cmd_spectra(args):
    traj = read_trajectory(args.traj)
    probe = _probe_for(args, traj)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    signal = metrics.probe_signal(traj, probe, args.channel)
    # zero-pad to 0.25 Hz bins
    n_fft = max(len(signal), int(math.ceil(traj.fs / SPECTRUM_RESOLUTION_HZ)))
    spec = np.abs(np.fft.rfft(signal * metrics.hann(len(signal)), n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / traj.fs)
    peak = int(np.argmax(spec))
    with open(out / f"probe_spectrum_{probe.role}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f_hz", "magnitude", "is_peak"])
        for i, (f, m) in enumerate(zip(freqs, spec)):
            w.writerow([repr(float(f)), repr(float(m)), int(i == peak)])
    sg = metrics.spectrogram(traj, probe, args.channel, args.window_len, args.hop)
    metrics.write_spectrogram_csv(sg, out / f"spectrogram_{probe.role}.csv")
    centers, power = metrics.radial_spatial_power_spectrum(traj, frames=min(args.frames, len(traj)),
                                                           channel=args.channel)
    with open(out / "radial_spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k_cycles_per_m", "power"])
        for c, p in zip(centers, power):
            w.writerow([repr(float(c)), repr(float(p))])
    (out / "spectra_meta.json").write_text(json.dumps({
        "source": str(args.traj), "probe": probe.role, "probe_index": list(probe.index),
        "channel": args.channel, "peak_hz": float(freqs[peak]), "window_len": args.window_len,
        "hop": args.hop, "peak_hz_interpolated": metrics.peak_frequency(signal, traj.fs),
        "config_hash": traj.meta.get("config_hash"),
    }, sort_keys=True, indent=1) + "\n")
    print(f"peak {freqs[peak]:.2f} Hz at {probe.role} probe; CSVs in {out}")
    return 0


def cmd_export_wav(args):
    traj = read_trajectory(args.traj)
    probe = _probe_for(args, traj)
    scale = export_wav(traj, probe.index, args.out, channel=args.channel)
    print(f"wrote {args.out} (peak {scale:.6g})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="plateforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="TOML run configuration (e.g. berger.toml)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    p = with_config(sub.add_parser("generate", help="simulate a dataset of random strikes"))
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--dtype", choices=["f32", "f64"], default=None)
    p.set_defaults(func=cmd_generate)

    p = with_config(sub.add_parser("solve", help="simulate one strike"))
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0, help="trajectory index for a sampled strike")
    p.add_argument("--vmax", type=float, default=None)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--x0", type=float, default=None)
    p.add_argument("--y0", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dtype", choices=["f32", "f64"], default=None)
    p.set_defaults(func=cmd_solve)

    p = with_config(sub.add_parser("fit-dmd", help="fit the diagonal LTI surrogate"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--model-id", default="dmd")
    p.set_defaults(func=cmd_fit)

    p = with_config(sub.add_parser("rollout", help="autoregressive block rollout on a split"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--oracle", action="store_true", help="use the reference solver as predictor")
    p.add_argument("--block", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_rollout)

    p = with_config(sub.add_parser("evaluate", help="score predictions against ground truth"))
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="also run the single-block task with this model")
    p.add_argument("--blocks", type=int, nargs="*", default=None)
    p.add_argument("--physical", action="store_true", help="compute metrics in physical units")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    def probe_args(p):
        p.add_argument("--traj", required=True)
        p.add_argument("--probe", choices=["center", "edge"], default="center")
        p.add_argument("--channel", choices=["displacement", "velocity"], default="displacement")
        p.add_argument("--out", required=True)

    p = sub.add_parser("spectra", help="probe spectrum, spectrogram and radial spectrum CSVs")
    probe_args(p)
    p.add_argument("--window-len", type=int, default=metrics.DEFAULT_WINDOW)
    p.add_argument("--hop", type=int, default=metrics.DEFAULT_HOP)
    p.add_argument("--frames", type=int, default=4000)
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("export-wav", help="write a probe signal as 16-bit WAV")
    probe_args(p)
    p.set_defaults(func=cmd_export_wav)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ParameterError) as exc:
        print(f"plateforge {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstabilityError, UnsupportedRegimeError, UndefinedMetricError, PredictorError) as exc:
        print(f"plateforge {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, PairingError, ShapeError, OSError, KeyError) as exc:
        print(f"plateforge {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
