import csv
import json
import math

import numpy as np
import pytest

from plateforge.errors import ConfigurationError, ParameterError, ShapeError, UndefinedMetricError
from plateforge.metrics import (
    MetricReport,
    ProbeSpec,
    blockwise_mae,
    combine_runs,
    emit_report,
    energy_fraction_above,
    evaluate_single_block,
    hann,
    peak_frequency,
    radial_spatial_power_spectrum,
    relative_mae,
    relative_mse,
    spectrogram,
    stft_magnitude,
)
from plateforge.solver import Trajectory


def _brute_mse(p, t):
    num = den = 0.0
    for a, b in zip(p.ravel().tolist(), t.ravel().tolist()):
        num += (a - b) ** 2
        den += b * b
    return num / den


def _brute_mae(p, t):
    num = den = 0.0
    for a, b in zip(p.ravel().tolist(), t.ravel().tolist()):
        num += abs(a - b)
        den += abs(b)
    return num / den


def test_relative_errors_match_brute_force(rng):
    t = rng.standard_normal((7, 4, 5, 2))
    p = t + 0.1 * rng.standard_normal(t.shape)
    assert relative_mse(p, t) == pytest.approx(_brute_mse(p, t), rel=1e-12)
    assert relative_mae(p, t) == pytest.approx(_brute_mae(p, t), rel=1e-12)


def test_identities(rng):
    t = rng.standard_normal((3, 4, 2))
    assert relative_mse(t, t) == 0.0 and relative_mae(t, t) == 0.0
    assert relative_mse(np.zeros_like(t), t) == 1.0 and relative_mae(np.zeros_like(t), t) == 1.0
    with pytest.raises(UndefinedMetricError):
        relative_mse(t, np.zeros_like(t))
    with pytest.raises(UndefinedMetricError):
        relative_mae(t, np.zeros_like(t))
    with pytest.raises(ShapeError):
        relative_mse(t, t[:2])


@pytest.mark.parametrize("T,L", [(4000, 49), (4000, 199), (4000, 399), (100, 100), (99, 7)])
def test_blockwise_length(T, L, rng):
    t = rng.standard_normal((T, 2, 2, 2))
    times, values = blockwise_mae(t * 1.1, t, L, fs=16000.0)
    assert len(values) == T // L == len(times)
    assert np.allclose(values, 0.1)
    assert times[1] - times[0] == pytest.approx(L / 16000.0) if len(times) > 1 else True


def test_blockwise_too_short(rng):
    with pytest.raises(ConfigurationError):
        blockwise_mae(np.ones((5, 1, 1, 2)), np.ones((5, 1, 1, 2)), 6)


def test_probes(linear_params):
    assert ProbeSpec.center(linear_params).index == (18, 20)
    assert ProbeSpec.edge(linear_params).index == (18, 1)
    with pytest.raises(ParameterError):
        ProbeSpec.named("corner", linear_params)


def test_hann_is_periodic_and_cola():
    w = hann(512)
    assert w[0] == 0.0 and w[256] == pytest.approx(1.0)
    total = np.zeros(512 * 4)
    for s in range(0, total.size - 512 + 1, 128):
        total[s : s + 512] += w
    assert np.allclose(total[512:-512], 2.0)


def test_stft_peak_of_pure_tone():
    fs = 16000.0
    t = np.arange(16000) / fs
    sg = stft_magnitude(np.sin(2 * np.pi * 1000.0 * t), fs)
    assert sg.magnitude.shape == ((16000 - 512) // 128 + 1, 257)
    assert sg.peak_frequency() == pytest.approx(1000.0, abs=fs / 512)
    assert sg.times[0] == pytest.approx(256 / fs)
    with pytest.raises(ParameterError):
        stft_magnitude(np.zeros(100), fs)


def test_peak_frequency_interpolates():
    fs = 16000.0
    t = np.arange(4000) / fs
    assert peak_frequency(np.sin(2 * np.pi * 103.37 * t), fs) == pytest.approx(103.37, abs=0.05)
    with pytest.raises(ParameterError):
        peak_frequency(np.zeros(100), fs)


def test_spectrogram_probe_bounds(rng):
    t = Trajectory(data=rng.standard_normal((600, 3, 3, 2)), fs=16000.0)
    assert spectrogram(t, (1, 1)).magnitude.shape[1] == 257
    with pytest.raises(ParameterError):
        spectrogram(t, (3, 0))


def test_radial_parseval(rng, linear_params):
    data = rng.standard_normal((5, 37, 41, 2))
    centers, power = radial_spatial_power_spectrum(data, frames=5, Lx=0.4, Ly=0.36)
    assert centers[1] == pytest.approx(2.5)
    total = np.mean(np.sum(data[..., 0] ** 2, axis=(1, 2)))
    assert power.sum() == pytest.approx(total, rel=1e-9)


def test_radial_single_mode_concentration(basis):
    m, n = 3, 2
    field = basis.grid_shapes[basis.index_of((m, n))][None, :, :, None].repeat(2, axis=-1)
    centers, power = radial_spatial_power_spectrum(field, frames=1, Lx=0.4, Ly=0.36)
    k = math.hypot(m / (2 * 0.4), n / (2 * 0.36))  # cycles/m of sin(m pi x / Lx)
    j = int(round(k / 2.5))
    assert power[max(j - 1, 0) : j + 2].sum() / power.sum() >= 0.95


def test_radial_needs_dimensions(rng):
    with pytest.raises(ParameterError):
        radial_spatial_power_spectrum(rng.standard_normal((2, 4, 4, 2)), frames=2)
    with pytest.raises(ParameterError):
        radial_spatial_power_spectrum(rng.standard_normal((2, 4, 4, 2)), frames=3, Lx=1, Ly=1)


def test_energy_fraction():
    c = np.arange(5) * 10.0
    assert energy_fraction_above(c, np.array([1.0, 1, 1, 1, 0]), 15.0) == pytest.approx(0.5)
    assert energy_fraction_above(c, np.zeros(5), 15.0) == 0.0


def test_single_block_with_perfect_predictor(rng):
    data = rng.standard_normal((300, 3, 4, 2))
    traj = Trajectory(data=data, fs=1.0, meta={"trajectory_id": 7})

    def oracle(snapshot, L):
        k = int(np.flatnonzero((data == snapshot).all(axis=(1, 2, 3)))[0])
        return data[k + 1 : k + 1 + L]

    r = evaluate_single_block(oracle, [traj], 49, stride=100)
    assert r.rel_mse == 0.0 and r.rel_mae == 0.0
    assert r.n_blocks == 3  # starts 0, 100, 200
    assert r.per_trajectory["7"]["n_blocks"] == 3
    r = evaluate_single_block(lambda s, L: np.zeros((L, *s.shape)), [traj], 49)
    assert r.rel_mse == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        evaluate_single_block(oracle, [traj], 300)


def test_combine_runs_population_std():
    rs = [MetricReport("m", 49, rel_mse=v, rel_mae=2 * v, seeds=[i]) for i, v in enumerate([1.0, 3.0])]
    c = combine_runs(rs)
    assert c.rel_mse == 2.0 and c.rel_mse_std == 1.0 and c.rel_mae_std == 2.0
    assert combine_runs(rs[:1]).rel_mse_std is None


def test_emit_report_files(tmp_path, rng):
    sg = stft_magnitude(rng.standard_normal(1024), 16000.0)
    r = MetricReport("dmd", 49, task="rollout", rel_mse=0.5, rel_mae=0.25,
                     blockwise={"t_start_s": [0.1, 0.2], "rel_mae": [0.3, 0.4]},
                     spectrograms={"center": sg}, radial={"truth": (np.arange(3.0), np.ones(3))})
    paths = emit_report([r], tmp_path)
    names = {p.name for p in paths}
    assert {"summary.json", "table1.csv", "blockwise_dmd_L49.csv", "radial_dmd_L49_truth.csv",
            "spectrogram_dmd_L49_center.csv"} <= names
    rows = list(csv.reader((tmp_path / "table1.csv").read_text().splitlines()))
    assert rows[0] == ["model", "task", "steps", "rel_mse", "rel_mse_std", "rel_mae", "rel_mae_std"]
    assert rows[1][:3] == ["dmd", "rollout", "49"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary[0]["spectrograms"]["center"]["window_len"] == 512
    assert len((tmp_path / "blockwise_dmd_L49.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("scale", [7e-181, 1e-300, 1e200])
def test_relative_errors_extreme_magnitudes(scale, rng):
    t = rng.standard_normal((4, 3, 2))
    p = t * 1.1
    assert relative_mse(p * scale, t * scale) == pytest.approx(relative_mse(p, t), rel=1e-12)
    assert relative_mae(p * scale, t * scale) == pytest.approx(relative_mae(p, t), rel=1e-12)
