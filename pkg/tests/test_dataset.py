import json
import wave

import numpy as np
import pytest

from plateforge.dataset import (
    DatasetManifest,
    NormStats,
    StrikeConfig,
    _Moments,
    apply_normalization,
    compute_norm_stats,
    export_wav,
    gaussian_strike,
    generate_dataset,
    load_split,
    sample_strike,
    split_for_index,
    trajectory_rng,
)
from plateforge.errors import ConfigurationError, FormatError, ParameterError
from plateforge.fileformat import read_trajectory
from plateforge.solver import Trajectory


def test_split_counts():
    splits = [split_for_index(i, 100) for i in range(100)]
    assert splits.count("train") == 80 and splits.count("val") == 10 and splits.count("test") == 10
    assert splits[79] == "train" and splits[80] == "val" and splits[90] == "test"


def test_trajectory_rng_is_reproducible_and_distinct():
    a = trajectory_rng(7, 3).standard_normal(4)
    assert np.array_equal(a, trajectory_rng(7, 3).standard_normal(4))
    assert not np.array_equal(a, trajectory_rng(7, 4).standard_normal(4))
    assert not np.array_equal(a, trajectory_rng(8, 3).standard_normal(4))


def test_strike_sampling_ranges(linear_params):
    cfg = StrikeConfig()
    for i in range(200):
        vmax, sigma, x0, y0 = sample_strike(trajectory_rng(0, i), cfg, linear_params)
        assert 5 <= vmax <= 25 and 0.02 <= sigma <= 0.1
        assert 0.05 <= x0 <= 0.35 and 0.05 <= y0 <= 0.31


@pytest.mark.parametrize("bad", [dict(vmax_range=(0.0, 1.0)), dict(sigma_range=(0.2, 0.1)),
                                 dict(center_margin=0.3)])
def test_strike_config_validation(bad, linear_params):
    with pytest.raises(ParameterError):
        StrikeConfig(**bad).validate(linear_params)


def test_gaussian_strike_shape(linear_params):
    s = gaussian_strike(linear_params, 12.0, 0.03, 0.2, 0.18)
    assert not s.displacement.any()
    assert s.velocity[18, 20] == pytest.approx(12.0)
    assert not s.velocity[0].any() and not s.velocity[:, -1].any()


def test_moments_merge_matches_direct(rng):
    x = rng.standard_normal((1000, 2)) * [1.0, 30.0] + [0.1, -2.0]
    m = _Moments.of(x[:300]).merge(_Moments.of(x[300:710])).merge(_Moments.of(x[710:]))
    assert np.allclose(m.std(), x.std(axis=0), rtol=1e-13)
    assert m.n == 1000


def test_norm_stats_validation():
    with pytest.raises(ConfigurationError):
        NormStats(0.0, 1.0)
    s = NormStats(2.0, 3.0, n_values=5)
    assert NormStats.from_dict(s.to_dict()) == s


def test_apply_normalization_roundtrip(rng):
    t = Trajectory(data=rng.standard_normal((3, 4, 5, 2)), fs=1.0)
    s = NormStats(0.5, 4.0)
    n = apply_normalization(t, s)
    assert n.meta["normalization"] == s.to_dict()
    back = apply_normalization(n, s, "inverse")
    assert np.allclose(back.data, t.data, rtol=1e-15)
    assert back.meta["normalization"] is None
    with pytest.raises(ConfigurationError):
        apply_normalization(n, NormStats(1.0, 1.0), "inverse")


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    from plateforge.plate import PlateParams

    params = PlateParams(cnl_over_s0=1.0e5, Nx=9, Ny=8)
    out = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(params, StrikeConfig(seed=5), out, count=10, duration=0.01, Mx=4, My=3,
                                config={"note": "tiny"}, config_hash="abc")
    return params, manifest


def test_generate_writes_manifest(tiny_dataset):
    params, manifest = tiny_dataset
    d = json.loads((manifest.root / "manifest.json").read_text())
    assert d["splits"] == {"train": 8, "val": 1, "test": 1}
    assert len(d["files"]) == 10 and all(f["status"] == "ok" for f in d["files"])
    assert d["config_hash"] == "abc"
    t = read_trajectory(manifest.root / "traj_0003.plt")
    assert t.data.shape == (160, 8, 9, 2)
    assert t.meta["trajectory_id"] == 3 and t.meta["split"] == "train" and t.meta["config_hash"] == "abc"
    loaded = DatasetManifest.load(manifest.root)
    assert loaded.normalization == manifest.normalization
    assert loaded.entry_for(9)["split"] == "test"


def test_generated_stats_match_streaming_pass(tiny_dataset):
    _, manifest = tiny_dataset
    streamed = compute_norm_stats(manifest)
    assert streamed.displacement == pytest.approx(manifest.normalization.displacement, rel=1e-12)
    assert streamed.velocity == pytest.approx(manifest.normalization.velocity, rel=1e-12)
    stacked = np.concatenate([t.data for t in load_split(manifest, "train")])
    assert np.allclose(stacked.reshape(-1, 2).std(axis=0), 1.0, atol=1e-10)


def test_generation_independent_of_jobs(tiny_dataset, tmp_path):
    params, manifest = tiny_dataset
    other = generate_dataset(params, StrikeConfig(seed=5), tmp_path, count=10, duration=0.01, Mx=4, My=3,
                             jobs=2, config={"note": "tiny"}, config_hash="abc")
    assert (other.root / "manifest.json").read_bytes() == (manifest.root / "manifest.json").read_bytes()


def test_manifest_rejects_foreign_json(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        DatasetManifest.load(tmp_path)


def test_export_wav(tmp_path, rng):
    data = np.zeros((1600, 4, 5, 2))
    data[:, 2, 3, 0] = np.sin(np.arange(1600) * 0.1) * 3e-3
    t = Trajectory(data=data, fs=16000.0)
    scale = export_wav(t, (2, 3), tmp_path / "a.wav")
    assert scale == pytest.approx(3e-3, rel=1e-3)
    with wave.open(str(tmp_path / "a.wav")) as w:
        assert (w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()) == (1, 2, 16000, 1600)
        pcm = np.frombuffer(w.readframes(1600), dtype="<i2")
    assert np.abs(pcm).max() == 32767
    assert np.allclose(pcm / 32767 * scale, data[:, 2, 3, 0], atol=scale / 32767)
    assert "scale=" in (tmp_path / "a.scale.txt").read_text()
    with pytest.warns(RuntimeWarning):
        export_wav(t, (0, 0), tmp_path / "b.wav")
    with pytest.raises(ParameterError):
        export_wav(t, (9, 9), tmp_path / "c.wav")
