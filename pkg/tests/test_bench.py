import csv
import json
import time

import numpy as np
import pytest

from csvae.bench import (
    CSV_COLUMNS,
    ExperimentSpec,
    _timed_median_seconds,
    build_method_matrix,
    dct_synthesis_basis,
    frame_mse,
    make_splits,
    report_to_dict,
    run_latency,
    run_mse_vs_m,
    run_mse_vs_noise,
    save_report_csv,
    save_report_json,
    seed_mean_mse,
    train_method_model,
)
from csvae.errors import NumericalError
from csvae.vae import TrainConfig

N_SMALL = 24


def tiny_spec(**overrides):
    base = dict(
        m_list=(12,),
        sigma_list=(1e-3,),
        sample_counts=(48,),
        seeds=(0,),
        n_features=N_SMALL,
        sparsity=3,
        train_frames=80,
        test_frames=40,
        lasso_eval_frames=16,
        sigma_fixed=1e-3,
        m_fixed=12,
        data_seed=7,
        train_config=TrainConfig(epochs=2, batch_size=20),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        tiny_spec(m_list=())
    with pytest.raises(ValueError):
        tiny_spec(m_list=(24,))  # m must be < n_features
    with pytest.raises(ValueError):
        tiny_spec(sigma_list=(-1e-3,))
    with pytest.raises(ValueError):
        tiny_spec(latency_repetitions=0)
    with pytest.raises(ValueError):
        tiny_spec(methods=("CsVae", "Ridge"))
    with pytest.raises(ValueError):
        tiny_spec(train_frames=0)


def test_make_splits_normalization_flows_from_train():
    spec = tiny_spec()
    splits = make_splits(spec)
    assert splits.train.n_frames == 80 and splits.test.n_frames == 40
    assert splits.train.normalized and splits.test.normalized
    # Training extrema map exactly to the interval ends; the test split is
    # clamped into the same interval using the training stats.
    assert splits.train.frames.min() == pytest.approx(-1.0)
    assert splits.train.frames.max() == pytest.approx(1.0)
    assert splits.test.frames.min() >= -1.0
    assert splits.test.frames.max() <= 1.0
    again = make_splits(spec)
    assert np.array_equal(splits.train.frames, again.train.frames)
    assert np.array_equal(splits.test.frames, again.test.frames)


def test_frame_mse_oracle():
    x_hat = np.array([[1.0, 2.0], [0.0, 0.0]])
    x_star = np.array([[0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_allclose(frame_mse(x_hat, x_star), [2.5, 12.5])
    with pytest.raises(ValueError):
        frame_mse(np.zeros((2, 3)), np.zeros((2, 4)))


def test_dct_synthesis_basis_is_orthonormal():
    Psi = dct_synthesis_basis(N_SMALL)
    np.testing.assert_allclose(Psi.T @ Psi, np.eye(N_SMALL), atol=1e-12)
    # Psi @ s must equal the inverse DCT of the coefficient vector.
    from scipy.fft import idct

    rng = np.random.default_rng(0)
    s = rng.standard_normal(N_SMALL)
    np.testing.assert_allclose(Psi @ s, idct(s, type=2, norm="ortho"), atol=1e-12)


def test_build_method_matrix_kinds():
    spec = tiny_spec()
    splits = make_splits(spec)
    a = build_method_matrix(spec, "CsVae", 12, 0, splits.stats)
    b = build_method_matrix(spec, "Lasso", 12, 0, splits.stats)
    c = build_method_matrix(spec, "LassoNoPt", 12, 0, splits.stats)
    d = build_method_matrix(spec, "Dip", 12, 0, splits.stats)
    assert a.kind == "proposition" and b.kind == "proposition"
    # The generative method and its power-constrained baseline share the
    # exact same matrix for a seed.
    assert np.array_equal(a.entries, b.entries)
    assert c.kind == "unconstrained"
    assert not np.array_equal(a.entries, c.entries)
    assert d.kind == "selection"
    with pytest.raises(ValueError):
        build_method_matrix(spec, "Dip", 10, 0, splits.stats)
    with pytest.raises(ValueError):
        build_method_matrix(spec, "Ridge", 12, 0, splits.stats)


def test_run_mse_vs_m_structure_and_determinism():
    spec = tiny_spec(seeds=(0, 1))
    splits = make_splits(spec)
    report = run_mse_vs_m(spec, splits)
    assert report.experiment == "mse_vs_m"
    assert len(report.rows) == len(spec.m_list) * 2 * len(spec.methods)
    for row in report.rows:
        assert row.sigma_n == spec.sigma_fixed
        assert np.isfinite(row.mse_mean) and np.isfinite(row.mse_std)
        assert row.mse_mean >= 0 and row.decode_seconds > 0
        if row.method in ("CsVae", "Dip"):
            assert row.train_seconds > 0
        else:
            assert row.train_seconds == 0.0

    again = run_mse_vs_m(spec, splits)
    for r1, r2 in zip(report.rows, again.rows):
        assert (r1.method, r1.m, r1.seed) == (r2.method, r2.m, r2.seed)
        assert r1.mse_mean == r2.mse_mean
        assert r1.mse_std == r2.mse_std


def test_run_mse_vs_noise_structure():
    spec = tiny_spec(sigma_list=(1e-4, 1e-2), methods=("Lasso", "LassoNoPt"))
    splits = make_splits(spec)
    report = run_mse_vs_noise(spec, splits)
    assert report.experiment == "mse_vs_noise"
    assert len(report.rows) == 2 * 1 * 2
    assert {row.m for row in report.rows} == {spec.m_fixed}
    assert {row.sigma_n for row in report.rows} == {1e-4, 1e-2}


def test_seed_mean_mse_aggregates_over_seeds():
    spec = tiny_spec(seeds=(0, 1), methods=("LassoNoPt",))
    splits = make_splits(spec)
    report = run_mse_vs_m(spec, splits)
    means = seed_mean_mse(report)
    key = ("LassoNoPt", 12, spec.sigma_fixed)
    manual = np.mean([r.mse_mean for r in report.rows])
    assert means[key] == pytest.approx(manual, rel=1e-15)


def test_report_json_and_csv_outputs(tmp_path):
    spec = tiny_spec(methods=("Lasso", "LassoNoPt"))
    splits = make_splits(spec)
    report = run_mse_vs_m(spec, splits)
    jpath = tmp_path / "report.json"
    cpath = tmp_path / "report.csv"
    save_report_json(report, jpath)
    save_report_csv(report, cpath)

    doc = json.loads(jpath.read_text())
    assert doc["experiment"] == "mse_vs_m"
    assert len(doc["rows"]) == len(report.rows)
    assert doc["spec"]["m_list"] == [12]
    assert "timestamp" in doc["environment"]

    with open(cpath, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 1 + len(report.rows)
    assert rows[1][0] == "Lasso"
    # Round-trippable numeric cells.
    assert float(rows[1][4]) == report.rows[0].mse_mean


def test_report_determinism_modulo_timing(tmp_path):
    spec = tiny_spec(methods=("LassoNoPt",))
    splits = make_splits(spec)
    docs = []
    for i in range(2):
        report = run_mse_vs_m(spec, splits)
        doc = report_to_dict(report)
        doc["environment"].pop("timestamp")
        for row in doc["rows"]:
            row.pop("decode_seconds")
            row.pop("train_seconds")
        docs.append(json.dumps(doc, sort_keys=True))
    assert docs[0] == docs[1]


def test_run_latency_structure():
    spec = tiny_spec(methods=("LassoNoPt",), sample_counts=(48, 120))
    splits = make_splits(spec)
    report = run_latency(spec, splits, models={})
    assert report.experiment == "latency"
    assert len(report.rows) == 2
    assert [row.samples for row in report.rows] == [48, 120]
    for row in report.rows:
        assert row.decode_seconds > 0
        assert np.isfinite(row.mse_mean)
        assert row.m == spec.m_fixed


def test_run_latency_requires_model_for_generative_methods():
    spec = tiny_spec(methods=("CsVae",))
    splits = make_splits(spec)
    with pytest.raises(ValueError):
        run_latency(spec, splits, models={})


def test_run_latency_with_trained_model():
    spec = tiny_spec(methods=("CsVae",), sample_counts=(2400,))
    splits = make_splits(spec)
    model, A, _ = train_method_model(
        spec, splits, "CsVae", spec.m_fixed, spec.sigma_fixed, spec.seeds[0]
    )
    report = run_latency(spec, splits, models={"CsVae": (model, A)})
    assert len(report.rows) == 1
    assert report.rows[0].samples == 2400
    assert report.rows[0].decode_seconds > 0


def test_timed_median_rejects_zero_repetitions():
    with pytest.raises(ValueError):
        _timed_median_seconds(lambda: None, 0)


def test_timed_median_flags_insufficient_resolution():
    with pytest.raises(NumericalError):
        _timed_median_seconds(lambda: None, 3)


def test_timed_median_measures_real_work():
    seconds = _timed_median_seconds(lambda: time.sleep(0.002), 3)
    assert 1e-3 < seconds < 0.5
