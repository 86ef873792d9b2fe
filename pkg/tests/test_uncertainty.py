import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afvae import model as M
from afvae import uncertainty as U
from afvae.dataset import make_folds
from afvae.train import FoldResult, save_fold_model
from toy import TOY, randomize


def _collapsed(params):
    params.values["encoder/log_var/weight"][...] = 0.0
    params.values["encoder/log_var/bias"][...] = -50.0
    return params


def test_identical_passes():
    r = U.summarize_passes([[0.9, 0.1]] * 5)
    assert r.prediction == 0 and r.uncertainty == 0.0
    np.testing.assert_array_equal(r.per_class_std, [0.0, 0.0])


def test_worked_example_bit_for_bit():
    r = U.summarize_passes([[0.6, 0.4], [0.8, 0.2]])
    ref = statistics.pstdev([0.4, 0.2])  # independent reference routine
    assert ref == 0.1
    np.testing.assert_allclose(r.mean_probs, [0.7, 0.3], rtol=0, atol=1e-15)
    assert r.per_class_std[0] == r.per_class_std[1] == ref
    assert r.uncertainty == 0.1
    assert r.prediction == 0 and r.n_passes == 2


def test_single_pass_is_zero():
    r = U.summarize_passes([[0.3, 0.7]])
    assert r.uncertainty == 0.0 and r.prediction == 1


def test_tie_goes_to_lower_index():
    assert U.summarize_passes([[0.5, 0.5]]).prediction == 0
    assert U.summarize_passes([[0.2, 0.4, 0.4]]).prediction == 1


def test_zero_passes_rejected(toy_params):
    with pytest.raises(ValueError):
        U.summarize_passes(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        U.predict_with_uncertainty(np.zeros(TOY.input_len), toy_params, TOY, n_passes=0)


@st.composite
def binary_passes(draw):
    n = draw(st.integers(1, 12))
    p = draw(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=n, max_size=n))
    return np.array([[1 - q, q] for q in p])


@settings(max_examples=300, deadline=None)
@given(binary_passes(), st.randoms())
def test_binary_report_properties(probs, rnd):
    r = U.summarize_passes(probs)
    assert r.per_class_std[0] == r.per_class_std[1]
    assert r.uncertainty == r.per_class_std[1]
    assert r.uncertainty >= 0
    assert (r.uncertainty == 0) == bool(np.all(probs == probs[0]))
    assert abs(r.mean_probs.sum() - 1) < 1e-6
    assert r.prediction == int(np.argmax(r.mean_probs))
    perm = list(range(len(probs)))
    rnd.shuffle(perm)
    s = U.summarize_passes(probs[perm])
    np.testing.assert_array_equal(s.mean_probs, r.mean_probs)
    np.testing.assert_array_equal(s.per_class_std, r.per_class_std)
    assert s.uncertainty == r.uncertainty and s.prediction == r.prediction


def test_multiclass_uncertainty_is_mean_of_stds():
    probs = np.array([[0.2, 0.3, 0.5], [0.1, 0.6, 0.3], [0.4, 0.4, 0.2]])
    r = U.summarize_passes(probs)
    np.testing.assert_allclose(r.per_class_std, probs.std(axis=0), rtol=1e-12)
    assert r.uncertainty == np.mean(r.per_class_std)


def test_clamp_floor_gives_tiny_uncertainty(toy_params):
    # low-gain network: the spread left at sigma = exp(-5) stays far below 1e-4
    p = _collapsed(randomize(toy_params, 0, scale=0.1))
    X = np.random.default_rng(0).standard_normal((30, TOY.input_len))
    reports = U.predict_batch(X, p, TOY, 5, rng=1)
    assert all(r.uncertainty < 1e-4 for r in reports)
    assert U.dataset_uncertainty_summary(p, TOY, X, 5, 1).mean_uncertainty < 1e-4


def test_uncertainty_shrinks_with_sigma(toy_params):
    p = toy_params
    p.values["encoder/log_var/weight"][...] = 0.0
    X = np.random.default_rng(1).standard_normal((30, TOY.input_len))
    means = []
    for log_var in (0.0, -4.0, -10.0):
        p.values["encoder/log_var/bias"][...] = log_var
        means.append(U.dataset_uncertainty_summary(p, TOY, X, 5, 2).mean_uncertainty)
    assert means[0] > means[1] > means[2]
    # close to linear in sigma once the network is locally linear
    assert means[2] / means[1] == pytest.approx(np.exp(-3.0), rel=0.2)


def test_single_segment_summary_equals_report(toy_params):
    p = randomize(toy_params, 3)
    x = np.random.default_rng(3).standard_normal(TOY.input_len)
    one = U.predict_with_uncertainty(x, p, TOY, 5, rng=7)
    summ = U.dataset_uncertainty_summary(p, TOY, x[None], 5, rng=7)
    assert summ.mean_uncertainty == one.uncertainty


def test_summary_rejects_empty(toy_params):
    with pytest.raises(ValueError):
        U.dataset_uncertainty_summary(toy_params, TOY, np.zeros((0, TOY.input_len)))


def test_predictions_deterministic_and_chunk_independent(toy_params, monkeypatch):
    p = randomize(toy_params, 4)
    X = np.random.default_rng(4).standard_normal((7, TOY.input_len))
    a = U.pass_probabilities(X, p, TOY, 5, rng=11)
    monkeypatch.setattr(U, "_CHUNK", 3)
    b = U.pass_probabilities(X, p, TOY, 5, rng=11)
    # same draws per input; only BLAS blocking may differ between chunk sizes
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
    monkeypatch.setattr(U, "_CHUNK", 256)
    np.testing.assert_array_equal(a, U.pass_probabilities(X, p, TOY, 5, rng=11))


def test_train_vs_test_report(tmp_path, toy_params):
    X = np.random.default_rng(5).standard_normal((30, TOY.input_len))
    plan = make_folds(30, 3, 0)
    results = []
    for f in range(3):
        path = tmp_path / f"fold{f}.ckpt"
        save_fold_model(path, randomize(M.init_params(TOY, f), f), TOY)
        results.append(FoldResult(f, 1.0, 1.0, 1.0, [], [], str(path), plan.train_indices(f),
                                  plan.test_indices(f)))
    rows = U.train_vs_test_report(results, X, plan, 5, seed=2)
    assert len(rows) == 3
    assert all(r.n_train_sampled == r.n_test == 10 for r in rows)
    assert rows == U.train_vs_test_report(results, X, plan, 5, seed=2)
    csv_text = U.fold_summary_csv(rows)
    assert csv_text.splitlines()[0] == "fold,train_mean_uncertainty,test_mean_uncertainty"
    assert len(csv_text.splitlines()) == 4


def test_train_vs_test_missing_checkpoint(tmp_path):
    plan = make_folds(10, 2, 0)
    res = FoldResult(0, 1, 1, 1, [], [], str(tmp_path / "gone.ckpt"), plan.train_indices(0),
                     plan.test_indices(0))
    with pytest.raises(FileNotFoundError):
        U.train_vs_test_report([res], np.zeros((10, TOY.input_len)), plan)


def test_report_csv_columns():
    reports = [U.summarize_passes([[0.6, 0.4], [0.8, 0.2]])]
    text = U.report_csv(["r:0"], [1], reports)
    header, row = text.splitlines()
    assert header == "segment_id,label,prediction,prob_af_mean,prob_normal_mean,uncertainty"
    assert row.startswith("r:0,AF,Normal,")
