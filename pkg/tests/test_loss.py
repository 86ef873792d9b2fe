import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from afvae import diffnet as dn
from afvae import loss as L
from afvae import model as M
from afvae.model import ForwardOutput, LatentGaussian
from gradcheck import max_rel_error, numeric_grads
from toy import TOY, randomize


def kl_by_quadrature(mu, log_var):
    """Integral of q ln(q/p) for q = N(mu, exp(log_var)), p = N(0, 1)."""
    sd = math.exp(0.5 * log_var)
    q = stats.norm(mu, sd)

    def integrand(z):
        return q.pdf(z) * (q.logpdf(z) - stats.norm.logpdf(z))

    val, _ = integrate.quad(integrand, mu - 40 * sd, mu + 40 * sd, limit=400, epsabs=1e-13)
    return val


# ------------------------------------------------------------------ reconstruction


def test_reconstruction_perfect():
    x = np.array([0.3, -1.0, 2.0])
    assert float(L.reconstruction_loss(x, x)) == 0.0


def test_reconstruction_hand_value():
    assert float(L.reconstruction_loss([1.0, 0.0], [0.0, 0.0])) == 0.5


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_reconstruction_non_negative_and_symmetric(pairs):
    x, y = np.array(pairs).T
    a, b = float(L.reconstruction_loss(x, y)), float(L.reconstruction_loss(y, x))
    assert a >= 0 and a == b


def test_reconstruction_length_mismatch():
    with pytest.raises(ValueError):
        L.reconstruction_loss(np.zeros(3), np.zeros(4))


def test_reconstruction_batch_mean():
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    # per example 0.5 and 0, averaged
    assert float(L.reconstruction_loss(x, np.zeros((2, 2)))) == 0.25


# ------------------------------------------------------------------ KL


def test_kl_at_prior():
    assert float(L.kl_divergence(np.zeros(3), np.zeros(3))) == 0.0


def test_kl_unit_shift():
    assert abs(float(L.kl_divergence([1.0], [0.0])) - 0.5) < 1e-9


def test_kl_unit_shift_oracle():
    # frozen from the quadrature oracle below
    assert kl_by_quadrature(1.0, 0.0) == pytest.approx(0.5, abs=1e-9)


def test_kl_matches_quadrature_on_random_pairs():
    rng = np.random.default_rng(2024)
    pairs = rng.uniform(-2, 2, size=(20, 2))
    for mu, lv in pairs:
        closed = float(L.kl_divergence([mu], [lv]))
        numeric = kl_by_quadrature(mu, lv)
        assert abs(closed - numeric) <= 0.01 * abs(numeric) + 1e-12, (mu, lv)


def test_kl_non_negative_on_random_draws():
    rng = np.random.default_rng(0)
    mu = rng.uniform(-5, 5, size=(10_000, 1))
    lv = rng.uniform(-10, 10, size=(10_000, 1))
    inner = -0.5 * (1 + lv - mu**2 - np.exp(lv))
    assert np.all(inner >= 0)
    assert float(L.kl_divergence(mu, lv)) >= 0


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-5, 5)), min_size=2, max_size=6), st.randoms())
@settings(max_examples=100, deadline=None)
def test_kl_permutation_invariant(pairs, rnd):
    mu, lv = np.array(pairs).T
    perm = list(range(len(mu)))
    rnd.shuffle(perm)
    a = float(L.kl_divergence(mu, lv))
    b = float(L.kl_divergence(mu[perm], lv[perm]))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


# ------------------------------------------------------------------ classifier


def test_ce_perfect():
    assert float(L.classifier_loss([1 - 1e-16, 1e-16], 0)) < 1e-12


@pytest.mark.parametrize("label", [0, 1])
def test_ce_uniform(label):
    assert float(L.classifier_loss([0.5, 0.5], label)) == pytest.approx(math.log(2), abs=1e-15)


def test_ce_monotone():
    losses = [float(L.classifier_loss([p, 1 - p], 0)) for p in (0.9, 0.7, 0.5, 0.2, 0.01)]
    assert all(a < b for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("label", [-1, 2, 0.5])
def test_ce_bad_label(label):
    with pytest.raises(ValueError):
        L.classifier_loss([0.5, 0.5], label)


# ------------------------------------------------------------------ total


def _out(recon, probs, mu, lv):
    return ForwardOutput(np.asarray(recon), np.asarray(probs), LatentGaussian(np.asarray(mu), np.asarray(lv)),
                         np.asarray(mu))


def test_total_all_zero_terms():
    x = np.array([0.1, 0.2])
    br = L.total_loss(x, _out(x, [1.0, 0.0], [0.0], [0.0]), 0)
    assert br.total == pytest.approx(0.0, abs=1e-12)


def test_total_composition_and_linearity():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(5)
    out = _out(rng.standard_normal(5), [0.3, 0.7], rng.standard_normal(3), rng.standard_normal(3))
    b10 = L.total_loss(x, out, 1)
    b20 = L.total_loss(x, out, 1, classifier_weight=20)
    assert b10.classifier_weight == 10
    assert b10.total == 10 * b10.classifier_term + b10.reconstruction_term + b10.kl_term
    assert (b20.total - b20.reconstruction_term - b20.kl_term) == pytest.approx(
        2 * (b10.total - b10.reconstruction_term - b10.kl_term), rel=1e-12)
    assert b10.kl_term >= 0 and b10.reconstruction_term >= 0 and b10.classifier_term >= 0


def test_total_rejects_bad_weight():
    with pytest.raises(ValueError):
        L.total_loss(np.zeros(2), _out(np.zeros(2), [0.5, 0.5], [0.0], [0.0]), 0, classifier_weight=0)


def test_objective_matches_total_loss(toy_params):
    p = randomize(toy_params, 1)
    x = np.random.default_rng(1).standard_normal((3, TOY.input_len))
    y = np.array([0, 1, 1])
    g = M.build_graph(x, p, TOY, rng=4)
    total, parts = L.objective(x, g, y)
    again = L.total_loss(x, g.output(), y)
    assert float(total) == parts.total
    assert parts.total == pytest.approx(again.total, rel=1e-14)


def _composed_loss_error(config, seed):
    params = randomize(M.init_params(config, seed), seed)
    params.values["encoder/log_var/bias"][...] = -0.5
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, config.input_len))
    y = np.array([0, 1, 0])
    eps = rng.standard_normal((3, config.latent_dim))

    def loss_value():
        return L.objective(x, M.build_graph(x, params, config, eps=eps), y)[0]

    params.zero_grad()
    dn.backward(loss_value(), params)
    numeric = numeric_grads(lambda: float(loss_value()), params.values)
    return max_rel_error(params.grads, numeric)


def test_composed_loss_gradient_toy_40():
    assert _composed_loss_error(TOY, 21) < 1e-4


def test_composed_loss_gradient_toy_16():
    cfg = M.ModelConfig(input_len=16, latent_dim=3, n_res_blocks=1, channels=2, kernel_size=3,
                        dense_branch_widths=(5,), decoder_seed_len=2, classifier_hidden=4)
    assert _composed_loss_error(cfg, 22) < 1e-4


def test_single_datapoint_fit_drives_ce_down(toy_params):
    from afvae.train import Adam, TrainConfig

    p = toy_params
    x = np.random.default_rng(30).standard_normal((1, TOY.input_len))
    y = np.array([1])
    opt = Adam(TrainConfig(learning_rate=0.01))
    first = None
    for step in range(200):
        total, parts = L.objective(x, M.build_graph(x, p, TOY, rng=step), y)
        first = parts.classifier_term if first is None else first
        dn.backward(total, p)
        opt.step(p)
    last = L.objective(x, M.build_graph(x, p, TOY, rng=999), y)[1].classifier_term
    assert last <= 0.1 * first
