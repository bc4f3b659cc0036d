import numpy as np
import pytest

from latent_mos import encoder as enc_mod
from latent_mos import engine as E
from latent_mos.batching import collate
from latent_mos.data import Trajectory
from latent_mos.encoder import Encoder, InputError, ode_rnn_encode, sample_latent
from latent_mos.gradcheck import check_encoder, toy_trajectory


def _traj(seed=0, k=6):
    return toy_trajectory(np.random.default_rng(seed), k)


def test_zero_network_gives_prior_like_output():
    enc = Encoder(2, 5, np.random.default_rng(0))
    for p in enc.parameters():
        p.data[...] = 0.0
    out = ode_rnn_encode(enc, _traj())
    assert np.array_equal(out.mu.data, np.zeros((1, 5)))
    assert np.allclose(out.sigma.data, np.log(2.0), rtol=0, atol=1e-15)


def test_single_point_means_one_gru_update_and_no_integration(monkeypatch):
    enc = Encoder(2, 4, np.random.default_rng(1))
    calls = {"ode": 0, "gru": 0}
    real_rk4, real_gru = enc_mod.rk4_mlp, enc.gru.__class__.__call__

    def count_rk4(*a, **k):
        calls["ode"] += 1
        return real_rk4(*a, **k)

    def count_gru(self, x, h):
        calls["gru"] += 1
        return real_gru(self, x, h)
    monkeypatch.setattr(enc_mod, "rk4_mlp", count_rk4)
    monkeypatch.setattr(enc.gru.__class__, "__call__", count_gru)
    tr = _traj(k=6)
    mask = np.zeros(6, bool)
    mask[3] = True
    ode_rnn_encode(enc, tr, mask)
    assert calls == {"ode": 0, "gru": 1}
    ode_rnn_encode(enc, tr, np.ones(6, bool))
    assert calls["gru"] == 7 and calls["ode"] == 5


def test_empty_observation_set_is_rejected():
    enc = Encoder(2, 3, np.random.default_rng(0))
    with pytest.raises(InputError):
        ode_rnn_encode(enc, _traj(), np.zeros(6, bool))


def test_deterministic_replay():
    enc = Encoder(2, 4, np.random.default_rng(2))
    tr = _traj(3)
    a, b = ode_rnn_encode(enc, tr), ode_rnn_encode(enc, tr)
    assert np.array_equal(a.mu.data, b.mu.data) and np.array_equal(a.sigma.data, b.sigma.data)


def test_masked_values_do_not_leak():
    enc = Encoder(2, 4, np.random.default_rng(3))
    tr = _traj(4, 8)
    mask = np.array([1, 0, 1, 1, 0, 0, 1, 0], bool)
    base = ode_rnn_encode(enc, tr, mask)
    vals = tr.values.copy()
    vals[~mask] = np.random.default_rng(9).uniform(-1e3, 1e3, ((~mask).sum(), 2))
    pert = ode_rnn_encode(enc, Trajectory(tr.id, tr.times, vals), mask)
    assert np.array_equal(base.mu.data, pert.mu.data)
    assert np.array_equal(base.sigma.data, pert.sigma.data)


def test_observed_values_do_matter():
    enc = Encoder(2, 4, np.random.default_rng(3))
    tr = _traj(4, 8)
    vals = tr.values.copy()
    vals[0] += 0.5
    assert not np.array_equal(ode_rnn_encode(enc, tr).mu.data,
                              ode_rnn_encode(enc, Trajectory(tr.id, tr.times, vals)).mu.data)


def test_batch_rows_match_single_encodings():
    enc = Encoder(2, 3, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    trs = [_traj(s, 7) for s in range(3)]
    trs = [Trajectory(str(i), trs[0].times, t.values) for i, t in enumerate(trs)]
    masks = [rng.random(7) < 0.5 for _ in trs]
    for m in masks:
        m[2] = True
    out = enc(collate(trs, obs_masks=masks))
    for i, (t, m) in enumerate(zip(trs, masks)):
        single = ode_rnn_encode(enc, t, m)
        assert np.allclose(out.mu.data[i], single.mu.data[0], rtol=0, atol=1e-13)


def test_encoder_finite_differences():
    assert check_encoder(0) < 1e-4


def test_sample_latent_modes():
    enc = Encoder(2, 3, np.random.default_rng(0))
    out = ode_rnn_encode(enc, _traj())
    assert sample_latent(out, None) is out.mu
    a = sample_latent(out, np.random.default_rng(4)).data
    b = sample_latent(out, np.random.default_rng(4)).data
    assert np.array_equal(a, b)
    zero_sigma = enc_mod.EncoderOutput(out.mu, E.as_tensor(np.zeros_like(out.sigma.data)))
    assert np.array_equal(sample_latent(zero_sigma, np.random.default_rng(1)).data, out.mu.data)


def test_sample_latent_monte_carlo_moments():
    out = enc_mod.EncoderOutput(E.as_tensor(np.zeros(10 ** 6)), E.as_tensor(np.ones(10 ** 6)))
    z = sample_latent(out, np.random.default_rng(123)).data
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - 1.0) < 0.01


def test_sample_latent_gradient_flows_to_mu_and_sigma():
    mu = E.Parameter(np.array([0.2, -0.1]), "mu")
    sig = E.Parameter(np.array([0.5, 1.5]), "sig")
    out = enc_mod.EncoderOutput(mu, sig)
    eps = np.random.default_rng(8).standard_normal(2)
    E.backward(E.sum(sample_latent(out, np.random.default_rng(8))))
    assert np.array_equal(mu.grad, np.ones(2))
    assert np.allclose(sig.grad, eps)
