import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_mos import data as D
from latent_mos import engine as E
from latent_mos import training as T
from latent_mos.config import ExperimentConfig
from latent_mos.engine import ContractError, Parameter


@pytest.fixture(scope="module")
def spiral():
    return D.gen_dataset("spiral", 0)


@pytest.fixture(scope="module")
def small(spiral):
    return spiral.subset(range(10))


def _cfg(**kw):
    base = dict(dataset="spiral", m=4, levels=(1, 2), k0=2, warmup_epochs=2, epochs=3, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- masks

def test_drop_mask_examples():
    rng = np.random.default_rng(0)
    assert T.drop_mask(60, 0.0, rng).all()
    m = T.drop_mask(60, 0.9, rng)
    assert m.sum() == 6 and m[0]
    assert np.array_equal(T.drop_mask(60, 0.9, np.random.default_rng(5)), T.drop_mask(60, 0.9, np.random.default_rng(5)))
    with pytest.raises(ValueError):
        T.drop_mask(10, 1.0, rng)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(0, 0.999), st.integers(0, 2**31 - 1))
def test_drop_mask_count_is_exact(N, rate, seed):
    m = T.drop_mask(N, rate, np.random.default_rng(seed))
    assert m[0]
    assert m.sum() == max(1, int(round((1 - rate) * N)))


def test_task_masks_extrapolation_layout():
    obs, score = T.task_masks(61, "extrapolation", 0.0, np.random.default_rng(0))
    assert obs[:31].all() and not obs[31:].any()
    assert score[31:].all() and not score[:31].any()
    with pytest.raises(ValueError):
        T.task_masks(61, "forecast", 0.0, np.random.default_rng(0))


# ---------------------------------------------------------------- losses

def test_mse_examples():
    x = np.random.default_rng(0).standard_normal((2, 5, 3))
    assert T.mse_loss(x, x).item() == 0.0
    assert T.mse_loss(x + 1.0, x).item() == pytest.approx(1.0, abs=1e-15)
    assert T.mse_loss(np.array(3.0), np.array(1.0)).item() == 4.0
    mask = np.zeros((2, 5), bool)
    mask[0, 1] = True
    y = x.copy()
    y[0, 1] += 2.0
    y[1] += 100.0
    assert T.mse_loss(y, x, mask).item() == pytest.approx(4.0)
    with pytest.raises(ContractError):
        T.mse_loss(x, x, np.zeros((2, 5), bool))
    with pytest.raises(E.DimensionError):
        T.mse_loss(x, x[:, :3])


def test_kl_examples():
    assert T.kl_diag_gaussian(np.zeros(3), np.ones(3)).item() == 0.0
    assert T.kl_diag_gaussian(np.ones(1), np.ones(1)).item() == 0.5
    assert T.kl_diag_gaussian(np.zeros(1), np.array([2.0])).item() == pytest.approx(0.5 * (4 - 1 - np.log(4)))
    assert T.kl_diag_gaussian(np.zeros(1), np.array([2.0])).item() == pytest.approx(0.80685, abs=1e-5)
    with pytest.raises(T.DomainError):
        T.kl_diag_gaussian(np.zeros(2), np.array([1.0, 0.0]))


def _mc_kl(mu, sig, rng, n=10 ** 6):
    z = mu + sig * rng.standard_normal((n, mu.size))
    logq = -0.5 * (((z - mu) / sig) ** 2).sum(1) - np.log(sig).sum()
    logp = -0.5 * (z ** 2).sum(1)
    return float((logq - logp).mean())


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(42)
    for _ in range(10):
        mu = rng.uniform(-1.5, 1.5, 3)
        sig = rng.uniform(0.3, 2.0, 3)
        exact = T.kl_diag_gaussian(mu, sig).item()
        assert abs(_mc_kl(mu, sig, rng) - exact) / exact < 0.01


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 5)), min_size=1, max_size=6))
def test_kl_is_nonnegative(pairs):
    mu, sig = np.array(pairs).T
    assert T.kl_diag_gaussian(mu, sig).item() >= -1e-15


def test_kl_gradient():
    mu = Parameter(np.array([0.3, -1.2]), "mu")
    sig = Parameter(np.array([0.7, 1.4]), "sig")
    assert E.finite_diff_check(lambda: E.sum(T.kl_diag_gaussian(mu, sig)), [mu, sig]) < 1e-6


def test_elbo_examples():
    assert T.elbo_loss(2.0, 3.0, 1.0).item() == 5.0
    assert T.elbo_loss(2.0, 3.0, 0.0).item() == 2.0
    assert T.elbo_loss(2.0, 0.0, 4.0).item() == 2.0
    with pytest.raises(ValueError):
        T.elbo_loss(1.0, 1.0, -1.0)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_parameter():
    p = Parameter(np.array([1.0, -2.0]), "p")
    opt = T.Adam([p])
    p.grad = np.zeros(2)
    T.adam_step(opt)
    assert np.array_equal(p.data, [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-6, 0.3, 250.0])
def test_adam_first_step_magnitude_is_lr(g):
    p = Parameter(np.array([0.5]), "p")
    opt = T.Adam([p], lr=1e-3)
    p.grad = np.array([g])
    opt.step()
    assert 0.5 - p.data[0] == pytest.approx(1e-3, rel=1e-2)


def test_adam_deterministic_over_ten_steps():
    def run():
        rng = np.random.default_rng(0)
        p = Parameter(rng.standard_normal(4), "p")
        opt = T.Adam([p])
        for _ in range(10):
            p.zero_grad()
            E.backward(E.sum(E.square(p - 1.0)))
            opt.step()
        return p.data
    assert np.array_equal(run(), run())


# ---------------------------------------------------------------- training

def test_loss_decreases_over_first_epochs(spiral):
    cfg = ExperimentConfig(dataset="spiral", seed=0, epochs=5)
    st_ = T.prepare(cfg, spiral)
    T.train_epochs(st_, spiral, 5)
    assert all(b < a for a, b in zip(st_.losses, st_.losses[1:]))


def test_zero_epochs_reports_initial_loss(small):
    res = T.run_training(_cfg(epochs=0), small)
    assert res.report["epochs_completed"] == 0
    assert res.report["losses"] == []
    assert np.isfinite(res.report["init_loss"])


def test_divergence_guard(small, monkeypatch):
    st_ = T.prepare(_cfg(), small)
    real = T._loss

    def blowup(st, batch, epoch):
        loss, fr = real(st, batch, epoch)
        return loss * 1e9 if epoch == 1 else loss, fr
    monkeypatch.setattr(T, "_loss", blowup)
    with pytest.raises(T.DivergenceError) as info:
        T.train_epochs(st_, small, 3)
    assert info.value.epoch == 1


def test_sparsity_holds_every_step(small):
    st_ = T.prepare(_cfg(epochs=4, warmup_epochs=1, k0=1), small)
    T.train_epochs(st_, small, 4)
    assert st_.violations == 0 and st_.worst_sum_error < 1e-12


def test_elbo_mode_trains(small):
    st_ = T.prepare(_cfg(loss="elbo"), small)
    T.train_epochs(st_, small, 2)
    assert all(np.isfinite(st_.losses))


def test_elbo_with_zero_beta_and_no_sampling_equals_mse(small):
    a = T.prepare(_cfg(), small)
    b = T.prepare(_cfg(loss="elbo", beta=0.0), small)
    batch = T.train_batch(a, D.normalize(small, a.stats))
    mse, _ = T._loss(a, batch, 0)
    fr = b.model.forward(batch, 0, None)
    recon = T.mse_loss(fr.pred, batch.values, batch.target & batch.present)
    kl = E.mean(T.kl_diag_gaussian(fr.enc.mu, fr.enc.sigma))
    assert T.elbo_loss(recon, kl, 0.0).item() == mse.item()


# ---------------------------------------------------------------- evaluation

def test_evaluate_is_deterministic(small):
    st_ = T.prepare(_cfg(), small)
    a = T.evaluate(st_.model, small, st_.stats, "interpolation", 0.9, 3)
    b = T.evaluate(st_.model, small, st_.stats, "interpolation", 0.9, 3)
    assert a == b


def test_evaluate_at_zero_drop_matches_training_loss(small):
    st_ = T.prepare(_cfg(drop_rate=0.0), small)
    train = small.subset(st_.train_idx)
    res = T.evaluate_full(st_.model, train, st_.stats, "interpolation", 0.0, 0, epoch=0)
    loss, _ = T._loss(st_, T.train_batch(st_, D.normalize(small, st_.stats)), 0)
    assert res.mse_normalized == pytest.approx(loss.item(), rel=1e-12)


class _Oracle:
    """Predicts the normalized truth exactly."""

    def __init__(self, model):
        self.model, self.cfg = model, model.cfg

    def forward(self, batch, epoch, rng=None):
        fr = self.model.forward(batch, epoch, rng)
        fr.pred = E.as_tensor(batch.values)
        return fr


def test_perfect_model_scores_zero(small):
    st_ = T.prepare(_cfg(), small)
    for task in ("interpolation", "extrapolation"):
        assert T.evaluate(_Oracle(st_.model), small, st_.stats, task, 0.9, 0) == 0.0


def test_constant_mean_baseline_is_test_variance(spiral):
    test = spiral.subset(range(60, 80))
    v = np.concatenate([t.values for t in test.trajectories])
    assert T.constant_mean_baseline(test, test, "interpolation") == pytest.approx(v.var(axis=0).mean(), rel=1e-12)


def test_raw_and_normalized_units(small):
    st_ = T.prepare(_cfg(), small)
    r = T.evaluate_full(st_.model, small, st_.stats, "interpolation", 0.5, 0)
    err = (r.forward.pred.data - r.batch.values) ** 2 * st_.stats["std"] ** 2
    assert r.mse == pytest.approx(err.mean(), rel=1e-12)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_continues_bitwise(small, tmp_path):
    cfg = _cfg(epochs=6)
    ref = T.prepare(cfg, small)
    T.train_epochs(ref, small, 6)

    st_ = T.prepare(cfg, small)
    T.train_epochs(st_, small, 3)
    T.save_checkpoint(st_, tmp_path / "c.json")
    back = T.load_checkpoint(tmp_path / "c.json")
    assert back.epoch == 3 and back.losses == st_.losses
    T.train_epochs(back, small, 3)
    assert back.losses == ref.losses
    for (n1, p1), (n2, p2) in zip(ref.model.named_parameters(), back.model.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("not json")
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(p)
    p.write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(p)
    with pytest.raises(FileNotFoundError):
        T.load_checkpoint(tmp_path / "missing.json")


def test_run_training_is_deterministic(small):
    a = T.run_training(_cfg(), small)
    b = T.run_training(_cfg(), small)
    assert a.state.losses == b.state.losses
    assert T.checkpoint_dict(a.state) == T.checkpoint_dict(b.state)
