"""Acceptance criteria 1-9; each test records one pass/fail line (see conftest)."""
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from latent_mos import cli
from latent_mos import data as D
from latent_mos import training as T
from latent_mos.config import ExperimentConfig
from latent_mos.gradcheck import check_encoder, check_end_to_end, check_expert_constructors

BUDGET_SECONDS = 30 * 60
GLYCOLYTIC_EPOCHS = 300


def _train(**kw):
    cfg = ExperimentConfig(dataset=kw.pop("dataset", "spiral"), seed=0, **kw)
    ds = D.gen_dataset(cfg.dataset, cfg.seed)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        res = T.run_training(cfg, ds)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def spiral_interp():
    return _train(task="interpolation")


def test_criterion_1_algebraic_suite(criterion, capsys):
    t0 = time.perf_counter()
    code = cli.main(["verify", "--profile", "default", "--seed", "0"])
    secs = time.perf_counter() - t0
    out = capsys.readouterr().out
    summary = out.strip().splitlines()[-1]
    ok = criterion(1, code == 0 and secs < 60, f"{summary}; wall {secs:.1f}s (limit 60s)")
    assert ok, out


def test_criterion_2_gradients(criterion):
    t0 = time.perf_counter()
    errs = {"constructors": check_expert_constructors(0), "encoder": check_encoder(0),
            "end_to_end": check_end_to_end(0, m=4, epoch=0, max_entries=4)}
    secs = time.perf_counter() - t0
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items()) + f"; wall {secs:.1f}s (limit 120s)"
    assert criterion(2, worst < 1e-4 and secs < 120, detail), detail


def test_criterion_3_integration(criterion):
    x0 = np.array([1.0, 0.0])
    tr = D.simulate_ode(D.spiral_field, x0, 100, 0.01)
    err = np.abs(tr.values - D.spiral_closed_form(x0, tr.times)).max()

    def end_err(dt):
        tr = D.simulate_ode(D.spiral_field, x0, round(1 / dt), dt)
        return np.abs(tr.values[-1] - D.spiral_closed_form(x0, 1.0)).max()
    ratio = end_err(0.02) / end_err(0.01)
    drift = max(np.abs(D.simulate_ode(f, p, 200, 0.1).values - np.asarray(p)).max()
                for f, p in [(D.glycolytic_field, D.GLYCOLYTIC_FIXED_POINT), (D.lotka_field, D.LOTKA_FIXED_POINT)])
    ok = err < 1e-8 and 12 <= ratio <= 20 and drift < 1e-9
    detail = f"max error {err:.2e} (<1e-8), halving ratio {ratio:.2f} (in [12, 20]), fixed-point drift {drift:.1e} (<1e-9)"
    assert criterion(3, ok, detail), detail


@pytest.mark.slow
def test_criterion_4_spiral_interpolation(criterion, spiral_interp):
    res, secs = spiral_interp
    f = res.report["final"]
    gain = f["baseline_test_mse"] / f["test_mse"]
    ok = f["test_mse"] <= 6e-2 and gain >= 5 and secs < BUDGET_SECONDS
    detail = (f"test MSE {f['test_mse']:.4g} (<=0.06), baseline {f['baseline_test_mse']:.4g} "
              f"({gain:.1f}x, need >=5x), {res.state.epoch} epochs in {secs:.0f}s")
    assert criterion(4, ok, detail), detail


@pytest.mark.slow
def test_criterion_5_spiral_extrapolation(criterion):
    res, secs = _train(task="extrapolation")
    f = res.report["final"]
    ok = f["test_mse"] <= 2e-2 and secs < BUDGET_SECONDS
    detail = f"test MSE {f['test_mse']:.4g} (<=0.02), baseline {f['baseline_test_mse']:.4g}, {secs:.0f}s"
    assert criterion(5, ok, detail), detail


@pytest.mark.slow
def test_criterion_6_glycolytic_gates(criterion):
    res, secs = _train(dataset="glycolytic", epochs=GLYCOLYTIC_EPOCHS)
    g = res.report["gates"]
    sp = g["sparsity"]
    top = g["top_expert"]
    ok = (sp["violations_training"] == 0 and sp["violations_eval"] == 0 and sp["max_sum_error"] < 1e-12
          and len(g["histogram"]["counts"]) == len(g["labels"]))
    detail = (f"sparsity violations {sp['violations_training']}+{sp['violations_eval']}, "
              f"max |sum-1| {sp['max_sum_error']:.1e}; top expert {top['label']} "
              f"(mean weight {top['mean_weight']:.3f}, report only); test MSE "
              f"{res.report['final']['test_mse']:.4g} after {GLYCOLYTIC_EPOCHS} epochs, {secs:.0f}s")
    assert criterion(6, ok, detail), detail


def test_criterion_7_determinism(criterion, tmp_path):
    args = ["train", "--dataset", "spiral", "--epochs", "15", "--seed", "3", "--threads", "1"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
    ca = (tmp_path / "a" / "checkpoint.json").read_bytes()
    cb = (tmp_path / "b" / "checkpoint.json").read_bytes()
    la = T.load_checkpoint(tmp_path / "a" / "checkpoint.json").losses
    lb = T.load_checkpoint(tmp_path / "b" / "checkpoint.json").losses
    ok = ca == cb and la == lb
    detail = f"checkpoints byte-identical: {ca == cb}; final losses {la[-1]!r} vs {lb[-1]!r}"
    assert criterion(7, ok, detail), detail


def test_criterion_8_kl_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        mu = rng.uniform(-2, 2, 4)
        sig = rng.uniform(0.2, 2.5, 4)
        exact = T.kl_diag_gaussian(mu, sig).item()
        z = mu + sig * rng.standard_normal((10 ** 6, 4))
        mc = float((-0.5 * (((z - mu) / sig) ** 2).sum(1) - np.log(sig).sum() + 0.5 * (z ** 2).sum(1)).mean())
        worst = max(worst, abs(mc - exact) / exact)
    detail = f"worst relative error {worst:.2e} over 10 draws (<1e-2)"
    assert criterion(8, worst < 0.01, detail), detail


@pytest.mark.slow
def test_criterion_9_translation_only_ablation(criterion, spiral_interp):
    full = spiral_interp[0].report["final"]["test_mse"]
    res, secs = _train(task="interpolation", roster=("tra",))
    abl = res.report["final"]["test_mse"]
    ratio = abl / full
    detail = f"translation-only MSE {abl:.4g} vs full roster {full:.4g} ({ratio:.1f}x, need >=3x), {secs:.0f}s"
    assert criterion(9, ratio >= 3 and secs < BUDGET_SECONDS, detail), detail
