import numpy as np
import pytest

from latent_mos.config import ExperimentConfig, dump_config_text, load_config, parse_config_text
from latent_mos.decoder import ConfigError
from latent_mos.pca import PCADegeneracyError, fit_pca, jacobi_eigh


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 7))
    C = X @ X.T
    w, V = jacobi_eigh(C)
    ref = np.linalg.eigvalsh(C)[::-1]
    assert np.allclose(w, ref, rtol=1e-12)
    assert np.allclose(V.T @ V, np.eye(7), atol=1e-12)
    assert np.allclose(C @ V, V * w, atol=1e-10)


def test_planar_latents_reconstruct_exactly():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    X = rng.standard_normal((200, 2)) @ basis.T + rng.standard_normal(6)
    p = fit_pca(X, 2)
    assert np.abs(p.inverse(p.transform(X)) - X).max() < 1e-9
    assert p.explained_ratio.sum() == pytest.approx(1.0, abs=1e-12)


def test_sign_convention_and_order():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 3)) * [5.0, 1.0, 0.2]
    p = fit_pca(X, 2)
    assert p.explained_variance[0] > p.explained_variance[1]
    for row in p.components:
        assert row[np.argmax(np.abs(row))] > 0
    q = fit_pca(-X, 2)
    assert np.allclose(p.components, q.components, atol=1e-12)


def test_pca_degeneracy():
    with pytest.raises(PCADegeneracyError):
        fit_pca(np.ones((10, 3)))
    with pytest.raises(PCADegeneracyError):
        fit_pca(np.ones((1, 3)))


def test_config_defaults_per_dataset():
    c = ExperimentConfig()
    assert (c.m, c.k0, c.levels, c.K, c.learning_rate, c.warmup_epochs) == (15, 2, (2, 5), 9, 1e-3, 10)
    assert ExperimentConfig(dataset="power_event").m == 30
    assert ExperimentConfig(dataset="lotka").k0 == 4


@pytest.mark.parametrize("bad", [dict(task="forecast"), dict(drop_rate=1.0), dict(k0=10),
                                 dict(loss="l1"), dict(dt_policy="fast"), dict(roster=("shear",)),
                                 dict(levels=())])
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_file_env_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ndataset = glycolytic\nepochs = 12  # trailing\nlevels = 1, 3\nroster = rot, sca*rot\n")
    cfg = load_config(p, environ={})
    assert (cfg.dataset, cfg.epochs, cfg.levels, cfg.roster) == ("glycolytic", 12, (1, 3), ("rot", "sca*rot"))
    cfg = load_config(p, {"epochs": 4}, environ={"LATENT_MOS_EPOCHS": "7", "LATENT_MOS_SEED": "3"})
    assert cfg.epochs == 4 and cfg.seed == 3
    assert load_config(p, environ={"LATENT_MOS_EPOCHS": "7"}).epochs == 7


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\nnonsense\n")
    with pytest.raises(ConfigError, match="unknown"):
        parse_config_text("colour = red\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"epochs": "many"})


def test_config_text_round_trip():
    cfg = ExperimentConfig(dataset="lotka", levels=(1, 2, 4), m=9, roster=("rot", "tra*sca"), seed=5)
    back = ExperimentConfig.from_dict(parse_config_text(dump_config_text(cfg)))
    assert back.to_dict() == cfg.to_dict()
