import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_mos import _kernels as K
from latent_mos import engine as E
from latent_mos import groups as Gr
from latent_mos import decoder as Dm
from latent_mos.engine import ContractError
from latent_mos.gradcheck import check_end_to_end


def _constant_net(mlp, raw):
    """Make an MLP ignore its input and emit ``raw``."""
    for p in mlp.weights():
        p.data[...] = 0.0
    mlp.l3.b.data[...] = raw


def _single_level(label, d, L, raw, rng=None):
    lv = Dm.Level(d, L, [label], 4, 1, 0, rng or np.random.default_rng(0), "lv")
    _constant_net(lv.experts[0].net, raw)
    return lv


# ---------------------------------------------------------------- pieces

def test_subinterval_boundaries():
    assert np.array_equal(Dm.subinterval_boundaries(0, 10, 5), [0, 2, 4, 6, 8, 10])
    assert np.array_equal(Dm.subinterval_boundaries(0, 1, 1), [0, 1])
    with pytest.raises(ContractError):
        Dm.subinterval_boundaries(0, 1, 0)


def _gate(K_, k0, warmup=10, d=2):
    return Dm.GatingNet(d, 3, K_, k0, warmup, np.random.default_rng(0))


def test_gate_examples():
    g = _gate(4, 2)
    _constant_net(g.net, 0.0)
    assert np.allclose(Dm.gate_weights(g, 0.3, np.ones(2), epoch=0).data, 0.25, rtol=0, atol=1e-15)
    g = _gate(3, 1)
    _constant_net(g.net, np.log([0.5, 0.25, 0.25]))
    assert np.allclose(Dm.gate_weights(g, 0.0, np.ones(2), epoch=0).data, [0.5, 0.25, 0.25])
    assert np.array_equal(Dm.gate_weights(g, 0.0, np.ones(2), epoch=10).data, [1, 0, 0])
    full = _gate(3, 3)
    z = np.random.default_rng(1).standard_normal((5, 2))
    assert np.array_equal(Dm.gate_weights(full, 0.5, z, 50).data, Dm.gate_weights(full, 0.5, z, 0).data)
    with pytest.raises(ValueError):
        Dm.gate_weights(full, 0.5, z, -1)


def test_gate_ties_go_to_lower_index():
    g = _gate(4, 2, warmup=0)
    _constant_net(g.net, [0.0, 1.0, 1.0, 1.0])
    w = Dm.gate_weights(g, 0.0, np.zeros(2), 0).data
    assert np.array_equal(w, [0, 0.5, 0.5, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_gate_sparsity_and_normalization(K_, k0, seed):
    k0 = min(k0, K_)
    g = Dm.GatingNet(3, 4, K_, k0, 2, np.random.default_rng(seed))
    z = np.random.default_rng(seed + 1).standard_normal((6, 3)) * 3
    w = Dm.gate_weights(g, 0.7, z, 5).data
    assert np.all((w > 0).sum(-1) == k0)
    assert np.abs(w.sum(-1) - 1).max() < 1e-12


def test_gate_gradient_only_through_survivors():
    g = _gate(4, 1, warmup=0)
    z = E.Parameter(np.array([[0.3, -0.2]]), "z")
    w = Dm.gate_weights(g, 0.1, z, 0)
    E.backward(E.sum(w * np.arange(4.0)))
    # a single survivor renormalized to exactly 1 has zero derivative
    assert np.allclose(z.grad, 0.0, atol=1e-15)


def test_rescale_norm_examples():
    z = np.array([0.6, 0.8])
    assert np.array_equal(Dm.rescale_norm(z).data, z)
    out = Dm.rescale_norm(np.array([3.0, 0.0, 0.0])).data
    assert np.allclose(out, [1.5, 0, 0])
    out = Dm.rescale_norm(np.array([0.06, 0.08])).data
    assert np.linalg.norm(out) == pytest.approx(0.5) and np.allclose(out / 0.5, [0.6, 0.8])
    assert np.array_equal(Dm.rescale_norm(np.zeros(3)).data, [0.5, 0, 0])


def test_rescale_norm_gradient():
    z = E.Parameter(np.array([[2.0, 1.0], [0.1, 0.05], [0.7, 0.2]]), "z")
    w = np.random.default_rng(0).standard_normal((3, 2))
    assert E.finite_diff_check(lambda: E.sum(Dm.rescale_norm(z) * w), [z]) < 1e-4


def test_block_sizes(caplog):
    assert Dm.block_sizes(4, 2) == [2, 2]
    with caplog.at_level(logging.INFO):
        assert Dm.block_sizes(15, 2) == [8, 7]
    assert "not divisible" in caplog.text
    with pytest.raises(Dm.ConfigError):
        Dm.block_sizes(2, 3)


def test_parse_expert():
    assert Dm.parse_expert("rot*sca") == ("rot", "sca")
    assert Dm.parse_expert("tra") == ("tra",)
    for bad in ("rot*sca*tra", "shear", ""):
        with pytest.raises(Dm.ConfigError):
            Dm.parse_expert(bad)
    with pytest.raises(Dm.ConfigError):
        Dm.Expert("rot", 1, 3, np.random.default_rng(0), "e")


def _factors(a):
    if a.kind == "composed":
        return _factors(a.params["first"]) + _factors(a.params["second"])
    return [a]


def test_expert_parameters_are_bounded():
    rng = np.random.default_rng(0)
    feat = np.concatenate([rng.uniform(0, 1, (50, 1)), rng.standard_normal((50, 3)) * 50], axis=1)
    for lab in Dm.DEFAULT_ROSTER:
        ex = Dm.Expert(lab, 3, 4, rng, "e")
        for p in ex.parameters():
            p.data *= 30.0
        for f in _factors(ex(feat)):
            if f.kind == "rotation":
                assert np.abs(E.as_tensor(f.params["theta"]).data).max() <= Gr.ROTATION_BOUND
            elif f.kind == "translation":
                assert np.linalg.norm(E.as_tensor(f.params["v"]).data, axis=-1).max() <= Gr.TRANSLATION_BOUND
            else:
                g = E.as_tensor(f.params["gamma"]).data
                assert g.min() >= 0.5 and g.max() <= 1.5


# ---------------------------------------------------------------- rollouts

def test_identity_rotation_rollout_is_constant():
    for L in (1, 3, 4):
        lv = _single_level("rot", 2, L, np.zeros(5))
        z0 = np.array([[0.6, 0.8]])
        Z, rec = Dm.rollout_level(lv, z0, 5, epoch=20)
        assert Z.shape == (1, 5 * L + 1, 2)
        assert np.allclose(Z.data, 0.6 * np.array([1, 0]) + 0.8 * np.array([0, 1]), atol=1e-15)
        assert rec.weights.shape == (L, 1, 1)


def test_rotation_rollout_accumulates_angle():
    raw = np.zeros(5)
    raw[4] = 0.3
    theta = 0.6 * np.tanh(0.3)
    lv = _single_level("rot", 2, 2, raw)
    z0 = np.array([[1.0, 0.0]])
    Z, _ = Dm.rollout_level(lv, z0, 7, epoch=0)
    ang = np.unwrap(np.arctan2(Z.data[0, :, 1], Z.data[0, :, 0]))
    assert np.allclose(ang, theta * np.arange(15), atol=1e-12)


def test_rotation_rollout_is_isometric_in_higher_dimension():
    rng = np.random.default_rng(4)
    lv = _single_level("rot", 5, 1, rng.standard_normal(11))
    z0 = rng.standard_normal((1, 5))
    z0 /= np.linalg.norm(z0)
    Z, _ = Dm.rollout_level(lv, z0, 40, epoch=0)
    norms = np.linalg.norm(Z.data[0], axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-9


def test_scaling_rollout_is_geometric():
    raw = np.array([0.4, -0.2, 0.0])
    gam = 1 + 0.5 * np.tanh(raw)
    lv = _single_level("sca", 3, 1, raw)
    z0 = np.array([[0.5, 0.6, 0.3]])
    Z, _ = Dm.rollout_level(lv, z0, 6, epoch=0)
    assert np.allclose(Z.data[0], z0 * gam ** np.arange(7)[:, None], rtol=1e-13)


def test_fractional_refinement_reproduces_nominal_steps():
    raw = np.zeros(5)
    raw[4] = -0.5
    lv = _single_level("rot", 2, 1, raw)
    z0 = np.array([[0.3, 0.9]])
    coarse, _ = Dm.rollout_level(lv, z0, 4, 0)
    fine, _ = Dm.rollout_level(lv, z0, 12, 0, fraction=1 / 3)
    assert np.allclose(fine.data[:, ::3], coarse.data, atol=1e-13)


def test_non_commuting_composition_splits_first_order():
    a = Gr.compose_actions(Gr.build_translation(np.array([0.1, 0.0])), Gr.build_scaling(np.array([1.2, 0.9])))
    half = Dm.micro_action(a, 0.5)
    expect = Gr.compose_actions(Gr.fractional_action(a.params["first"], 0.5),
                                Gr.fractional_action(a.params["second"], 0.5))
    assert np.allclose(half.matrix(), expect.matrix())
    assert Dm.micro_action(a, 1.0) is a


def test_piecewise_constancy_and_trailing_coordinate():
    rng = np.random.default_rng(2)
    dec = Dm.Decoder(2, 4, rng, levels=(2, 3), k0=2, warmup=0)
    z0 = rng.standard_normal((3, 4))
    traj = dec.rollout(z0, 0.0, 1.0, 12, epoch=5, keep_params=True)
    assert traj.z.shape == (3, 13, 4)
    assert np.all(traj.homogeneous()[..., -1] == 1.0)
    assert np.allclose(np.diff(traj.times), 1 / 12)
    for rec, L in zip(traj.levels, (2, 3)):
        assert rec.weights.shape == (L, 3, 9)
        assert np.all((rec.weights > 0).sum(-1) == 2)
        assert len(rec.params) == L


def test_mixed_step_equals_mos_step():
    rng = np.random.default_rng(3)
    lv = Dm.Level(3, 1, Dm.DEFAULT_ROSTER, 4, 3, 0, rng, "lv")
    z = Dm.rescale_norm(rng.standard_normal((2, 3)))
    feat = Dm._features(0.0, z)
    w = Dm.gate_weights(lv.gate, 0.0, z, 0)
    acts = [ex(feat) for ex in lv.experts]
    A, b = Dm.mix_actions(acts, w)
    fused = K.affine_rollout(A, b, z, 1).data[:, 1]
    ref = Gr.mos_step(Gr.HomogeneousLatent(z), acts, w).z.data
    assert np.allclose(fused, ref, atol=1e-14)


def test_single_level_equals_rollout_level():
    rng = np.random.default_rng(5)
    dec = Dm.Decoder(2, 4, rng, levels=(3,))
    z0 = rng.standard_normal((2, 4))
    traj = dec.rollout(z0, 0.0, 2.0, 6, epoch=0)
    Z, _ = Dm.rollout_level(dec.levels[0], z0, 2, epoch=0)
    assert np.array_equal(traj.z.data, Z.data)


def test_two_levels_concatenate_blocks():
    rng = np.random.default_rng(6)
    dec = Dm.Decoder(2, 4, rng, levels=(1, 2))
    z0 = rng.standard_normal((1, 4))
    traj = dec.rollout(z0, 0.0, 1.0, 4, epoch=0)
    Z0, _ = Dm.rollout_level(dec.levels[0], z0[:, :2], 4, 0)
    Z1, _ = Dm.rollout_level(dec.levels[1], z0[:, 2:], 2, 0)
    assert np.array_equal(traj.z.data, np.concatenate([Z0.data, Z1.data], -1))


def test_uneven_blocks_for_odd_latent():
    dec = Dm.Decoder(2, 15, np.random.default_rng(0), levels=(2, 5))
    assert [lv.d for lv in dec.levels] == [8, 7]
    traj = dec.rollout(np.random.default_rng(1).standard_normal((2, 15)), 0.0, 6.0, 120, epoch=0)
    assert traj.z.shape == (2, 121, 15)


def test_rollout_contracts():
    dec = Dm.Decoder(2, 4, np.random.default_rng(0), levels=(2, 3))
    with pytest.raises(ContractError):
        dec.rollout(np.zeros((1, 4)), 0.0, 1.0, 7, 0)
    with pytest.raises(E.DimensionError):
        dec.rollout(np.zeros((1, 5)), 0.0, 1.0, 6, 0)


def test_micro_steps():
    assert Dm.micro_steps(60, (2, 5)) == 120
    assert Dm.micro_steps(7, (2, 5)) == 20
    assert Dm.micro_steps(3, (1, 3)) == 6
    assert Dm.micro_steps(3, (1, 3), per_interval=1.0) == 3


# ---------------------------------------------------------------- observation head

def test_decode_observation():
    rng = np.random.default_rng(0)
    dec = Dm.Decoder(3, 4, rng, levels=(1,))
    assert dec.decode(rng.standard_normal((5, 4))).shape == (5, 3)
    for p in dec.head.weights():
        p.data[...] = 0.0
    dec.head.l3.b.data[...] = [1.0, -2.0, 0.5]
    assert np.array_equal(dec.decode(rng.standard_normal((2, 4))).data, [[1, -2, 0.5]] * 2)
    with pytest.raises(E.DimensionError):
        dec.decode(np.zeros((1, 3)))


def test_decode_observation_gradient():
    rng = np.random.default_rng(1)
    dec = Dm.Decoder(2, 4, rng, levels=(1,))
    z = E.Parameter(rng.standard_normal((3, 4)), "z")
    w = rng.standard_normal((3, 2))
    assert E.finite_diff_check(lambda: E.sum(dec.decode(z) * w), [z, *dec.head.weights()]) < 1e-4


def test_gather_times():
    z = E.as_tensor(np.arange(10.0).reshape(1, 5, 2))
    traj = Dm.LatentTrajectory(np.linspace(0, 1, 5), z, [])
    assert np.array_equal(Dm.gather_times(traj, np.array([0.0, 0.5, 1.0])).data[0], [[0, 1], [4, 5], [8, 9]])
    assert np.allclose(Dm.gather_times(traj, np.array([0.125])).data[0], [[1, 2]])
    with pytest.raises(ContractError):
        Dm.gather_times(traj, np.array([1.3]))


@pytest.mark.parametrize("epoch", [0, 20])
def test_end_to_end_finite_differences(epoch):
    assert check_end_to_end(0, epoch=epoch, max_entries=3) < 1e-4
