"""Finite-difference gradient checks on small model pieces."""
from __future__ import annotations

import numpy as np

from . import engine as E
from . import groups as Gr
from .batching import collate
from .config import ExperimentConfig
from .data import Trajectory
from .encoder import Encoder
from .engine import Parameter
from .model import LatentMoS
from .training import mse_loss


def check_expert_constructors(seed: int = 0) -> float:
    """Max error over apply_action gradients w.r.t. V, theta, v and gamma."""
    rng = np.random.default_rng(seed)
    m = 4
    V = Parameter(rng.uniform(-1, 1, (m, 2)), "V")
    theta = Parameter(rng.uniform(-1, 1, ()), "theta")
    v = Parameter(rng.uniform(-1, 1, m), "v")
    gamma = Parameter(rng.uniform(0.5, 1.5, m), "gamma")
    z = rng.uniform(-1, 1, m)
    weights = rng.uniform(-1, 1, m)

    def obj(a):
        return E.sum(Gr.apply_action(a, Gr.HomogeneousLatent(z)).z * weights)

    checks = [
        (lambda: obj(Gr.build_rotation(Gr.orthonormalize_2col(V), theta)), [V, theta]),
        (lambda: obj(Gr.build_translation(v)), [v]),
        (lambda: obj(Gr.build_scaling(gamma)), [gamma]),
        (lambda: obj(Gr.compose_actions(Gr.build_rotation(Gr.orthonormalize_2col(V), theta),
                                        Gr.build_scaling(gamma))), [V, theta, gamma]),
        (lambda: obj(Gr.compose_actions(Gr.build_translation(v), Gr.build_scaling(gamma))), [v, gamma]),
    ]
    return max(E.finite_diff_check(f, ps) for f, ps in checks)


def toy_trajectory(rng: np.random.Generator, n_points: int = 4, n: int = 2) -> Trajectory:
    times = np.cumsum(rng.uniform(0.2, 0.6, n_points))
    return Trajectory("toy", times - times[0], rng.uniform(-1, 1, (n_points, n)))


def check_encoder(seed: int = 0, m: int = 4) -> float:
    rng = np.random.default_rng(seed)
    tr = toy_trajectory(rng, 5)
    mask = np.array([True, False, True, False, True])
    enc = Encoder(tr.n, m, rng)
    batch = collate([tr], obs_masks=[mask])
    w1, w2 = rng.uniform(-1, 1, m), rng.uniform(-1, 1, m)

    def f():
        out = enc(batch)
        return E.sum(out.mu * w1) + E.sum(out.sigma * w2)
    return E.finite_diff_check(f, enc.parameters())


def tiny_model(seed: int = 0, m: int = 4, levels=(1, 3), roster=None, k0: int = 2, warmup: int = 10):
    cfg = ExperimentConfig(dataset="custom", m=m, levels=levels, k0=k0, warmup_epochs=warmup,
                           dt_policy="1", **({"roster": roster} if roster else {}))
    return LatentMoS(2, cfg, np.random.default_rng(seed)), cfg


def check_end_to_end(seed: int = 0, m: int = 4, epoch: int = 0, max_entries: int | None = 4) -> float:
    """Reconstruction loss through encoder, 3-step two-level rollout and output head."""
    rng = np.random.default_rng(seed)
    model, _ = tiny_model(seed, m, levels=(1, 3))
    tr = toy_trajectory(rng, 4)
    tr = Trajectory(tr.id, np.arange(4) * 0.3, tr.values)
    batch = collate([tr, Trajectory("b", tr.times, rng.uniform(-1, 1, tr.values.shape))],
                    obs_masks=[np.array([1, 0, 1, 1], bool), np.array([1, 1, 0, 1], bool)])

    def f():
        fr = model.forward(batch, epoch)
        return mse_loss(fr.pred, batch.values, batch.target)
    return E.finite_diff_check(f, model.parameters(), max_entries=max_entries, seed=seed)
