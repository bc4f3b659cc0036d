"""ODE-RNN encoder producing a diagonal Gaussian posterior over the initial latent."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from ._kernels import rk4_mlp
from .batching import Batch, collate
from .engine import Tensor
from .integrate import IntegrationError, rk4_step  # noqa: F401  (re-export)
from .nn import MLP, Linear, Module


class InputError(ValueError):
    pass


@dataclass
class EncoderOutput:
    mu: Tensor
    sigma: Tensor


class DeepGRUCell(Module):
    """GRU whose update, reset and candidate maps are each a two-hidden-layer tanh MLP."""

    def __init__(self, n_in: int, m: int, rng: np.random.Generator, name: str = "gru"):
        self.update = MLP(n_in + m, m, m, rng, f"{name}.update")
        self.reset = MLP(n_in + m, m, m, rng, f"{name}.reset")
        self.cand = MLP(n_in + m, m, m, rng, f"{name}.cand")
        self.m = m

    def __call__(self, x, h) -> Tensor:
        xh = E.concat([x, h], axis=-1)
        u = E.sigmoid(self.update(xh))
        r = E.sigmoid(self.reset(xh))
        c = E.tanh(self.cand(E.concat([x, r * h], axis=-1)))
        return h + u * (c - h)


class OdeFunc(Module):
    def __init__(self, m: int, rng: np.random.Generator, name: str = "odefunc"):
        self.net = MLP(m, m, m, rng, name)

    def __call__(self, h, t=None) -> Tensor:
        return self.net(h)

    def weights(self):
        return self.net.weights()


class Encoder(Module):
    """Reads observations last-to-first; returns (mu, sigma) for z(t0).

    The GRU input is the observation plus the normalized gap to the previously
    read (later) observation.  Between observations the hidden state flows
    backward in time under the learned ODE using fixed RK4 micro-steps.
    """

    def __init__(self, n: int, m: int, rng: np.random.Generator):
        self.gru = DeepGRUCell(n + 1, m, rng, "encoder.gru")
        self.ode = OdeFunc(m, rng, "encoder.ode")
        self.head = Linear(m, 2 * m, rng, "encoder.head")
        self.n, self.m = n, m

    def __call__(self, batch: Batch) -> EncoderOutput:
        obs = batch.obs
        if not np.all(obs.any(axis=1)):
            bad = [batch.ids[i] for i in np.flatnonzero(~obs.any(axis=1))]
            raise InputError(f"encoder: no observed points in trajectories {bad}")
        B, G = obs.shape
        t = batch.times
        span = batch.span
        dt_enc = span / (4 * max(G - 1, 1))
        X = batch.encoder_values()
        gaps = _gap_features(t, obs) / span

        seen = np.zeros(B, dtype=bool)
        h = E.as_tensor(np.zeros((B, self.m)))
        for g in range(G - 1, -1, -1):
            if g < G - 1:
                active = seen & obs[:, : g + 1].any(axis=1)
                if active.any():
                    gap = t[g + 1] - t[g]
                    steps = max(1, math.ceil(gap / dt_enc - 1e-9))
                    h = rk4_mlp(h, self.ode.weights(), gap / steps, steps, active, sign=-1.0)
            col = obs[:, g]
            if not col.any():
                continue
            x = E.as_tensor(np.concatenate([X[:, g], gaps[:, g, None]], axis=1))
            h_new = self.gru(x, h)
            h = h_new if col.all() else E.where(col[:, None], h_new, h)
            seen |= col
        out = self.head(h)
        mu = out[:, : self.m]
        sigma = E.softplus(out[:, self.m:])
        return EncoderOutput(mu, sigma)


def _gap_features(t: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Time from each observation to the row's next observation (0 for the last)."""
    B, G = obs.shape
    out = np.zeros((B, G))
    nxt = np.full(B, np.nan)
    for g in range(G - 1, -1, -1):
        col = obs[:, g]
        out[col, g] = np.where(np.isnan(nxt[col]), 0.0, nxt[col] - t[g])
        nxt[col] = t[g]
    return out


def ode_rnn_encode(encoder: Encoder, traj, mask=None) -> EncoderOutput:
    """Encode a single trajectory under ``mask`` (defaults to its own mask)."""
    m = traj.mask if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        raise InputError(f"encoder: trajectory {traj.id} has no observed points")
    return encoder(collate([traj], obs_masks=[m]))


def sample_latent(out: EncoderOutput, rng: np.random.Generator | None) -> Tensor:
    """Reparameterized draw mu + sigma * eps; ``rng=None`` returns mu."""
    if rng is None:
        return out.mu
    eps = rng.standard_normal(out.mu.shape)
    return out.mu + out.sigma * eps
