"""Encoder + decoder wiring for a full forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batching import Batch
from .config import ExperimentConfig
from .decoder import Decoder, LatentTrajectory, gather_times, micro_steps
from .encoder import Encoder, EncoderOutput, sample_latent
from .engine import Tensor
from .nn import Module


@dataclass
class ForwardResult:
    pred: Tensor               # (B, G, n)
    enc: EncoderOutput
    latent: LatentTrajectory


class LatentMoS(Module):
    def __init__(self, n: int, cfg: ExperimentConfig, rng: np.random.Generator):
        self.encoder = Encoder(n, cfg.m, rng)
        self.decoder = Decoder(n, cfg.m, rng, levels=cfg.levels, roster=cfg.roster,
                               k0=cfg.k0, warmup=cfg.warmup_epochs, hidden=cfg.hidden)
        self.n = n
        self.cfg = cfg

    def n_micro(self, batch: Batch) -> int:
        per = 2.0 if self.cfg.dt_policy == "auto" else float(self.cfg.dt_policy)
        return micro_steps(len(batch.times) - 1, self.cfg.levels, per)

    def forward(self, batch: Batch, epoch: int, rng: np.random.Generator | None = None,
                refine: int = 1, keep_params: bool = False) -> ForwardResult:
        enc = self.encoder(batch)
        z0 = sample_latent(enc, rng)
        t0, tN = float(batch.times[0]), float(batch.times[-1])
        if tN <= t0:
            tN = t0 + 1.0
        latent = self.decoder.rollout(z0, t0, tN, self.n_micro(batch), epoch, refine, keep_params)
        pred = self.decoder.decode(gather_times(latent, batch.times))
        return ForwardResult(pred, enc, latent)

