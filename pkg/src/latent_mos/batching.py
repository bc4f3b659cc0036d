"""Collate trajectories onto a shared (union) time grid with masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    times: np.ndarray      # (G,)
    values: np.ndarray     # (B, G, n); zero wherever a trajectory has no point
    present: np.ndarray    # (B, G) trajectory has a value at this grid time
    obs: np.ndarray        # (B, G) visible to the encoder
    target: np.ndarray     # (B, G) scored by the loss
    ids: list

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def span(self) -> float:
        s = float(self.times[-1] - self.times[0])
        return s if s > 0 else 1.0

    def encoder_values(self) -> np.ndarray:
        """Values with every unobserved entry replaced by 0 so placeholders cannot leak."""
        return np.where(self.obs[..., None], self.values, 0.0)


def collate(trajs, obs_masks=None, target_masks=None) -> Batch:
    trajs = list(trajs)
    if not trajs:
        raise ValueError("collate: empty trajectory list")
    first = trajs[0].times
    if all(len(t.times) == len(first) and np.array_equal(t.times, first) for t in trajs):
        grid = first.copy()
        pos = [np.arange(len(first))] * len(trajs)
    else:
        grid = np.unique(np.concatenate([t.times for t in trajs]))
        pos = [np.searchsorted(grid, t.times) for t in trajs]
    B, G, n = len(trajs), len(grid), trajs[0].n
    values = np.zeros((B, G, n))
    present = np.zeros((B, G), dtype=bool)
    obs = np.zeros((B, G), dtype=bool)
    target = np.zeros((B, G), dtype=bool)
    for i, (tr, p) in enumerate(zip(trajs, pos)):
        values[i, p] = tr.values
        present[i, p] = True
        om = tr.mask if obs_masks is None else obs_masks[i]
        tm = np.ones(len(p), dtype=bool) if target_masks is None else target_masks[i]
        obs[i, p] = np.asarray(om, dtype=bool)
        target[i, p] = np.asarray(tm, dtype=bool)
    return Batch(grid, values, present, obs, target, [t.id for t in trajs])
