"""Mixture-of-symmetries decoder: gated expert actions rolled out level by level."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from . import groups as Gr
from ._kernels import affine_rollout
from .engine import ContractError, Tensor
from .nn import MLP, Module

log = logging.getLogger(__name__)

FIRST_ORDER = ("rot", "tra", "sca")
DEFAULT_ROSTER = ("rot", "tra", "sca", "rot*sca", "sca*rot", "rot*tra", "tra*rot", "sca*tra", "tra*sca")
DEFAULT_LEVELS = (2, 5)
DEFAULT_WARMUP = 10


class ConfigError(ValueError):
    pass


def parse_expert(label: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in label.replace("·", "*").split("*"))
    if not 1 <= len(parts) <= 2 or any(p not in FIRST_ORDER for p in parts):
        raise ConfigError(f"unknown expert {label!r}; use rot, tra, sca or an ordered pair like rot*sca")
    return parts


def _raw_size(kind: str, d: int) -> int:
    return 2 * d + 1 if kind == "rot" else d


def subinterval_boundaries(t0: float, tN: float, L: int) -> np.ndarray:
    if L < 1:
        raise ContractError(f"subinterval count must be >= 1, got {L}")
    if not tN > t0:
        raise ContractError(f"need tN > t0, got ({t0}, {tN})")
    return t0 + np.arange(L + 1) * ((tN - t0) / L)


def block_sizes(m: int, S: int) -> list[int]:
    """Split m features into S blocks, as evenly as possible (larger blocks first)."""
    if S < 1 or S > m:
        raise ConfigError(f"cannot split m={m} into S={S} blocks")
    q, r = divmod(m, S)
    sizes = [q + 1] * r + [q] * (S - r)
    if r:
        log.info("m=%d is not divisible by S=%d; using uneven blocks %s", m, S, sizes)
    return sizes


def rescale_norm(z) -> Tensor:
    """Clamp each row's norm into [0.5, 1.5]; exact zero rows map to 0.5 * e1."""
    z = E.as_tensor(z)
    n = np.sqrt((z.data ** 2).sum(-1, keepdims=True))
    inside = (n > 0.5) & (n < 1.5)
    if inside.all():
        return z
    target = np.where(n >= 1.5, 1.5, 0.5)
    zero = n == 0
    scaled = z * (target / (E.norm(z, keepdims=True) + zero))
    out = E.where(inside, z, scaled)
    if zero.any():
        e1 = np.zeros(z.shape)
        e1[..., 0] = 0.5
        out = E.where(zero, e1, out)
    return out


class Expert(Module):
    """One symmetry family (or ordered pair) whose parameters are a function of (t, z)."""

    def __init__(self, label: str, d: int, hidden: int, rng: np.random.Generator, name: str):
        self.kinds = parse_expert(label)
        if "rot" in self.kinds and d < 2:
            raise ConfigError(f"expert {label}: rotation needs block dimension >= 2, got {d}")
        self.label = "*".join(self.kinds)
        self.d = d
        self.sizes = [_raw_size(k, d) for k in self.kinds]
        self.net = MLP(1 + d, hidden, sum(self.sizes), rng, name)

    def __call__(self, feat) -> Gr.AffineAction:
        raw = self.net(feat)
        acts, off = [], 0
        for kind, size in zip(self.kinds, self.sizes):
            acts.append(build_expert_action(kind, raw[:, off:off + size], self.d))
            off += size
        return acts[0] if len(acts) == 1 else Gr.compose_actions(acts[0], acts[1])


def build_expert_action(kind: str, raw, d: int) -> Gr.AffineAction:
    """Squash raw network outputs into a per-step bounded action."""
    B = raw.shape[0]
    if kind == "rot":
        V = E.reshape(raw[:, : 2 * d], (B, d, 2)) + np.eye(d, 2)
        theta = E.tanh(raw[:, 2 * d]) * Gr.ROTATION_BOUND
        return Gr.build_rotation(Gr.orthonormalize_2col(V), theta, bounded=True)
    if kind == "tra":
        return Gr.build_translation(E.tanh(raw) * (Gr.TRANSLATION_BOUND / math.sqrt(d)), bounded=True)
    return Gr.build_scaling(E.tanh(raw) * 0.5 + 1.0, bounded=True)


class GatingNet(Module):
    def __init__(self, d: int, hidden: int, K: int, k0: int, warmup: int,
                 rng: np.random.Generator, name: str = "gate"):
        if not 1 <= k0 <= K:
            raise ConfigError(f"need 1 <= K0 <= K, got K0={k0}, K={K}")
        self.net = MLP(1 + d, hidden, K, rng, name)
        self.K, self.k0, self.warmup = K, k0, warmup

    def __call__(self, feat) -> Tensor:
        return self.net(feat)


def top_k_mask(w: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row; ties go to the lower index."""
    order = np.argsort(-w, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(w.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def sparsify(w: Tensor, k0: int) -> Tensor:
    if k0 >= w.shape[-1]:
        return w
    kept = w * top_k_mask(w.data, k0)
    return kept / E.sum(kept, axis=-1, keepdims=True)


def gate_weights(gate: GatingNet, t_norm, z, epoch: int) -> Tensor:
    """Softmax gate; after warmup only the top-K0 experts survive, renormalized."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    z = E.as_tensor(z)
    squeeze = z.ndim == 1
    if squeeze:
        z = E.reshape(z, (1, -1))
    w = E.softmax(gate(_features(t_norm, z)))
    if epoch >= gate.warmup:
        w = sparsify(w, gate.k0)
    return E.reshape(w, (w.shape[-1],)) if squeeze else w


def _features(t_norm: float, z: Tensor) -> Tensor:
    return E.concat([np.full((z.shape[0], 1), float(t_norm)), z], axis=-1)


def micro_action(a: Gr.AffineAction, fraction: float) -> Gr.AffineAction:
    """Action for a step that is ``fraction`` of the nominal step."""
    if fraction == 1.0:
        return a
    if a.kind != "composed":
        return Gr.fractional_action(a, fraction)
    try:
        return Gr.fractional_action(a, fraction)
    except Gr.DomainError:
        # non-commuting pair: first-order split, exact at fraction 0 and 1
        return Gr.compose_actions(micro_action(a.params["first"], fraction),
                                  micro_action(a.params["second"], fraction))


def mix_actions(actions, w: Tensor) -> tuple[Tensor, Tensor]:
    """(sum_k w_k A_k, sum_k w_k b_k); one mixed step equals a mos_step with the same weights."""
    total = w.data.sum(-1)
    if np.any(np.abs(total - 1.0) > 1e-10):
        raise ContractError(f"gate weights sum to {total.ravel()[0]!r}, not 1")
    A = E.stack([a.A for a in actions], axis=1)
    b = E.stack([a.b for a in actions], axis=1)
    wA = E.reshape(w, w.shape + (1, 1))
    wb = E.reshape(w, w.shape + (1,))
    return E.sum(A * wA, axis=1), E.sum(b * wb, axis=1)


@dataclass
class LevelRecord:
    """Per-subinterval gate weights (L, B, K) and the expert labels."""

    weights: np.ndarray
    labels: tuple
    params: list = field(default_factory=list)


@dataclass
class LatentTrajectory:
    times: np.ndarray          # (n_micro + 1,)
    z: Tensor                  # (B, n_micro + 1, m)
    levels: list               # LevelRecord per level

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def homogeneous(self) -> np.ndarray:
        ones = np.ones(self.z.shape[:-1] + (1,))
        return np.concatenate([self.z.data, ones], axis=-1)


class Level(Module):
    def __init__(self, d: int, L: int, roster, hidden: int, k0: int, warmup: int,
                 rng: np.random.Generator, name: str):
        if L < 1:
            raise ConfigError(f"{name}: subinterval count must be >= 1")
        self.experts = [Expert(lab, d, hidden, rng, f"{name}.expert{k}") for k, lab in enumerate(roster)]
        self.gate = GatingNet(d, hidden, len(roster), min(k0, len(roster)), warmup, rng, f"{name}.gate")
        self.d, self.L = d, L

    @property
    def labels(self) -> tuple:
        return tuple(e.label for e in self.experts)


def rollout_level(level: Level, z0, n_steps: int, epoch: int, fraction: float = 1.0,
                  keep_params: bool = False) -> tuple[Tensor, LevelRecord]:
    """Roll one block forward ``n_steps`` micro-steps per subinterval, L subintervals.

    Expert parameters and gate weights are evaluated once at each subinterval
    start (after norm rescaling) and held fixed over its micro-steps.
    """
    z = E.as_tensor(z0)
    segs, wrec, prec = [], [], []
    for l in range(level.L):
        z = rescale_norm(z)
        feat = _features(l / level.L, z)
        w = gate_weights(level.gate, l / level.L, z, epoch)
        actions = [micro_action(ex(feat), fraction) for ex in level.experts]
        A, b = mix_actions(actions, w)
        Z = affine_rollout(A, b, z, n_steps)
        segs.append(Z[:, :n_steps])
        z = Z[:, n_steps]
        wrec.append(w.data.copy())
        if keep_params:
            prec.append([a.matrix() for a in actions])
    segs.append(E.reshape(z, (z.shape[0], 1, z.shape[1])))
    return E.concat(segs, axis=1), LevelRecord(np.stack(wrec), level.labels, prec)


def micro_steps(n_intervals: int, levels, per_interval: float = 2.0) -> int:
    """per_interval * n_intervals rounded up to a multiple of every level's subinterval count."""
    lcm = 1
    for L in levels:
        lcm = lcm * L // math.gcd(lcm, L)
    base = max(int(math.ceil(per_interval * n_intervals - 1e-9)), 1)
    return int(math.ceil(base / lcm) * lcm)


class Decoder(Module):
    def __init__(self, n: int, m: int, rng: np.random.Generator, levels=DEFAULT_LEVELS,
                 roster=DEFAULT_ROSTER, k0: int = 2, warmup: int = DEFAULT_WARMUP, hidden: int | None = None):
        hidden = hidden or m
        self.sizes = block_sizes(m, len(levels))
        self.levels = [Level(d, L, roster, hidden, k0, warmup, rng, f"decoder.level{s}")
                       for s, (d, L) in enumerate(zip(self.sizes, levels))]
        self.head = MLP(m, hidden, n, rng, "decoder.head")
        self.n, self.m = n, m

    @property
    def level_counts(self) -> tuple:
        return tuple(lv.L for lv in self.levels)

    def rollout(self, z0, t0: float, tN: float, n_micro: int, epoch: int,
                refine: int = 1, keep_params: bool = False) -> LatentTrajectory:
        return multi_level_rollout(self, z0, t0, tN, n_micro, epoch, refine, keep_params)

    def decode(self, z) -> Tensor:
        return decode_observation(z, self.head)


def multi_level_rollout(dec: Decoder, z0, t0: float, tN: float, n_micro: int, epoch: int,
                        refine: int = 1, keep_params: bool = False) -> LatentTrajectory:
    """Split z0 into blocks, roll each block out at its own level, concatenate features.

    ``refine`` > 1 subdivides every nominal step into ``refine`` fractional steps.
    """
    z0 = E.as_tensor(z0)
    if z0.shape[-1] != dec.m:
        raise E.DimensionError(f"latent has {z0.shape[-1]} features, decoder expects {dec.m}")
    for lv in dec.levels:
        if n_micro % lv.L:
            raise ContractError(f"{n_micro} micro-steps do not divide into {lv.L} subintervals")
    outs, recs, off = [], [], 0
    for lv in dec.levels:
        block = z0[:, off:off + lv.d]
        Z, rec = rollout_level(lv, block, (n_micro // lv.L) * refine, epoch, 1.0 / refine, keep_params)
        outs.append(Z)
        recs.append(rec)
        off += lv.d
    z = outs[0] if len(outs) == 1 else E.concat(outs, axis=-1)
    times = t0 + np.arange(n_micro * refine + 1) * ((tN - t0) / (n_micro * refine))
    return LatentTrajectory(times, z, recs)


def decode_observation(z, head: MLP) -> Tensor:
    z = E.as_tensor(z)
    if z.shape[-1] != head.n_in:
        raise E.DimensionError(f"decode_observation: latent has {z.shape[-1]} features, head expects {head.n_in}")
    return head(z)


def gather_times(traj: LatentTrajectory, times: np.ndarray) -> Tensor:
    """Latent states at ``times``: exact grid hits are indexed, others linearly interpolated."""
    pos = (np.asarray(times) - traj.times[0]) / traj.dt
    near = np.rint(pos)
    if np.all(np.abs(pos - near) < 1e-9):
        return traj.z[:, near.astype(int)]
    if pos.min() < -1e-9 or pos.max() > len(traj.times) - 1 + 1e-9:
        raise ContractError("requested times fall outside the rollout window")
    pos = np.clip(pos, 0, len(traj.times) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(traj.times) - 2)
    a = pos - lo
    W = np.zeros((len(pos), len(traj.times)))
    W[np.arange(len(pos)), lo] += 1 - a
    W[np.arange(len(pos)), lo + 1] += a
    return E.matmul(W, traj.z)
