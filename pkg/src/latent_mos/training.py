"""Losses, Adam, drop masks, the training loop, evaluation and checkpoints."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .batching import Batch, collate
from .config import ExperimentConfig
from .data import Dataset, compute_stats, denormalize_values, normalize, split_indices
from .engine import ContractError, Tensor
from .model import ForwardResult, LatentMoS
from .rng import substream

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "latent-mos-checkpoint"
CHECKPOINT_VERSION = 1
DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss {loss!r})")
        self.epoch = epoch
        self.loss = loss


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------- masks and losses

def drop_mask(traj_or_len, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round((1 - rate) * N) observed points, index 0 always among them."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop rate must lie in [0, 1), got {rate}")
    N = traj_or_len if isinstance(traj_or_len, (int, np.integer)) else len(traj_or_len.times)
    keep = max(1, int(round((1.0 - rate) * N)))
    mask = np.zeros(N, dtype=bool)
    mask[0] = True
    if keep > 1:
        mask[1 + rng.choice(N - 1, size=keep - 1, replace=False)] = True
    return mask


def mse_loss(pred, target, eval_mask=None) -> Tensor:
    """Mean squared error over the entries selected by ``eval_mask`` (B, G) or (B, G, n)."""
    pred = E.as_tensor(pred)
    target = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if pred.shape != target.shape:
        raise E.DimensionError(f"mse_loss: shapes differ {pred.shape} vs {target.shape}")
    sq = E.square(pred - target)
    if eval_mask is None:
        return E.mean(sq)
    mask = np.asarray(eval_mask, dtype=bool)
    if mask.ndim == sq.ndim - 1:
        mask = np.broadcast_to(mask[..., None], sq.shape)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("mse_loss: empty evaluation mask")
    return E.sum(sq * mask) * (1.0 / count)


def kl_diag_gaussian(mu, sigma) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu, sigma = E.as_tensor(mu), E.as_tensor(sigma)
    if np.any(sigma.data <= 0):
        raise DomainError("kl_diag_gaussian: sigma must be positive")
    var = E.square(sigma)
    return E.sum((E.square(mu) + var - 1.0 - E.log(var)) * 0.5, axis=-1)


def elbo_loss(recon, kl, beta: float = 1.0) -> Tensor:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return E.as_tensor(recon) + E.as_tensor(kl) * beta


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr, "betas": [self.beta1, self.beta2], "eps": self.eps,
                "m": [x.tolist() for x in self.m], "v": [x.tolist() for x in self.v]}

    def load(self, st: dict) -> None:
        self.t = int(st["t"])
        self.m = [np.array(x, dtype=np.float64).reshape(p.shape) for x, p in zip(st["m"], self.params)]
        self.v = [np.array(x, dtype=np.float64).reshape(p.shape) for x, p in zip(st["v"], self.params)]


def adam_step(opt: Adam) -> None:
    opt.step()


# ---------------------------------------------------------------- task layout

def half_index(G: int) -> int:
    """Grid index of t_{N/2}."""
    return (G - 1) // 2


def task_masks(batch_len: int, task: str, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(encoder mask, score mask) for one trajectory of ``batch_len`` points."""
    if task == "interpolation":
        return drop_mask(batch_len, rate, rng), np.ones(batch_len, dtype=bool)
    if task == "extrapolation":
        h = half_index(batch_len)
        if h < 1:
            raise ValueError("extrapolation needs at least 3 points per trajectory")
        obs = np.zeros(batch_len, dtype=bool)
        obs[: h + 1] = drop_mask(h + 1, rate, rng)
        score = np.zeros(batch_len, dtype=bool)
        score[h + 1:] = True
        return obs, score
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------- metrics

def gate_summary(fr: ForwardResult) -> dict:
    per_level = []
    for rec in fr.latent.levels:
        per_level.append({"labels": list(rec.labels),
                          "mean": rec.weights.mean(axis=(0, 1)).tolist()})
    return per_level


def sparsity_violations(fr: ForwardResult, k0_by_level, epoch: int, warmup: int) -> tuple[int, float]:
    """(steps whose nonzero count is wrong, worst |sum - 1|) across all recorded gate weights."""
    bad, worst = 0, 0.0
    for rec, k0 in zip(fr.latent.levels, k0_by_level):
        w = rec.weights
        worst = max(worst, float(np.abs(w.sum(-1) - 1.0).max()))
        if epoch >= warmup:
            nz = (w != 0).sum(-1)
            bad += int((nz != min(k0, w.shape[-1])).sum())
    return bad, worst


# ---------------------------------------------------------------- training loop

@dataclass
class TrainState:
    model: LatentMoS
    opt: Adam
    cfg: ExperimentConfig
    stats: dict
    train_idx: np.ndarray
    test_idx: np.ndarray
    rngs: dict
    epoch: int = 0
    losses: list = field(default_factory=list)
    gate_history: list = field(default_factory=list)
    violations: int = 0
    worst_sum_error: float = 0.0


def prepare(cfg: ExperimentConfig, ds: Dataset) -> TrainState:
    if len(ds) < 2:
        raise ValueError("need at least two trajectories to form train and test splits")
    rngs = {name: substream(cfg.seed, name) for name in ("split", "init", "mask", "sampling")}
    train_idx, test_idx = split_indices(len(ds), cfg.train_fraction, rngs["split"])
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ValueError("train/test split left one side empty")
    stats = compute_stats(ds.subset(train_idx))
    model = LatentMoS(ds.n, cfg, rngs["init"])
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    return TrainState(model, opt, cfg, stats, train_idx, test_idx, rngs)


def _loss(st: TrainState, batch: Batch, epoch: int) -> tuple[Tensor, ForwardResult]:
    sample_rng = st.rngs["sampling"] if st.cfg.loss == "elbo" else None
    fr = st.model.forward(batch, epoch, sample_rng)
    loss = mse_loss(fr.pred, batch.values, batch.target & batch.present)
    if st.cfg.loss == "elbo":
        kl = E.mean(kl_diag_gaussian(fr.enc.mu, fr.enc.sigma))
        loss = elbo_loss(loss, kl, st.cfg.beta)
    return loss, fr


def train_batch(st: TrainState, ds_norm: Dataset) -> Batch:
    obs, score = [], []
    for i in st.train_idx:
        o, _ = task_masks(len(ds_norm[i].times), st.cfg.task, st.cfg.drop_rate, st.rngs["mask"])
        obs.append(o)
        score.append(np.ones_like(o))
    return collate([ds_norm[i] for i in st.train_idx], obs_masks=obs, target_masks=score)


def train_epochs(st: TrainState, ds: Dataset, n_epochs: int, callback=None) -> None:
    ds_norm = normalize(ds, st.stats)
    k0s = [lv.gate.k0 for lv in st.model.decoder.levels]
    for _ in range(n_epochs):
        epoch = st.epoch
        batch = train_batch(st, ds_norm)
        loss, fr = _loss(st, batch, epoch)
        val = loss.item()
        if not np.isfinite(val) or val > DIVERGENCE_LIMIT:
            raise DivergenceError(epoch, val)
        st.model.zero_grad()
        E.backward(loss)
        st.opt.step()
        bad, worst = sparsity_violations(fr, k0s, epoch, st.cfg.warmup_epochs)
        st.violations += bad
        st.worst_sum_error = max(st.worst_sum_error, worst)
        st.losses.append(val)
        st.gate_history.append(gate_summary(fr))
        st.epoch += 1
        if callback is not None:
            callback(epoch, val)


def initial_loss(st: TrainState, ds: Dataset) -> float:
    ds_norm = normalize(ds, st.stats)
    rng_state = st.rngs["mask"].bit_generator.state
    with E.no_grad():
        loss, _ = _loss(st, train_batch(st, ds_norm), 0)
    st.rngs["mask"].bit_generator.state = rng_state
    return loss.item()


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    mse: float
    mse_normalized: float
    forward: ForwardResult
    batch: Batch
    pred_raw: np.ndarray


def evaluate_full(model: LatentMoS, ds: Dataset, stats: dict, task: str, drop_rate: float,
                  seed: int, epoch: int | None = None, masks=None) -> EvalResult:
    """Condition on dropped inputs, score in raw units (and normalized) on the task's targets."""
    if len(ds) == 0:
        raise ValueError("evaluate: empty dataset")
    ds_norm = normalize(ds, stats)
    rng = substream(seed, "eval")
    obs, score = [], []
    for k, tr in enumerate(ds_norm.trajectories):
        o, s = task_masks(len(tr.times), task, drop_rate, rng)
        if masks is not None:
            o = np.asarray(masks[k], dtype=bool)
        obs.append(o)
        score.append(s)
    batch = collate(ds_norm.trajectories, obs_masks=obs, target_masks=score)
    ep = model.cfg.epochs if epoch is None else epoch
    with E.no_grad():
        fr = model.forward(batch, ep)
    sel = batch.target & batch.present
    if not sel.any():
        raise ContractError("evaluate: no scored points for this task/data layout")
    pred_raw = denormalize_values(fr.pred.data, stats)
    raw = denormalize_values(batch.values, stats)
    err = (pred_raw - raw) ** 2
    errn = (fr.pred.data - batch.values) ** 2
    mse = float(err[sel].mean())
    msen = float(errn[sel].mean())
    return EvalResult(mse, msen, fr, batch, pred_raw)


def evaluate(model: LatentMoS, ds: Dataset, stats: dict, task: str, drop_rate: float, seed: int) -> float:
    return evaluate_full(model, ds, stats, task, drop_rate, seed).mse


def constant_mean_baseline(train: Dataset, test: Dataset, task: str) -> float:
    """MSE of predicting the per-dimension training mean on the scored test points."""
    mean = np.concatenate([t.values for t in train.trajectories]).mean(axis=0)
    errs = []
    for tr in test.trajectories:
        G = len(tr.times)
        sel = slice(None) if task == "interpolation" else slice(half_index(G) + 1, None)
        errs.append(((tr.values[sel] - mean) ** 2))
    return float(np.concatenate(errs).mean())


# ---------------------------------------------------------------- top level

@dataclass
class TrainingResult:
    state: TrainState
    report: dict


def run_training(cfg: ExperimentConfig, ds: Dataset, callback=None, state: TrainState | None = None) -> TrainingResult:
    from .report import build_report

    t0 = time.perf_counter()
    st = state if state is not None else prepare(cfg, ds)
    init = initial_loss(st, ds) if st.epoch == 0 else None
    train_epochs(st, ds, cfg.epochs - st.epoch, callback)
    res = evaluate_full(st.model, ds.subset(st.test_idx), st.stats, cfg.task, cfg.drop_rate, cfg.seed, st.epoch)
    train_res = evaluate_full(st.model, ds.subset(st.train_idx), st.stats, cfg.task, cfg.drop_rate, cfg.seed, st.epoch)
    baseline = constant_mean_baseline(ds.subset(st.train_idx), ds.subset(st.test_idx), cfg.task)
    report = build_report(st, res, train_res, baseline, init, time.perf_counter() - t0)
    return TrainingResult(st, report)


# ---------------------------------------------------------------- checkpoints

def _rng_state(rng: np.random.Generator) -> dict:
    s = rng.bit_generator.state
    return {"bit_generator": s["bit_generator"], "state": {k: str(v) for k, v in s["state"].items()},
            "has_uint32": s["has_uint32"], "uinteger": s["uinteger"]}


def _load_rng(d: dict) -> np.random.Generator:
    g = np.random.Generator(np.random.PCG64())
    g.bit_generator.state = {"bit_generator": d["bit_generator"],
                             "state": {k: int(v) for k, v in d["state"].items()},
                             "has_uint32": d["has_uint32"], "uinteger": d["uinteger"]}
    return g


def checkpoint_dict(st: TrainState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": st.cfg.to_dict(),
        "n": st.model.n,
        "epoch": st.epoch,
        "params": {name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                   for name, p in st.model.named_parameters()},
        "adam": st.opt.state(),
        "rng": {k: _rng_state(v) for k, v in st.rngs.items()},
        "stats": {k: np.asarray(v).tolist() for k, v in st.stats.items()},
        "split": {"train": st.train_idx.tolist(), "test": st.test_idx.tolist()},
        "losses": st.losses,
        "violations": st.violations,
        "worst_sum_error": st.worst_sum_error,
    }


def save_checkpoint(st: TrainState, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(st), fh, sort_keys=True)
        fh.write("\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format/version")
    cfg = ExperimentConfig.from_dict(d["config"])
    model = LatentMoS(int(d["n"]), cfg, np.random.default_rng(0))
    model.load_state_dict({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                           for k, v in d["params"].items()})
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    opt.load(d["adam"])
    rngs = {k: _load_rng(v) for k, v in d["rng"].items()}
    stats = {k: np.array(v, dtype=np.float64) for k, v in d["stats"].items()}
    st = TrainState(model, opt, cfg, stats, np.array(d["split"]["train"], dtype=int),
                    np.array(d["split"]["test"], dtype=int), rngs, epoch=int(d["epoch"]),
                    losses=list(d["losses"]), violations=int(d["violations"]),
                    worst_sum_error=float(d["worst_sum_error"]))
    return st
