"""MetricsReport assembly and schema validation."""
from __future__ import annotations

import json
from importlib import resources

import numpy as np

SCHEMA_VERSION = "1.0"
HIST_BINS = 10


def load_schema() -> dict:
    return json.loads(resources.files("latent_mos").joinpath("schemas/metrics_report.schema.json").read_text())


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, load_schema())


def gate_block(levels) -> dict:
    """Gate statistics from per-level records of shape (L, B, K)."""
    labels = list(levels[0].labels)
    per_level = []
    for s, rec in enumerate(levels):
        per_level.append({
            "level": s,
            "subintervals": int(rec.weights.shape[0]),
            "labels": list(rec.labels),
            "mean": rec.weights.mean(axis=(0, 1)).tolist(),
        })
    same = all(list(rec.labels) == labels for rec in levels)
    if same:
        stacked = np.concatenate([rec.weights.reshape(-1, rec.weights.shape[-1]) for rec in levels])
    else:
        stacked = levels[0].weights.reshape(-1, len(labels))
    mean = stacked.mean(axis=0)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    hist = {lab: np.histogram(stacked[:, k], bins=edges)[0].astype(int).tolist()
            for k, lab in enumerate(labels)}
    top = int(np.argmax(mean))
    return {
        "labels": labels,
        "mean": mean.tolist(),
        "per_level": per_level,
        "histogram": {"edges": edges.tolist(), "counts": hist},
        "top_expert": {"label": labels[top], "index": top, "mean_weight": float(mean[top])},
        "max_step_sum_error": float(np.abs(stacked.sum(-1) - 1.0).max()),
    }


def build_report(st, res, train_res, baseline: float, init_loss, seconds: float) -> dict:
    from .training import sparsity_violations

    cfg = st.cfg
    k0s = [lv.gate.k0 for lv in st.model.decoder.levels]
    eval_bad, eval_worst = sparsity_violations(res.forward, k0s, st.epoch, cfg.warmup_epochs)
    gates = gate_block(res.forward.latent.levels)
    gates["sparsity"] = {
        "k0": k0s,
        "post_warmup": st.epoch >= cfg.warmup_epochs,
        "violations_training": int(st.violations),
        "violations_eval": int(eval_bad),
        "max_sum_error": float(max(st.worst_sum_error, eval_worst)),
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "epochs_completed": st.epoch,
        "init_loss": init_loss,
        "losses": list(st.losses),
        "final": {
            "task": cfg.task,
            "drop_rate": cfg.drop_rate,
            "train_mse": train_res.mse,
            "test_mse": res.mse,
            "train_mse_normalized": train_res.mse_normalized,
            "test_mse_normalized": res.mse_normalized,
            "baseline_test_mse": baseline,
            "units": "raw",
        },
        "gates": gates,
        "wall_clock_seconds": float(seconds),
    }
