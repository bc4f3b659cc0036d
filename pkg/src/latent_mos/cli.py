"""latent-mos command line: generate, train, eval, verify, export-latent."""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
SYNTHETIC = ("spiral", "glycolytic", "lotka")

log = logging.getLogger("latent_mos")


class UsageError(Exception):
    pass


def _threads(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _write_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _load_dataset(cfg):
    from .data import gen_dataset, load_csv

    if cfg.data_path:
        return load_csv(cfg.data_path)
    if cfg.dataset in SYNTHETIC:
        return gen_dataset(cfg.dataset, cfg.seed)
    raise UsageError(f"dataset {cfg.dataset!r} is not synthetic; set data_path to a CSV file")


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    from .data import gen_dataset, save_csv

    ds = gen_dataset(args.kind, args.seed)
    out = Path(args.out)
    path = out / f"{args.kind}.csv" if not out.suffix else out
    save_csv(ds, path)
    print(f"wrote {len(ds)} trajectories to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import load_config
    from .report import validate_report
    from .training import DivergenceError, run_training, save_checkpoint

    overrides = _parse_sets(args.set)
    for key in ("seed", "epochs", "data_path", "dataset", "task", "drop_rate"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.threads:
        overrides["threads"] = args.threads
    cfg = load_config(args.config, overrides)
    ds = _load_dataset(cfg)
    out = Path(args.out)

    def progress(epoch, loss):
        if args.verbose and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch:5d}  loss {loss:.6g}", file=sys.stderr)

    try:
        with _threads(cfg.threads):
            result = run_training(cfg, ds, progress)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    validate_report(result.report)
    save_checkpoint(result.state, out / "checkpoint.json")
    _write_json(result.report, out / "report.json")
    f = result.report["final"]
    g = result.report["gates"]
    print(json.dumps({"test_mse": f["test_mse"], "baseline_test_mse": f["baseline_test_mse"],
                      "top_expert": g["top_expert"], "gate_means": dict(zip(g["labels"], g["mean"])),
                      "checkpoint": str(out / "checkpoint.json")}, indent=2))
    return EXIT_OK


def _eval_dataset(st, args):
    from .data import load_csv

    if args.data:
        return load_csv(args.data)
    ds = _load_dataset(st.cfg)
    return ds.subset(st.test_idx)


def cmd_eval(args) -> int:
    from .report import gate_block
    from .training import evaluate_full, load_checkpoint

    st = load_checkpoint(args.checkpoint)
    ds = _eval_dataset(st, args)
    task = args.task or st.cfg.task
    drop = st.cfg.drop_rate if args.drop is None else args.drop
    with _threads(args.threads):
        t0 = time.perf_counter()
        res = evaluate_full(st.model, ds, st.stats, task, drop, args.seed, st.epoch)
    report = {"task": task, "drop_rate": drop, "seed": args.seed, "trajectories": len(ds),
              "test_mse": res.mse, "test_mse_normalized": res.mse_normalized,
              "gates": gate_block(res.forward.latent.levels),
              "wall_clock_seconds": time.perf_counter() - t0}
    _write_json(report, Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_suite

    t0 = time.perf_counter()
    results = run_suite(args.profile, args.seed, fault=args.inject_fault, gradients=not args.no_gradients)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed in {time.perf_counter() - t0:.1f}s")
    for r in failed:
        print(f"FAILED: {r.name} (worst defect {r.defect:.3e}, bound {r.tol:.1e})", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_export_latent(args) -> int:
    from .batching import collate
    from .data import normalize
    from .pca import fit_pca
    from .training import load_checkpoint, task_masks
    from .rng import substream
    from . import engine as E

    st = load_checkpoint(args.checkpoint)
    ds = _eval_dataset(st, args) if args.data or not args.all else _load_dataset(st.cfg)
    ds_norm = normalize(ds, st.stats)
    rng = substream(args.seed, "eval")
    masks = [task_masks(len(t.times), st.cfg.task, args.drop, rng)[0] if args.drop is not None else t.mask
             for t in ds_norm.trajectories]
    batch = collate(ds_norm.trajectories, obs_masks=masks)
    with _threads(args.threads), E.no_grad():
        fr = st.model.forward(batch, st.epoch, refine=args.refine)
    Z = fr.latent.z.data
    B, T, m = Z.shape
    pca = fit_pca(Z.reshape(B * T, m), 2)
    proj = pca.transform(Z.reshape(B * T, m)).reshape(B, T, -1)
    if proj.shape[-1] < 2:
        proj = np.concatenate([proj, np.zeros((B, T, 2 - proj.shape[-1]))], axis=-1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory_id", "time", "pc1", "pc2"] + [f"z{i + 1}" for i in range(m)])
        for b in range(B):
            for j in range(T):
                w.writerow([batch.ids[b], f"{fr.latent.times[j]:.17g}", f"{proj[b, j, 0]:.17g}",
                            f"{proj[b, j, 1]:.17g}"] + [f"{v:.17g}" for v in Z[b, j]])
    meta = {"explained_variance_ratio": pca.explained_ratio.tolist(),
            "components": pca.components.tolist(), "mean": pca.mean.tolist(),
            "dt": fr.latent.dt, "points_per_trajectory": T, "trajectories": B}
    out.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {B} latent trajectories x {T} steps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latent-mos", description="Latent mixture-of-symmetries models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a synthetic dataset to CSV")
    g.add_argument("--kind", required=True, choices=SYNTHETIC)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory or .csv path")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write report.json + checkpoint.json")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--dataset")
    t.add_argument("--data", dest="data_path", help="CSV dataset (overrides dataset)")
    t.add_argument("--task", choices=("interpolation", "extrapolation"))
    t.add_argument("--drop", dest="drop_rate", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", choices=("interpolation", "extrapolation"))
    e.add_argument("--drop", type=float)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--data", help="CSV to evaluate (default: the checkpoint's test split)")
    e.add_argument("--threads", type=int)
    e.add_argument("--out", help="write the report here instead of stdout")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the algebraic and gradient property suite")
    v.add_argument("--profile", default="default", choices=("default", "strict"))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--no-gradients", action="store_true", help="skip finite-difference checks")
    v.add_argument("--inject-fault", choices=("rotation-generator-sign",), help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    x = sub.add_parser("export-latent", help="export latent trajectories and 2-D PCA projections")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", help="CSV dataset (default: the checkpoint's test split)")
    x.add_argument("--all", action="store_true", help="export every trajectory of the training dataset")
    x.add_argument("--drop", type=float, help="condition on a dropped subset instead of the file's mask")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--refine", type=int, default=1, help="fractional sub-steps per decoder step")
    x.add_argument("--threads", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_latent)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .data import SchemaError, ValidationError
    from .pca import PCADegeneracyError
    from .training import CheckpointError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaError, ValidationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or exc}: not found", file=sys.stderr)
        return EXIT_USAGE
    except PCADegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
