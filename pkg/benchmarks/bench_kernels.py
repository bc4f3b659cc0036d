"""Compare the compiled and numpy kernel backends on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--epochs 5]
"""
import argparse
import time

import numpy as np

from latent_mos import _kernels as K
from latent_mos import engine as E
from latent_mos.engine import Parameter
from latent_mos.nn import MLP


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rk4_case(B, m, steps):
    rng = np.random.default_rng(0)
    net = MLP(m, m, m, rng, "f")
    h = Parameter(rng.uniform(-1, 1, (B, m)), "h")
    active = rng.random(B) < 0.8

    def run():
        out = K.rk4_mlp(h, net.weights(), 0.01, steps, active, -1.0)
        E.backward(E.sum(out))
    return run


def rollout_case(B, d, n):
    rng = np.random.default_rng(1)
    A = Parameter(np.eye(d) + 0.05 * rng.standard_normal((B, d, d)), "A")
    b = Parameter(0.01 * rng.standard_normal((B, d)), "b")
    z0 = Parameter(rng.standard_normal((B, d)), "z0")

    def run():
        E.backward(E.sum(K.affine_rollout(A, b, z0, n)))
    return run


def epoch_case(epochs):
    from latent_mos import data, training as T
    from latent_mos.config import ExperimentConfig

    ds = data.gen_dataset("spiral", 0)
    cfg = ExperimentConfig(dataset="spiral", epochs=epochs)

    def run():
        st = T.prepare(cfg, ds)
        T.train_epochs(st, ds, epochs)
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["python"] + (["compiled"] if K.compiled_available() else [])
    if len(backends) == 1:
        print("compiled core not built; timing the numpy fallback only")
    cases = [
        ("rk4_mlp fwd+bwd  B=64 m=15 steps=4", rk4_case(64, 15, 4), args.repeat),
        ("rk4_mlp fwd+bwd  B=8 m=15 steps=4", rk4_case(8, 15, 4), args.repeat),
        ("affine_rollout fwd+bwd  B=64 d=8 n=60", rollout_case(64, 8, 60), args.repeat),
        ("affine_rollout fwd+bwd  B=64 d=8 n=24", rollout_case(64, 8, 24), args.repeat),
        (f"spiral training, {args.epochs} epochs", epoch_case(args.epochs), 1),
    ]
    print(f"{'case':42s}" + "".join(f"{b:>12s}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name, fn, rep in cases:
        row = []
        for b in backends:
            with K.use_backend(b):
                fn()  # warm up
                row.append(_best(fn, rep))
        line = f"{name:42s}" + "".join(f"{t * 1e3:10.3f}ms" for t in row)
        if len(row) == 2:
            line += f"   {row[0] / row[1]:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
