"""Fused hot-loop kernels exposed as single tape nodes.

The compiled core (``_core``, built from Cython) is used when importable;
otherwise the numpy fallback is selected.  ``LATENT_MOS_KERNELS=python``
forces the fallback, ``=compiled`` makes a missing core an import error.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from ..engine import Tensor, apply_op, as_tensor
from . import _fallback

_choice = os.environ.get("LATENT_MOS_KERNELS", "auto").lower()
_compiled = None
if _choice != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        if _choice == "compiled":
            raise
        _compiled = None

_backend = _compiled if _compiled is not None else _fallback

# Above this many active rows the scalar-tanh native loop loses to numpy's
# vectorized tanh + BLAS (see benchmarks/bench_kernels.py), so rk4_mlp hands
# the call to the fallback even when the compiled core is selected.
RK4_NATIVE_MAX_ROWS = 32


def backend_name() -> str:
    return "compiled" if _backend is _compiled else "python"


def compiled_available() -> bool:
    return _compiled is not None


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch between ``"compiled"`` and ``"python"`` kernels."""
    global _backend
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        new = _compiled
    elif name == "python":
        new = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    prev, _backend = _backend, new
    try:
        yield
    finally:
        _backend = prev


def rk4_mlp(h: Tensor, weights, dt: float, n_steps: int, active=None, sign: float = 1.0) -> Tensor:
    """``n_steps`` classical RK4 steps of dh/dt = sign * mlp(h) for rows in ``active``.

    ``weights`` is (W1, b1, W2, b2, W3, b3) of a two-hidden-layer tanh MLP.
    Inactive rows pass through unchanged.
    """
    h = as_tensor(h)
    weights = tuple(as_tensor(w) for w in weights)
    if active is None:
        active = np.ones(h.shape[0], dtype=bool)
    active = np.asarray(active, dtype=bool)
    arrays = [np.ascontiguousarray(w.data) for w in weights]
    be = _backend
    if be is _compiled and int(active.sum()) > RK4_NATIVE_MAX_ROWS:
        be = _fallback
    out, cache = be.rk4_mlp_forward(np.ascontiguousarray(h.data), *arrays, float(dt),
                                    int(n_steps), active, float(sign))

    def bw(g):
        return be.rk4_mlp_backward(cache, np.ascontiguousarray(g), *arrays, float(dt),
                                   int(n_steps), float(sign))
    return apply_op(out, (h, *weights), bw, "rk4_mlp")


def affine_rollout(A: Tensor, b: Tensor, z0: Tensor, n: int) -> Tensor:
    """Apply ``z <- A z + b`` ``n`` times; returns all iterates, shape (B, n+1, d)."""
    A, b, z0 = as_tensor(A), as_tensor(b), as_tensor(z0)
    be = _backend
    Ad = np.ascontiguousarray(A.data)
    Z = be.affine_rollout_forward(Ad, np.ascontiguousarray(b.data), np.ascontiguousarray(z0.data), int(n))

    def bw(g):
        return be.affine_rollout_backward(Ad, Z, np.ascontiguousarray(g))
    return apply_op(Z, (A, b, z0), bw, "affine_rollout")
