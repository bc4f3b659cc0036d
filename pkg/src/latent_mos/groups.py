"""Affine Lie-group actions in homogeneous coordinates.

An action on latent vectors z in R^m is stored in block form (A, b) and acts as
``[A b; 0 1] @ [z; 1]``.  All constructors take and return engine tensors so
that gradients flow to the parameters (V, theta, v, gamma); any number of
leading batch dimensions is allowed.  The homogeneous bottom row is never
stored, so it is exactly (0, ..., 0, 1) for every action.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import engine as E
from .engine import ContractError, Tensor, as_tensor

ROTATION_BOUND = 0.6
TRANSLATION_BOUND = 1e-3
SCALING_BOUND = 1.5
DEGENERACY_TOL = 1e-8
EXPM_TAYLOR_TERMS = 10
EXPM_TARGET_NORM = 0.25

_J = np.array([[0.0, -1.0], [1.0, 0.0]])

KIND_SHORT = {"rotation": "rot", "translation": "tra", "scaling": "sca"}


class GroupError(ValueError):
    pass


class DegeneracyError(GroupError):
    pass


class SingularActionError(GroupError):
    pass


class DomainError(GroupError):
    pass


class BoundError(GroupError, ContractError):
    pass


@dataclass(frozen=True, eq=False)
class AffineAction:
    A: Tensor
    b: Tensor
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.b.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.b.shape[:-1]

    @property
    def label(self) -> str:
        if self.kind == "composed":
            return f"{self.params['first'].label}*{self.params['second'].label}"
        return KIND_SHORT.get(self.kind, self.kind)

    def matrix(self) -> np.ndarray:
        """Homogeneous (m+1)x(m+1) matrix (with leading batch dims)."""
        m = self.m
        out = np.zeros(self.batch_shape + (m + 1, m + 1))
        out[..., :m, :m] = self.A.data
        out[..., :m, m] = self.b.data
        out[..., m, m] = 1.0
        return out

    def homogeneous(self) -> Tensor:
        m = self.m
        top = E.concat([self.A, E.reshape(self.b, self.batch_shape + (m, 1))], axis=-1)
        bottom = np.zeros(self.batch_shape + (1, m + 1))
        bottom[..., 0, m] = 1.0
        return E.concat([top, bottom], axis=-2)


@dataclass(frozen=True, eq=False)
class HomogeneousLatent:
    """Latent z with an implicit trailing 1 (the last coordinate is never stored)."""

    z: Tensor

    def __post_init__(self):
        object.__setattr__(self, "z", as_tensor(self.z))

    @property
    def m(self) -> int:
        return self.z.shape[-1]

    @property
    def last(self) -> float:
        return 1.0

    def tilde(self) -> np.ndarray:
        ones = np.ones(self.z.shape[:-1] + (1,))
        return np.concatenate([self.z.data, ones], axis=-1)


@dataclass(frozen=True, eq=False)
class Generator:
    xi: Tensor

    def matrix(self) -> np.ndarray:
        return self.xi.data


def matvec(A, z) -> Tensor:
    A, z = as_tensor(A), as_tensor(z)
    col = E.reshape(z, z.shape + (1,))
    out = E.matmul(A, col)
    return E.reshape(out, out.shape[:-1])


def identity_action(m: int) -> AffineAction:
    return build_translation(np.zeros(m))


# ---------------------------------------------------------------- constructors

def orthonormalize_2col(V) -> Tensor:
    """Gram-Schmidt on the two columns of V (..., m, 2), with one re-orthogonalization pass."""
    V = as_tensor(V)
    if V.ndim < 2 or V.shape[-1] != 2 or V.shape[-2] < 2:
        raise E.DimensionError(f"orthonormalize_2col: need (..., m>=2, 2), got {V.shape}")
    v1, v2 = V[..., 0], V[..., 1]
    n1 = E.norm(v1, keepdims=True)
    n2 = np.sqrt((v2.data ** 2).sum(-1, keepdims=True))
    if np.any(n1.data == 0) or np.any(n2 == 0):
        raise DegeneracyError("orthonormalize_2col: zero column (condition number inf)")
    u1 = v1 / n1
    w = v2 - E.sum(u1 * v2, axis=-1, keepdims=True) * u1
    residual = np.sqrt((w.data ** 2).sum(-1, keepdims=True)) / n2
    if np.any(residual < DEGENERACY_TOL):
        c = np.abs((u1.data * v2.data).sum(-1) / n2[..., 0]).max()
        cond = np.inf if c >= 1.0 else np.sqrt((1.0 + c) / (1.0 - c))
        raise DegeneracyError(
            f"orthonormalize_2col: near-parallel columns, condition number {cond:.3e}")
    w = w - E.sum(u1 * w, axis=-1, keepdims=True) * u1
    u2 = w / E.norm(w, keepdims=True)
    shp = u1.shape + (1,)
    return E.concat([E.reshape(u1, shp), E.reshape(u2, shp)], axis=-1)


def _check_orthonormal(P: Tensor, tol: float = 1e-10) -> None:
    G = np.swapaxes(P.data, -1, -2) @ P.data
    dev = np.abs(G - np.eye(2)).max() if G.size else 0.0
    if dev > tol:
        raise ContractError(f"build_rotation: P is not orthonormal (max |P^T P - I| = {dev:.3e})")


def build_rotation(P, theta, bounded: bool = False) -> AffineAction:
    """A = I + P (R_theta - I_2) P^T, b = 0."""
    P, theta = as_tensor(P), as_tensor(theta)
    if P.ndim < 2 or P.shape[-1] != 2:
        raise E.DimensionError(f"build_rotation: P must be (..., m, 2), got {P.shape}")
    _check_orthonormal(P)
    if bounded and np.any(np.abs(theta.data) > ROTATION_BOUND):
        raise BoundError(f"rotation angle exceeds per-step bound {ROTATION_BOUND}")
    m = P.shape[-2]
    c = E.reshape(E.cos(theta), theta.shape + (1, 1))
    s = E.reshape(E.sin(theta), theta.shape + (1, 1))
    R_minus_I = (c - 1.0) * np.eye(2) + s * _J
    A = np.eye(m) + E.matmul(E.matmul(P, R_minus_I), E.transpose(P))
    b = as_tensor(np.zeros(A.shape[:-1]))
    return AffineAction(A, b, "rotation", {"P": P, "theta": theta})


def build_translation(v, bounded: bool = False) -> AffineAction:
    v = as_tensor(v)
    if bounded:
        n = np.sqrt((v.data ** 2).sum(-1))
        if np.any(n > TRANSLATION_BOUND * (1.0 + 1e-12)):
            raise BoundError(f"translation norm {n.max():.3e} exceeds per-step bound {TRANSLATION_BOUND}")
    m = v.shape[-1]
    A = as_tensor(np.broadcast_to(np.eye(m), v.shape[:-1] + (m, m)).copy())
    return AffineAction(A, v, "translation", {"v": v})


def build_scaling(gamma, bounded: bool = False) -> AffineAction:
    gamma = as_tensor(gamma)
    if np.any(gamma.data == 0):
        raise SingularActionError("scaling factor of exactly 0 makes the action singular")
    if bounded and np.any(np.abs(gamma.data) > SCALING_BOUND):
        raise BoundError(f"scaling factor exceeds per-step bound {SCALING_BOUND}")
    m = gamma.shape[-1]
    A = E.reshape(gamma, gamma.shape + (1,)) * np.eye(m)
    b = as_tensor(np.zeros(gamma.shape))
    return AffineAction(A, b, "scaling", {"gamma": gamma})


def compose_actions(a1: AffineAction, a2: AffineAction) -> AffineAction:
    """Homogeneous product a1 @ a2 (a2 acts first): A = A1 A2, b = A1 b2 + b1."""
    if a1.m != a2.m:
        raise E.DimensionError(f"compose_actions: m differs ({a1.m} vs {a2.m})")
    A = E.matmul(a1.A, a2.A)
    b = matvec(a1.A, a2.b) + a1.b
    return AffineAction(A, b, "composed", {"first": a1, "second": a2})


def apply_action(a: AffineAction, zt: HomogeneousLatent) -> HomogeneousLatent:
    if zt.m != a.m:
        raise E.DimensionError(f"apply_action: latent has m={zt.m}, action has m={a.m}")
    return HomogeneousLatent(matvec(a.A, zt.z) + a.b)


def mos_step(zt: HomogeneousLatent, actions: Sequence[AffineAction], w) -> HomogeneousLatent:
    """Convex mixture sum_k w[k] * (pi_k z~); w has shape (..., K)."""
    w = as_tensor(w)
    if w.shape[-1] != len(actions):
        raise E.DimensionError(f"mos_step: {len(actions)} actions but {w.shape[-1]} weights")
    total = w.data.sum(-1)
    if np.any(np.abs(total - 1.0) > 1e-10):
        raise ContractError(f"mos_step: weights sum to {np.ravel(total)[0]!r}, not 1")
    out = None
    for k, a in enumerate(actions):
        term = E.reshape(w[..., k], w.shape[:-1] + (1,)) * apply_action(a, zt).z
        out = term if out is None else out + term
    return HomogeneousLatent(out)


# ---------------------------------------------------------------- continuous updates

def expm(X) -> Tensor:
    """Matrix exponential by scaling and squaring around a 10-term Taylor core."""
    X = as_tensor(X)
    n = X.shape[-1]
    nrm = float(np.sqrt((X.data ** 2).sum(axis=(-2, -1))).max()) if X.size else 0.0
    squarings = 0 if nrm < EXPM_TARGET_NORM else int(np.ceil(np.log2(nrm / EXPM_TARGET_NORM))) + 1
    Xs = X * (0.5 ** squarings)
    eye = np.eye(n)
    T = eye + Xs * (1.0 / EXPM_TAYLOR_TERMS)
    for k in range(EXPM_TAYLOR_TERMS - 1, 0, -1):
        T = eye + E.matmul(Xs, T) * (1.0 / k)
    for _ in range(squarings):
        T = E.matmul(T, T)
    return T


def _factor_commute(a: AffineAction, gen_fn) -> tuple[Tensor, Tensor]:
    g1 = gen_fn(a.params["first"]).xi
    g2 = gen_fn(a.params["second"]).xi
    comm = g1.data @ g2.data - g2.data @ g1.data
    scale = max(1.0, float(np.abs(g1.data).max() * np.abs(g2.data).max()))
    if np.abs(comm).max() > 1e-12 * scale:
        raise DomainError(
            f"composed action {a.label} has non-commuting factors; no closed-form one-parameter subgroup")
    return g1, g2


def generator_of(a: AffineAction) -> Generator:
    """Closed-form Lie-algebra element xi with expm(xi) == a."""
    m = a.m
    batch = a.batch_shape
    if a.kind == "rotation":
        P, theta = a.params["P"], a.params["theta"]
        K = E.matmul(E.matmul(P, _J), E.transpose(P)) * E.reshape(theta, theta.shape + (1, 1))
        return Generator(_embed(K, None, batch, m))
    if a.kind == "translation":
        return Generator(_embed(None, a.params["v"], batch, m))
    if a.kind == "scaling":
        gamma = a.params["gamma"]
        if np.any(gamma.data <= 0):
            raise DomainError("generator of a scaling needs gamma > 0")
        L = E.reshape(E.log(gamma), gamma.shape + (1,)) * np.eye(m)
        return Generator(_embed(L, None, batch, m))
    if a.kind == "composed":
        g1, g2 = _factor_commute(a, generator_of)
        return Generator(g1 + g2)
    raise DomainError(f"no generator for kind {a.kind!r}")


def _embed(top_left, col, batch, m) -> Tensor:
    if top_left is None:
        top_left = as_tensor(np.zeros(batch + (m, m)))
    if col is None:
        col = as_tensor(np.zeros(batch + (m,)))
    top = E.concat([top_left, E.reshape(col, batch + (m, 1))], axis=-1)
    return E.concat([top, np.zeros(batch + (1, m + 1))], axis=-2)


def action_from_matrix(M, kind: str = "composed", params: dict | None = None) -> AffineAction:
    M = as_tensor(M)
    m = M.shape[-1] - 1
    return AffineAction(M[..., :m, :m], M[..., :m, m], kind, params or {})


def fractional_action(a: AffineAction, dt: float) -> AffineAction:
    """Point ``dt`` along the one-parameter subgroup through ``a`` (dt = 1 gives ``a``)."""
    if not 0.0 <= dt <= 1.0:
        raise ValueError(f"fractional_action: dt must lie in [0, 1], got {dt}")
    if a.kind == "rotation":
        return build_rotation(a.params["P"], a.params["theta"] * dt)
    if a.kind == "translation":
        return build_translation(a.params["v"] * dt)
    if a.kind == "scaling":
        gamma = a.params["gamma"]
        if np.any(gamma.data <= 0):
            raise DomainError("fractional scaling needs gamma > 0")
        return build_scaling(E.exp(E.log(gamma) * dt))
    if a.kind == "composed":
        g1, g2 = _factor_commute(a, generator_of)
        return action_from_matrix(expm((g1 + g2) * dt), "composed",
                                  {"first": fractional_action(a.params["first"], dt),
                                   "second": fractional_action(a.params["second"], dt)})
    raise DomainError(f"kind {a.kind!r} is not fractionable")


# ---------------------------------------------------------------- verification oracles

def commutator_defect(a1: AffineAction, a2: AffineAction) -> float:
    """Frobenius norm of M1 M2 - M2 M1 (max over any batch)."""
    if a1.m != a2.m:
        raise E.DimensionError(f"commutator_defect: m differs ({a1.m} vs {a2.m})")
    M1, M2 = a1.matrix(), a2.matrix()
    D = M1 @ M2 - M2 @ M1
    return float(np.sqrt((D ** 2).sum(axis=(-2, -1))).max())


def equivariance_check(pi_s: AffineAction, pi_d: AffineAction, samples) -> float:
    """max_z || pi_s(pi_d z~) - pi_d(pi_s z~) ||_2 over the samples."""
    if isinstance(samples, HomogeneousLatent):
        Z = np.atleast_2d(samples.z.data)
    elif isinstance(samples, np.ndarray):
        Z = np.atleast_2d(samples)
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("equivariance_check: empty sample list")
        Z = np.stack([s.z.data if isinstance(s, HomogeneousLatent) else np.asarray(s) for s in samples])
    if Z.shape[0] == 0:
        raise ValueError("equivariance_check: empty sample list")
    if pi_s.m != pi_d.m or Z.shape[-1] != pi_s.m:
        raise E.DimensionError("equivariance_check: dimension mismatch")

    def act(a, z):
        return z @ a.A.data.T + a.b.data
    diff = act(pi_s, act(pi_d, Z)) - act(pi_d, act(pi_s, Z))
    return float(np.sqrt((diff ** 2).sum(-1)).max())
