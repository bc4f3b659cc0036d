"""Executable algebraic and gradient property suite behind ``latent-mos verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as E
from . import groups as Gr

PROFILES = {
    "default": {"commute": 1e-10, "equivariance": 1e-9, "subgroup": 1e-10, "roundtrip": 1e-9,
                "isometry": 1e-10, "orthonormal": 1e-12, "gradient": 1e-4, "homogeneous": 1e-10},
    "strict": {k: 1e-12 for k in ("commute", "equivariance", "subgroup", "roundtrip", "isometry",
                                  "orthonormal", "homogeneous")} | {"gradient": 1e-4},
}

FAULTS = ("rotation-generator-sign",)


@dataclass
class Check:
    name: str
    defect: float
    tol: float
    passed: bool
    seconds: float = 0.0
    kind: str = "<"        # "<": defect must stay below tol; ">": detector must exceed tol; "=": exact


def _gen_with_fault(fault: str | None) -> Callable:
    if fault is None:
        return Gr.generator_of
    if fault != "rotation-generator-sign":
        raise ValueError(f"unknown fault {fault!r}; known: {FAULTS}")

    def faulty(a):
        if a.kind == "rotation":
            return Gr.Generator(-Gr.generator_of(a).xi)
        if a.kind == "composed":
            g1, g2 = Gr._factor_commute(a, faulty)
            return Gr.Generator(g1 + g2)
        return Gr.generator_of(a)
    return faulty


def _rand_P(rng, m):
    return Gr.orthonormalize_2col(rng.standard_normal((m, 2)))


def _perp(rng, P: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(P.shape[0])
    return v - P @ (P.T @ v)


class Suite:
    def __init__(self, profile: str = "default", seed: int = 0, draws: int = 1000,
                 fault: str | None = None, gradients: bool = True):
        if profile not in PROFILES:
            raise ValueError(f"unknown tolerance profile {profile!r}; choose from {sorted(PROFILES)}")
        self.tol = PROFILES[profile]
        self.rng = np.random.default_rng(seed)
        self.draws = draws
        self.gen = _gen_with_fault(fault)
        self.gradients = gradients
        self.results: list[Check] = []

    def _record(self, name, defect, tol, t0, kind="<"):
        ok = {"<": defect < tol, ">": defect > tol, "=": defect == tol}[kind]
        self.results.append(Check(name, float(defect), tol, bool(ok), time.perf_counter() - t0, kind))

    # ------------------------------------------------------------ action samplers

    def _m(self):
        return int(self.rng.integers(2, 7))

    def _pairs(self):
        """Commuting families: name -> sampler returning (a1, a2)."""
        rng = self.rng

        def tra_tra():
            m = self._m()
            return Gr.build_translation(rng.standard_normal(m)), Gr.build_translation(rng.standard_normal(m))

        def sca_sca():
            m = self._m()
            g1 = rng.uniform(0.2, 2.0, m) * rng.choice([-1.0, 1.0], m)
            return Gr.build_scaling(g1), Gr.build_scaling(rng.uniform(0.2, 2.0, m))

        def rot_rot():
            m = self._m()
            P = _rand_P(rng, m)
            return (Gr.build_rotation(P, rng.uniform(-np.pi, np.pi)),
                    Gr.build_rotation(P, rng.uniform(-np.pi, np.pi)))

        def rot_isosca():
            m = self._m()
            return (Gr.build_rotation(_rand_P(rng, m), rng.uniform(-np.pi, np.pi)),
                    Gr.build_scaling(np.full(m, rng.uniform(0.2, 2.0))))

        def tra_rot_perp():
            m = int(self.rng.integers(3, 7))
            P = _rand_P(rng, m)
            return Gr.build_translation(_perp(rng, P.data)), Gr.build_rotation(P, rng.uniform(-np.pi, np.pi))

        def composed():
            m = int(self.rng.integers(3, 7))
            P = _rand_P(rng, m)

            def base(kind):
                if kind == "rot":
                    return Gr.build_rotation(P, rng.uniform(-np.pi, np.pi))
                if kind == "sca":
                    return Gr.build_scaling(np.full(m, rng.uniform(0.2, 2.0)))
                return Gr.build_translation(_perp(rng, P.data))
            # pairwise-commuting base sets; scaling and translation never mix
            kinds = ("rot", "sca") if rng.random() < 0.5 else ("rot", "tra")
            pick = rng.choice(2, size=(2, 2))
            a = Gr.compose_actions(base(kinds[pick[0, 0]]), base(kinds[pick[0, 1]]))
            b = Gr.compose_actions(base(kinds[pick[1, 0]]), base(kinds[pick[1, 1]]))
            return a, b

        return {
            "translation-translation": tra_tra,
            "scaling-scaling": sca_sca,
            "rotation-rotation (shared plane)": rot_rot,
            "rotation-isotropic scaling": rot_isosca,
            "translation-rotation (v orthogonal to plane)": tra_rot_perp,
            "second-order compositions": composed,
        }

    def _fractionable(self):
        rng = self.rng
        m = self._m()
        k = int(rng.integers(4))
        if k == 0:
            return Gr.build_rotation(_rand_P(rng, m), rng.uniform(-np.pi, np.pi))
        if k == 1:
            return Gr.build_translation(rng.standard_normal(m))
        if k == 2:
            return Gr.build_scaling(rng.uniform(0.2, 3.0, m))
        P = _rand_P(rng, m)
        return Gr.compose_actions(Gr.build_rotation(P, rng.uniform(-np.pi, np.pi)),
                                  Gr.build_scaling(np.full(m, rng.uniform(0.2, 3.0))))

    # ------------------------------------------------------------ checks

    def commutativity(self):
        for name, sampler in self._pairs().items():
            t0 = time.perf_counter()
            worst = 0.0
            for _ in range(self.draws):
                a, b = sampler()
                worst = max(worst, Gr.commutator_defect(a, b))
            self._record(f"commute: {name}", worst, self.tol["commute"], t0)

    def equivariance(self, pairs_per_family: int = 20, samples: int = 100):
        for name, sampler in self._pairs().items():
            t0 = time.perf_counter()
            worst = 0.0
            for _ in range(pairs_per_family):
                a, b = sampler()
                Z = self.rng.standard_normal((samples, a.m))
                worst = max(worst, Gr.equivariance_check(a, b, Z))
            self._record(f"equivariance: {name}", worst, self.tol["equivariance"], t0)
        t0 = time.perf_counter()
        half = np.pi / 2
        a = Gr.build_rotation(np.eye(3)[:, [0, 1]], half)
        b = Gr.build_rotation(np.eye(3)[:, [1, 2]], half)
        Z = self.rng.standard_normal((100, 3))
        self._record("detector: non-commuting rotation planes", Gr.equivariance_check(a, b, Z), 0.1, t0, ">")

    def subgroup(self):
        t0 = time.perf_counter()
        worst_add, worst_gen = 0.0, 0.0
        for _ in range(self.draws // 4):
            a = self._fractionable()
            s, t = self.rng.uniform(0, 0.5, 2)
            lhs = Gr.compose_actions(Gr.fractional_action(a, s), Gr.fractional_action(a, t)).matrix()
            rhs = Gr.fractional_action(a, s + t).matrix()
            worst_add = max(worst_add, np.abs(lhs - rhs).max())
            via_gen = Gr.expm(self.gen(a).xi * s).data
            worst_gen = max(worst_gen, np.abs(via_gen - Gr.fractional_action(a, s).matrix()).max())
        self._record("subgroup: frac(s) frac(t) = frac(s+t)", worst_add, self.tol["subgroup"], t0)
        self._record("subgroup: exp(s * generator) = frac(s)", worst_gen, self.tol["subgroup"], t0)

    def roundtrip(self):
        t0 = time.perf_counter()
        worst, worst_ends = 0.0, 0.0
        for _ in range(self.draws // 4):
            a = self._fractionable()
            worst = max(worst, np.abs(Gr.expm(self.gen(a).xi).data - a.matrix()).max())
            one = np.abs(Gr.fractional_action(a, 1.0).matrix() - a.matrix()).max()
            zero = np.abs(Gr.fractional_action(a, 0.0).matrix() - np.eye(a.m + 1)).max()
            worst_ends = max(worst_ends, one, zero)
        self._record("round trip: exp(generator(a)) = a", worst, self.tol["roundtrip"], t0)
        self._record("round trip: frac(a,1) = a, frac(a,0) = I", worst_ends, self.tol["subgroup"], t0)

    def isometry(self):
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(self.draws):
            m = self._m()
            a = Gr.build_rotation(_rand_P(self.rng, m), self.rng.uniform(-np.pi, np.pi))
            z = self.rng.standard_normal(m)
            worst = max(worst, abs(np.linalg.norm(a.A.data @ z) - np.linalg.norm(z)))
        self._record("rotation isometry", worst, self.tol["isometry"], t0)

    def orthonormality(self):
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(self.draws):
            m = int(self.rng.integers(2, 9))
            P = Gr.orthonormalize_2col(self.rng.standard_normal((m, 2))).data
            worst = max(worst, np.abs(P.T @ P - np.eye(2)).max())
        self._record("orthonormality of Gram-Schmidt frame", worst, self.tol["orthonormal"], t0)

    def homogeneous(self, steps: int = 10_000, m: int = 3, K: int = 4):
        """Random mos_steps; the stored latent keeps an exact trailing 1 and matches the
        explicit homogeneous-matrix mixture."""
        t0 = time.perf_counter()
        rng = self.rng
        zt = Gr.HomogeneousLatent(rng.standard_normal(m))
        trail, worst, bottom = 0.0, 0.0, 0.0
        for _ in range(steps):
            P = _rand_P(rng, m)
            acts = [Gr.build_rotation(P, rng.uniform(-0.6, 0.6)),
                    Gr.build_translation(rng.standard_normal(m) * 1e-3),
                    Gr.build_scaling(rng.uniform(0.9, 1.1, m)),
                    Gr.compose_actions(Gr.build_scaling(rng.uniform(0.9, 1.1, m)),
                                       Gr.build_rotation(P, rng.uniform(-0.6, 0.6)))][:K]
            w = E.softmax(rng.standard_normal(K)).data
            mats = [a.matrix() for a in acts]
            explicit = sum(wk * M for wk, M in zip(w, mats)) @ zt.tilde()
            zt = Gr.mos_step(zt, acts, w)
            n = np.linalg.norm(zt.z.data)
            if n > 10 or n < 0.1:
                zt = Gr.HomogeneousLatent(zt.z.data / n)
                explicit = np.append(explicit[:-1] / n, explicit[-1])
            til = zt.tilde()
            trail = max(trail, abs(til[-1] - 1.0))
            worst = max(worst, np.abs(til[:-1] - explicit[:-1]).max() / max(1.0, np.abs(explicit).max()),
                        abs(explicit[-1] - 1.0))
            bottom = max(bottom, max(np.abs(M[-1] - np.eye(m + 1)[-1]).max() for M in mats))
        self._record("homogeneous: trailing coordinate exactly 1", trail, 0.0, t0, kind="=")
        self._record("homogeneous: bottom rows exactly (0,...,0,1)", bottom, 0.0, t0, kind="=")
        self._record("homogeneous: mos_step equals explicit mixture", worst, self.tol["homogeneous"], t0)

    def gradient_checks(self):
        from .gradcheck import (check_end_to_end, check_encoder, check_expert_constructors)

        tol = self.tol["gradient"]
        for name, fn in (("expert constructors (V, theta, v, gamma)", check_expert_constructors),
                         ("encoder, 3-observation trajectory", check_encoder),
                         ("end-to-end loss, m=4, S=2, 3 steps", check_end_to_end)):
            t0 = time.perf_counter()
            self._record(f"gradient: {name}", fn(seed=int(self.rng.integers(1 << 30))), tol, t0)

    def run(self) -> list[Check]:
        self.commutativity()
        self.equivariance()
        self.subgroup()
        self.roundtrip()
        self.isometry()
        self.orthonormality()
        self.homogeneous()
        if self.gradients:
            self.gradient_checks()
        return self.results


def run_suite(profile: str = "default", seed: int = 0, fault: str | None = None,
              draws: int = 1000, gradients: bool = True) -> list[Check]:
    return Suite(profile, seed, draws, fault, gradients).run()


def format_table(results: list[Check]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'property'.ljust(w)}  {'status':6}  {'worst':>10}  {'bound':>10}"]
    for r in results:
        op = r.kind
        lines.append(f"{r.name.ljust(w)}  {'PASS' if r.passed else 'FAIL':6}  {r.defect:10.3e}  {op}{r.tol:9.1e}")
    return "\n".join(lines)
