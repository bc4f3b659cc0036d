"""Parameter containers and the tanh MLPs used throughout the model."""
from __future__ import annotations

import numpy as np

from . import engine as E
from .engine import Parameter, Tensor


class Module:
    """Minimal parameter container; child modules are discovered by attribute order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "linear"):
        a = 1.0 / np.sqrt(n_in)
        self.W = Parameter(rng.uniform(-a, a, size=(n_in, n_out)), f"{name}.W")
        self.b = Parameter(rng.uniform(-a, a, size=(n_out,)), f"{name}.b")

    def __call__(self, x) -> Tensor:
        return E.matmul(x, self.W) + self.b


class MLP(Module):
    """``n_in -> hidden -> hidden -> n_out`` with tanh after each hidden layer."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, name: str = "mlp"):
        self.l1 = Linear(n_in, hidden, rng, f"{name}.l1")
        self.l2 = Linear(hidden, hidden, rng, f"{name}.l2")
        self.l3 = Linear(hidden, n_out, rng, f"{name}.l3")
        self.n_in, self.hidden, self.n_out = n_in, hidden, n_out

    def __call__(self, x) -> Tensor:
        return self.l3(E.tanh(self.l2(E.tanh(self.l1(x)))))

    def weights(self) -> tuple[Parameter, ...]:
        return (self.l1.W, self.l1.b, self.l2.W, self.l2.b, self.l3.W, self.l3.b)

    def zero_init(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0
