"""Parameter containers and the few layers every model here is built from."""
import numpy as np

from ..errors import StateError
from .functional import gelu, layer_norm, linear
from .tensor import Parameter


class Module:
    """Holds Parameters and child Modules as attributes (lists allowed)."""

    def named_parameters(self, prefix=""):
        seen = set()
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}", value, seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        names = set()
        for name, p in self.named_parameters(prefix):
            if name in names:
                raise StateError(f"duplicate parameter name {name!r}")
            names.add(name)
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise StateError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise StateError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()


def _walk(name, value, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        for key, child in vars(value).items():
            yield from _walk(f"{name}.{key}", child, seen)
    elif isinstance(value, (list, tuple)):
        for i, child in enumerate(value):
            yield from _walk(f"{name}.{i}", child, seen)


def init_normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, std=None, bias=True):
        std = d_in ** -0.5 if std is None else std
        self.weight = Parameter(init_normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """linear -> GELU -> linear."""

    def __init__(self, rng, d_in, d_hidden, d_out, out_std=None):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out, std=out_std)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))
