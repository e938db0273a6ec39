import numpy as np
import pytest

from iva.config import ModelConfig
from iva.host import IvaModel


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def norm_rel_err(a, b, floor=1e-3):
    """Per-tensor relative error ||a - b|| / max(||a||, ||b||, floor).

    The floor keeps parameters whose true gradient is zero (biases under a
    shift-invariant softmax) from dividing finite-difference noise by ~0.
    """
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def small_config(**kw):
    base = dict(vocab_size=12, d_m=16, layers=2, heads=4, max_seq_len=24, d_v=8, ct_heads=2,
                ct_layers=2, lq=2, ni=1, d_s=8, iva_depth=1)
    base.update(kw)
    return ModelConfig.build(**base)


def randomize_queries(model, seed=1, std=0.3):
    """Move zero-initialized query projections so every adapter path carries gradient."""
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        if name.endswith("_q.weight"):
            p.data = rng.normal(0.0, std, p.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_model():
    return randomize_queries(IvaModel(small_config(), seed=0, iva_out_std=0.3))
