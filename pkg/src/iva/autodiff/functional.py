"""Fused differentiable ops backed by the row kernels."""
import numpy as np

from ..errors import DimensionError, DomainError
from . import kernels
from .tensor import _lift, _node

LAYER_NORM_EPS = 1e-5


def _rows(arr):
    """View ``arr`` as C-contiguous (rows, last_extent)."""
    return np.ascontiguousarray(arr).reshape(-1, arr.shape[-1])


def softmax(x, axis=-1, temperature=1.0):
    """Softmax of ``x / temperature`` along ``axis`` (max-subtracted)."""
    x = _lift(x)
    if temperature <= 0:
        raise DomainError(f"softmax temperature must be > 0, got {temperature}")
    if x.ndim == 0:
        raise DimensionError("softmax of a scalar")
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    inv_tau = 1.0 / temperature
    last = axis == x.ndim - 1
    moved = x.data if last else np.moveaxis(x.data, axis, -1)
    out = kernels.active.softmax_forward(_rows(moved), inv_tau).reshape(moved.shape)

    def backward(g):
        gm = g if last else np.moveaxis(g, axis, -1)
        gx = kernels.active.softmax_backward(_rows(out), _rows(gm), inv_tau).reshape(moved.shape)
        return (gx if last else np.moveaxis(gx, -1, axis),)

    return _node(out if last else np.ascontiguousarray(np.moveaxis(out, -1, axis)), (x,), backward)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError(f"layer_norm over zero-length last axis, shape {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} != last extent ({d},) of {x.shape}"
        )
    y, xhat, rstd = kernels.active.layer_norm_forward(_rows(x.data), gain.data, bias.data, eps)

    def backward(g):
        gx, gg, gb = kernels.active.layer_norm_backward(_rows(g), xhat, rstd, gain.data)
        return gx.reshape(x.shape), gg, gb

    return _node(y.reshape(x.shape), (x, gain, bias), backward)


def gelu(x):
    """Tanh-approximated GELU, written as x * sigmoid(2u)."""
    x = _lift(x)
    if x.ndim == 0:
        x = x.reshape((1,))
    flat = _rows(x.data)
    out, sig = kernels.active.gelu_forward(flat)
    return _node(
        out.reshape(x.shape), (x,),
        lambda g: (kernels.active.gelu_backward(flat, sig, _rows(g)).reshape(x.shape),),
    )


def embedding(table, ids):
    """Rows of ``table`` (V x d) selected by integer ``ids`` of any shape."""
    table = _lift(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"token id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _node(out, (table,), backward)


def cross_entropy(logits, targets, weights=None):
    """Weighted mean token cross-entropy.

    ``logits`` is (..., V); ``targets`` holds integer ids with the leading
    shape.  ``weights`` (same shape as ``targets``) marks which positions
    count; the loss is ``sum(w * nll) / sum(w)``.  Positions with zero
    weight get exactly zero gradient.
    """
    logits = _lift(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} != logits leading shape {logits.shape[:-1]}")
    if weights is None:
        weights = np.ones(targets.shape)
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise DomainError("cross_entropy needs at least one weighted position")
    flat_t = np.ascontiguousarray(targets.reshape(-1))
    if flat_t.size and (flat_t.min() < 0 or flat_t.max() >= logits.shape[-1]):
        raise DomainError(f"target id out of range [0, {logits.shape[-1]})")
    flat_w = np.ascontiguousarray(weights.reshape(-1)) / total
    rows = _rows(logits.data)
    nll, probs = kernels.active.cross_entropy_forward(rows, flat_t, flat_w)

    def backward(g):
        gl = kernels.active.cross_entropy_backward(probs, flat_t, flat_w, np.full(flat_t.size, float(g)))
        return (gl.reshape(logits.shape),)

    return _node(np.array(nll.sum()), (logits,), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored (in, out)."""
    y = x @ weight
    return y if bias is None else y + bias
