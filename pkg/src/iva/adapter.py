"""The interactive visual adapter: a frame selector followed by a patch interactor.

One adapter instance is shared by every injection point of the host
model.  At an injection point it reads the hidden states of the M dynamic
query tokens (the last M rows of the sequence, layer-normalized), and per query token:

1. selector: attends over frames using the frames' global features as
   keys (temperature ``tau``) and returns the attention-weighted blend of
   each frame's projected patch features, ``(M, P, d_s)``;
2. interactor: attends over the P patch slots of that blend (no
   temperature), takes the weighted sum of projected slots and passes it
   through a residual MLP.

``iva_depth`` such pairs are stacked, each consuming the previous pair's
output; a final projection back to the host width is added to the
dynamic-token rows.  All other rows pass through untouched.
"""
from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, LayerNorm, Linear, Module, Tensor, concat, softmax
from .config import IvaConfig
from .errors import ContractError, DimensionError, DomainError


def injection_schedule(layers, ni):
    """Evenly spaced decoder-layer indices; the adapter runs before each."""
    if not 1 <= ni <= layers:
        raise DomainError(f"need 1 <= ni <= layers, got ni={ni}, layers={layers}")
    return [i * layers // ni for i in range(ni)]


class SelectorInteractor(Module):
    def __init__(self, rng, d_in, d_v, d_s, qk_std=0.0):
        # zero query weights start both attentions uniform; a random start
        # commits each sample to arbitrary frames and patches before any signal exists
        # selector: queries from hidden, keys from frame globals, values from frame patches
        self.sel_q = Linear(rng, d_in, d_s, std=qk_std)
        self.sel_k = Linear(rng, d_v, d_s)
        self.sel_v = Linear(rng, d_v, d_s)
        # interactor
        self.int_q = Linear(rng, d_in, d_s, std=qk_std)
        self.int_k = Linear(rng, d_s, d_s)
        self.int_v = Linear(rng, d_s, d_s)
        self.mlp = MLP(rng, d_s, 2 * d_s, d_s)


class IvaAdapter(Module):
    def __init__(self, config: IvaConfig, d_v, rng, out_std=0.0):
        self.config = config
        d_m, d_s = config.d_m, config.d_s
        # queries read a normalized copy of the residual stream, whose scale grows with depth
        self.ln_in = LayerNorm(d_m)
        self.pairs = [
            SelectorInteractor(rng, d_m if i == 0 else d_s, d_v, d_s) for i in range(config.iva_depth)
        ]
        self.out_proj = Linear(rng, d_s, d_m, std=out_std)

    def context(self, global_feats, fine_feats):
        return VisualContext.build(self, global_feats, fine_feats)


@dataclass
class VisualContext:
    """Per-pair selector keys (B, N, d_s) and values (B, N, P, d_s).

    These depend only on the video and the shared parameters, so one
    context serves every injection point of a forward pass.
    """

    keys: list
    values: list

    @classmethod
    def build(cls, adapter, global_feats, fine_feats):
        g = global_feats if isinstance(global_feats, Tensor) else Tensor(global_feats)
        f = fine_feats if isinstance(fine_feats, Tensor) else Tensor(fine_feats)
        if g.ndim != 3 or f.ndim != 4 or g.shape[:2] != f.shape[:2] or g.shape[2] != f.shape[3]:
            raise DimensionError(f"global {g.shape} and fine {f.shape} are not (B,N,d_v)/(B,N,P,d_v)")
        return cls([p.sel_k(g) for p in adapter.pairs], [p.sel_v(f) for p in adapter.pairs])


def selector_attention(dyn_hidden, keys, pair, tau):
    """(B, M, N) softmax over frames of (W^q h + b^q)(W^k g + b^k)^T / tau."""
    if tau <= 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    q = pair.sel_q(dyn_hidden)
    if q.shape[0] != keys.shape[0]:
        raise DimensionError(f"batch of queries {q.shape} and keys {keys.shape} differ")
    return softmax(q @ keys.swapaxes(-1, -2), axis=-1, temperature=tau)


def select_frames(dyn_hidden, global_feats, fine_feats, pair, tau, values=None, keys=None):
    """Selected features (B, M, P, d_s): per query, the frame-attention blend of patch values."""
    dyn_hidden = dyn_hidden if isinstance(dyn_hidden, Tensor) else Tensor(dyn_hidden)
    if keys is None or values is None:
        g = global_feats if isinstance(global_feats, Tensor) else Tensor(global_feats)
        f = fine_feats if isinstance(fine_feats, Tensor) else Tensor(fine_feats)
        if g.shape[:-1] != f.shape[:2]:
            raise DimensionError(f"global {g.shape} and fine {f.shape} disagree on frames")
        keys = pair.sel_k(g)
        values = pair.sel_v(f)
    B, N, P, d_s = values.shape
    attn = selector_attention(dyn_hidden, keys, pair, tau)
    M = attn.shape[1]
    return (attn @ values.reshape(B, N, P * d_s)).reshape(B, M, P, d_s)


def interaction_attention(dyn_hidden, selected, pair):
    """(B, M, 1, P): per query token, softmax over its own P selected slots."""
    B, M, P, d_s = selected.shape
    if dyn_hidden.shape[:2] != (B, M):
        raise DimensionError(f"queries {dyn_hidden.shape} do not match selected {selected.shape}")
    q = pair.int_q(dyn_hidden).reshape(B, M, 1, d_s)
    return softmax(q @ pair.int_k(selected).swapaxes(-1, -2), axis=-1)


def interact(dyn_hidden, selected, pair, out_proj=None):
    """Residual-MLP output of patch attention, (B, M, d_s); projected if ``out_proj`` is given."""
    dyn_hidden = dyn_hidden if isinstance(dyn_hidden, Tensor) else Tensor(dyn_hidden)
    B, M, P, d_s = selected.shape
    attn = interaction_attention(dyn_hidden, selected, pair)
    ctx = (attn @ pair.int_v(selected)).reshape(B, M, d_s)
    core = pair.mlp(ctx) + ctx
    return core if out_proj is None else out_proj(core)


def adapter_delta(dyn_hidden, context, adapter):
    """Run the stacked pairs on (B, M, d_m) dynamic states; returns the (B, M, d_m) update."""
    h = adapter.ln_in(dyn_hidden)
    tau = adapter.config.tau
    for pair, keys, values in zip(adapter.pairs, context.keys, context.values):
        h = interact(h, select_frames(h, None, None, pair, tau, values=values, keys=keys), pair)
    return adapter.out_proj(h)


def apply_iva(hidden, dyn_positions, context, adapter):
    """Add the adapter update to the dynamic-token rows of ``hidden`` (B, T, d_m).

    ``dyn_positions`` must be the last M positions.  ``context`` is either a
    VisualContext or a ``(global_feats, fine_feats)`` pair.
    """
    hidden = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    B, T, d_m = hidden.shape
    M = adapter.config.lq
    dyn_positions = list(dyn_positions)
    if dyn_positions != list(range(T - M, T)):
        raise ContractError(
            f"dynamic positions must be the final {M} of {T}, got {dyn_positions[:3]}..."
        )
    if not isinstance(context, VisualContext):
        context = VisualContext.build(adapter, *context)
    start = T - M
    dyn = hidden[:, start:]
    updated = dyn + adapter_delta(dyn, context, adapter)
    if start == 0:
        return updated
    return concat([hidden[:, :start], updated], axis=1)


def zero_output(adapter):
    """Zero the final projection so the adapter becomes an exact identity."""
    adapter.out_proj.weight.data = np.zeros_like(adapter.out_proj.weight.data)
    adapter.out_proj.bias.data = np.zeros_like(adapter.out_proj.bias.data)
