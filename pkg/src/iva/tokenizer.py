"""Frame features -> host-model video tokens.

Per frame, the P patch features are pooled with self-computed softmax
weights; the pooled frames go through a stack of causal transformer
layers; the result is projected into the host width and interleaved with
the projected global feature, giving tokens ``(temporal_0, global_0,
temporal_1, global_1, ...)``.

All functions take batched inputs: fine features ``(B, N, P, d_v)`` and
global features ``(B, N, d_v)``.
"""
from dataclasses import dataclass

import numpy as np

from .attention import CausalSelfAttention
from .autodiff import MLP, LayerNorm, Linear, Module, Parameter, Tensor, softmax, stack
from .config import TokenizerConfig


class CausalFrameLayer(Module):
    """h_s = Attn(LN(h)) + h;  out = MLP(LN(h_s)).  No residual around the MLP."""

    def __init__(self, rng, d, heads):
        self.ln_attn = LayerNorm(d)
        self.attn = CausalSelfAttention(rng, d, heads)
        self.ln_mlp = LayerNorm(d)
        self.mlp = MLP(rng, d, 2 * d, d)

    def __call__(self, h):
        hs = self.attn(self.ln_attn(h)) + h
        return self.mlp(self.ln_mlp(hs))


class VideoTokenizer(Module):
    def __init__(self, config: TokenizerConfig, rng):
        self.config = config
        d_v, d_m = config.d_v, config.d_m
        self.pool_W = Parameter(rng.normal(0.0, d_v ** -0.5, size=(d_v, 1)))
        self.pool_b = Parameter(np.zeros(1))
        self.ct_layers = [CausalFrameLayer(rng, d_v, config.ct_heads) for _ in range(config.ct_layers)]
        self.temporal_proj = Linear(rng, d_v, d_m)
        self.global_proj = MLP(rng, d_v, 2 * d_m, d_m)

    def __call__(self, global_feats, fine_feats):
        return produce_video_tokens(global_feats, fine_feats, self)


def pool_weights(fine, params):
    """Softmax over patches of ``fine @ W + b``: shape (B, N, 1, P)."""
    fine = fine if isinstance(fine, Tensor) else Tensor(fine)
    B, N, P, _ = fine.shape
    scores = (fine @ params.pool_W + params.pool_b).reshape(B, N, 1, P)
    return softmax(scores, axis=-1)


def self_weighted_pool(fine, params):
    """(B, N, P, d_v) -> (B, N, d_v): the pool-weighted sum of each frame's patches."""
    fine = fine if isinstance(fine, Tensor) else Tensor(fine)
    B, N, P, d_v = fine.shape
    return (pool_weights(fine, params) @ fine).reshape(B, N, d_v)


def causal_transform(pooled, params):
    """Run the causal frame layers over (B, N, d_v); frame k sees frames <= k only."""
    h = pooled if isinstance(pooled, Tensor) else Tensor(pooled)
    for layer in params.ct_layers:
        h = layer(h)
    return h


@dataclass
class VideoTokenSequence:
    """(B, 2N, d_m) tokens; frame k owns positions 2k (temporal) and 2k+1 (global)."""

    tokens: Tensor

    @property
    def num_frames(self):
        return self.tokens.shape[1] // 2

    def temporal_positions(self):
        return list(range(0, self.tokens.shape[1], 2))

    def global_positions(self):
        return list(range(1, self.tokens.shape[1], 2))


def produce_video_tokens(global_feats, fine_feats, params):
    temporal = params.temporal_proj(causal_transform(self_weighted_pool(fine_feats, params), params))
    glob = params.global_proj(global_feats if isinstance(global_feats, Tensor) else Tensor(global_feats))
    B, N, d_m = glob.shape
    return VideoTokenSequence(stack([temporal, glob], axis=2).reshape(B, 2 * N, d_m))


def batch_features(videos):
    """Stack FrameFeatureSets of equal shape into (B, N, d_v) and (B, N, P, d_v) arrays."""
    g = np.stack([v.global_feats for v in videos])
    f = np.stack([v.fine_feats for v in videos])
    return g, f
