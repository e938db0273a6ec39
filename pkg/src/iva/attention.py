"""Multi-head causal self-attention shared by the frame transformer and the host model."""
import numpy as np

from .autodiff import Linear, Module, softmax

_MASKS = {}


def causal_mask(T):
    """(T, T) additive mask: 0 on and below the diagonal, -inf above."""
    m = _MASKS.get(T)
    if m is None:
        m = np.triu(np.full((T, T), -np.inf), k=1)
        m.setflags(write=False)
        _MASKS[T] = m
    return m


class CausalSelfAttention(Module):
    def __init__(self, rng, d, heads):
        self.heads = heads
        self.qkv = Linear(rng, d, 3 * d)
        self.out = Linear(rng, d, d)

    def _probs_and_values(self, x):
        B, T, d = x.shape
        dh = d // self.heads
        qkv = self.qkv(x).reshape(B, T, 3, self.heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.swapaxes(-1, -2)) * (dh ** -0.5) + causal_mask(T)
        return softmax(scores, axis=-1), v

    def __call__(self, x):
        B, T, d = x.shape
        attn, v = self._probs_and_values(x)
        return self.out((attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d))

    def attention_weights(self, x):
        """The (B, H, T, T) attention probabilities, for inspection."""
        return self._probs_and_values(x)[0]
