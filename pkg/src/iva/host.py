"""Decoder-only host language model and the full video-LLM built around it.

The assembled input sequence is ``[video tokens | text | dynamic tokens |
response]``; the response span is empty at inference and holds the
teacher-forced target tokens during training.  The adapter runs before
each scheduled decoder layer and only touches the dynamic-token rows.
"""
import json
import os
from dataclasses import dataclass

import numpy as np

from .adapter import IvaAdapter, VisualContext, apply_iva, injection_schedule
from .attention import CausalSelfAttention
from .autodiff import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    embedding,
    serialize,
)
from .config import ModelConfig
from .errors import CapacityError, ConfigError, DimensionError
from .tokenizer import VideoTokenizer, batch_features

SEGMENTS = ("video", "text", "dynamic", "response")


class DecoderBlock(Module):
    def __init__(self, rng, d, heads):
        self.ln_attn = LayerNorm(d)
        self.attn = CausalSelfAttention(rng, d, heads)
        self.ln_mlp = LayerNorm(d)
        self.mlp = MLP(rng, d, 4 * d, d)

    def __call__(self, h):
        h = h + self.attn(self.ln_attn(h))
        return h + self.mlp(self.ln_mlp(h))


class HostLM(Module):
    def __init__(self, config, rng):
        self.config = config
        d = config.d_m
        self.tok_emb = Parameter(rng.normal(0.0, 1.0, size=(config.vocab_size, d)))
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(config.max_seq_len, d)))
        self.blocks = [DecoderBlock(rng, d, config.heads) for _ in range(config.layers)]
        self.ln_f = LayerNorm(d)
        self.head = None if config.tied_embeddings else Linear(rng, d, config.vocab_size, bias=False)

    def logits(self, hidden):
        if self.head is None:
            return hidden @ self.tok_emb.swapaxes(0, 1)
        return self.head(hidden)


@dataclass
class AssembledInput:
    embeddings: Tensor
    spans: dict          # segment name -> (start, stop)

    @property
    def length(self):
        return self.embeddings.shape[1]

    @property
    def dyn_positions(self):
        start, stop = self.spans["dynamic"]
        return range(start, stop)

    def segment_of(self, position):
        for name in SEGMENTS:
            start, stop = self.spans[name]
            if start <= position < stop:
                return name
        raise IndexError(position)


class IvaModel(Module):
    """Video tokenizer + host LM + dynamic query tokens + (optional) shared adapter.

    With ``use_iva=False`` (or no adapter) this is the no-adapter baseline;
    the dynamic tokens are still appended so both variants see identical
    inputs.
    """

    def __init__(self, config: ModelConfig, seed=0, with_iva=True, iva_out_std=0.0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.tokenizer = VideoTokenizer(config.tokenizer, rng)
        self.host = HostLM(config.host, rng)
        self.dyn_tokens = Parameter(rng.normal(0.0, 0.02, size=(config.iva.lq, config.host.d_m)))
        self.iva = IvaAdapter(config.iva, config.tokenizer.d_v, rng, out_std=iva_out_std) if with_iva else None
        self.schedule = injection_schedule(config.host.layers, config.iva.ni)
        self.assign_names()

    # -- input assembly ------------------------------------------------------
    def build_input(self, video_tokens, text_ids, with_dynamic=True, response_ids=None):
        """Concatenate video tokens, embedded text, dynamic tokens and response embeddings.

        ``text_ids``/``response_ids`` are (B, L) integer arrays (L may be 0).
        Learned positions are added over the whole sequence.
        """
        vt = video_tokens.tokens if hasattr(video_tokens, "tokens") else video_tokens
        B, n_video, d = vt.shape
        text_ids = np.asarray(text_ids, dtype=np.int64).reshape(B, -1)
        response_ids = (np.zeros((B, 0), dtype=np.int64) if response_ids is None
                        else np.asarray(response_ids, dtype=np.int64).reshape(B, -1))
        M = self.config.iva.lq if with_dynamic else 0
        n_text, n_resp = text_ids.shape[1], response_ids.shape[1]
        T = n_video + n_text + M + n_resp
        if T > self.config.host.max_seq_len:
            raise CapacityError(f"sequence length {T} exceeds max_seq_len {self.config.host.max_seq_len}")
        parts = [vt]
        if n_text:
            parts.append(embedding(self.host.tok_emb, text_ids))
        if M:
            dyn = self.dyn_tokens.reshape(1, M, d)
            parts.append(dyn if B == 1 else concat([dyn] * B, axis=0))
        if n_resp:
            parts.append(embedding(self.host.tok_emb, response_ids))
        seq = concat(parts, axis=1) if len(parts) > 1 else parts[0]
        seq = seq + self.host.pos_emb[:T]
        bounds = np.cumsum([0, n_video, n_text, M, n_resp])
        spans = {name: (int(bounds[i]), int(bounds[i + 1])) for i, name in enumerate(SEGMENTS)}
        return AssembledInput(seq, spans)

    # -- forward -------------------------------------------------------------
    def hidden_states(self, assembled, global_feats=None, fine_feats=None, use_iva=True, site_adapters=None):
        """Final-norm hidden states (B, T, d_m).

        ``site_adapters`` maps a scheduled layer index to the adapter used
        there; by default every site shares ``self.iva``.
        """
        h = assembled.embeddings
        has_dyn = assembled.spans["dynamic"][1] > assembled.spans["dynamic"][0]
        run_iva = use_iva and has_dyn and (self.iva is not None or site_adapters)
        if run_iva and site_adapters is None:
            site_adapters = {i: self.iva for i in self.schedule}
        contexts = {}
        dyn_stop = assembled.spans["dynamic"][1]
        for i, block in enumerate(self.host.blocks):
            adapter = site_adapters.get(i) if run_iva else None
            if adapter is not None:
                if id(adapter) not in contexts:
                    contexts[id(adapter)] = VisualContext.build(adapter, global_feats, fine_feats)
                context = contexts[id(adapter)]
                if dyn_stop == h.shape[1]:
                    h = apply_iva(h, assembled.dyn_positions, context, adapter)
                else:
                    head = apply_iva(h[:, :dyn_stop], assembled.dyn_positions, context, adapter)
                    h = concat([head, h[:, dyn_stop:]], axis=1)
            h = block(h)
        return self.host.ln_f(h)

    def forward(self, assembled, global_feats=None, fine_feats=None, use_iva=True):
        """(B, T, vocab) next-token logits."""
        return self.host.logits(self.hidden_states(assembled, global_feats, fine_feats, use_iva))

    def encode(self, global_feats, fine_feats, text_ids, response_ids=None, with_dynamic=True):
        vt = self.tokenizer(global_feats, fine_feats)
        return self.build_input(vt, text_ids, with_dynamic, response_ids)

    def loss(self, global_feats, fine_feats, text_ids, response_ids, with_dynamic=True, use_iva=True):
        """Mean cross-entropy of ``response_ids``; each token is predicted from the position before it."""
        response_ids = np.asarray(response_ids, dtype=np.int64)
        if response_ids.ndim != 2 or response_ids.shape[1] == 0:
            raise DimensionError(f"response_ids must be (B, L>0), got {response_ids.shape}")
        assembled = self.encode(global_feats, fine_feats, text_ids, response_ids, with_dynamic)
        h = self.hidden_states(assembled, global_feats, fine_feats, use_iva)
        start = assembled.spans["response"][0] - 1
        stop = assembled.spans["response"][1] - 1
        logits = self.host.logits(h[:, start:stop])
        return cross_entropy(logits, response_ids)

    # -- decoding ------------------------------------------------------------
    def generate(self, global_feats, fine_feats, text_ids, max_new, use_iva=True, stop_token=None):
        """Greedy decoding after ``[video | text | dynamic]``; returns (B, <=max_new) ids."""
        text_ids = np.asarray(text_ids, dtype=np.int64)
        B = text_ids.shape[0]
        vt = self.tokenizer(global_feats, fine_feats)
        out = np.zeros((B, 0), dtype=np.int64)
        for _ in range(max_new):
            assembled = self.build_input(vt, text_ids, True, out)
            h = self.hidden_states(assembled, global_feats, fine_feats, use_iva)
            logits = self.host.logits(h[:, -1:]).data[:, 0]
            nxt = logits.argmax(axis=-1)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            if stop_token is not None and np.all(nxt == stop_token):
                break
        return out

    def predict_videos(self, videos, questions, max_new=1, use_iva=True):
        g, f = batch_features(videos)
        return self.generate(g, f, np.asarray(questions), max_new, use_iva)

    # -- persistence -----------------------------------------------------------
    def save(self, directory, extra=None):
        serialize.save_named(directory, self.state_dict())
        meta = {"model": self.config.to_dict(), "with_iva": self.iva is not None}
        if extra:
            meta.update(extra)
        with open(os.path.join(directory, "config.json"), "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "config.json")) as fh:
            meta = json.load(fh)
        if "model" not in meta:
            raise ConfigError(f"{directory}/config.json has no 'model' section")
        model = cls(ModelConfig.from_dict(meta["model"]), with_iva=meta.get("with_iva", True))
        model.load_state_dict(serialize.load_named(directory))
        return model
