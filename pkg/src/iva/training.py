"""Two-stage training, conversation flattening and the gradient-check harness."""
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import AdamW, cosine_lr
from .errors import ConfigError, DimensionError, DomainError, NumericError
from .features import CaptionSample, NeedleSample

logger = logging.getLogger(__name__)

# The pretrained video-token path moves more slowly than the rest in stage 2.
STAGE2_TOKENIZER_LR_SCALE = 0.2


# -- conversations ------------------------------------------------------------

@dataclass
class ConversationSample:
    rounds: list          # [(question ids, answer ids), ...]
    video: object = None  # FrameFeatureSet

    def __post_init__(self):
        if len(self.rounds) < 1:
            raise DomainError("a conversation needs at least one round")
        self.rounds = [(list(q), list(a)) for q, a in self.rounds]

    def max_token(self):
        return max(max(q + a, default=-1) for q, a in self.rounds)


def flatten_conversation(sample, r):
    """Input ids and target ids for round ``r`` (1-based).

    Round 1 is just Q_1; later rounds prepend every earlier (Q, A) pair.
    """
    if not 1 <= r <= len(sample.rounds):
        raise DomainError(f"round {r} outside [1, {len(sample.rounds)}]")
    ids = []
    for q, a in sample.rounds[:r - 1]:
        ids.extend(q)
        ids.extend(a)
    ids.extend(sample.rounds[r - 1][0])
    return ids, list(sample.rounds[r - 1][1])


# -- examples -------------------------------------------------------------------

@dataclass
class Example:
    """One training sequence: video, conditioning text, target response."""

    global_feats: np.ndarray
    fine_feats: np.ndarray
    text: list
    response: list

    def key(self):
        return self.fine_feats.shape, len(self.text), len(self.response)


def to_examples(sample):
    if isinstance(sample, CaptionSample):
        return [Example(sample.features.global_feats, sample.features.fine_feats, [], sample.caption)]
    if isinstance(sample, NeedleSample):
        return [Example(sample.features.global_feats, sample.features.fine_feats,
                        sample.question, sample.answer)]
    if isinstance(sample, ConversationSample):
        out = []
        for r in range(1, len(sample.rounds) + 1):
            text, target = flatten_conversation(sample, r)
            out.append(Example(sample.video.global_feats, sample.video.fine_feats, text, target))
        return out
    raise TypeError(f"unsupported sample type {type(sample).__name__}")


def batch_loss(model, examples, with_dynamic, use_iva):
    """Token-weighted mean loss over a list of examples, grouped by shape."""
    groups = {}
    for ex in examples:
        groups.setdefault(ex.key(), []).append(ex)
    total_tokens = sum(len(ex.response) for ex in examples)
    loss = None
    for group in groups.values():
        g = np.stack([ex.global_feats for ex in group])
        f = np.stack([ex.fine_feats for ex in group])
        text = np.array([ex.text for ex in group], dtype=np.int64).reshape(len(group), -1)
        resp = np.array([ex.response for ex in group], dtype=np.int64)
        part = model.loss(g, f, text, resp, with_dynamic=with_dynamic, use_iva=use_iva)
        part = part * (resp.size / total_tokens)
        loss = part if loss is None else loss + part
    return loss


# -- stage plans ----------------------------------------------------------------

def _stage1_trainable(name):
    return name.startswith("tokenizer.") or name == "host.tok_emb"


def _stage2_trainable(name):
    return name != "host.tok_emb"


@dataclass
class StagePlan:
    stage: int
    iva_enabled: bool
    trainable: object = None     # callable(name) -> bool
    lr_scale: object = None      # callable(name) -> float

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 1 and self.iva_enabled:
            raise ConfigError("stage 1 trains without the adapter (iva_enabled must be false)")
        if self.stage == 2 and not self.iva_enabled:
            raise ConfigError("stage 2 plans enable the adapter (iva_enabled must be true)")
        if self.trainable is None:
            self.trainable = _stage1_trainable if self.stage == 1 else _stage2_trainable
        if self.lr_scale is None:
            if self.stage == 2:
                self.lr_scale = lambda n: STAGE2_TOKENIZER_LR_SCALE if n.startswith("tokenizer.") else 1.0
            else:
                self.lr_scale = lambda n: 1.0

    @classmethod
    def for_stage(cls, stage):
        return cls(stage=stage, iva_enabled=(stage == 2))

    def apply(self, model):
        """Freeze everything outside the trainable set; returns the live parameters."""
        live = []
        for name, p in model.named_parameters():
            p.frozen = not self.trainable(name)
            if not p.frozen:
                live.append(p)
        return live


@dataclass
class OptimConfig:
    lr: float = 3e-4
    batch: int = 8
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    warmup_steps: int = 0
    min_lr: float = 0.0
    seed: int = 0


@dataclass
class TrainingLog:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    evals: list = field(default_factory=list)   # (step, metric)
    seconds: float = 0.0

    def record(self, step, loss, lr):
        self.steps.append(step)
        self.losses.append(loss)
        self.lrs.append(lr)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "lr"])
            for row in zip(self.steps, self.losses, self.lrs):
                w.writerow(row)


def check_vocabulary(model, examples):
    vocab = model.config.host.vocab_size
    for ex in examples:
        top = max(ex.text + ex.response, default=-1)
        if top >= vocab or min(ex.text + ex.response, default=0) < 0:
            raise ConfigError(f"token id {top} outside model vocabulary of size {vocab}")


def run_stage(model, plan, dataset, steps, optim=None, eval_fn=None, eval_every=0, stop_metric=None):
    """Train ``model`` under ``plan`` for ``steps`` AdamW steps with a cosine schedule.

    ``eval_fn(model) -> float`` runs every ``eval_every`` steps; training
    stops early once it reaches ``stop_metric``.
    """
    optim = optim or OptimConfig()
    examples = [ex for s in dataset for ex in to_examples(s)]
    if not examples:
        raise ConfigError("empty dataset")
    check_vocabulary(model, examples)
    live = plan.apply(model)
    opt = AdamW(live, lr=optim.lr, betas=optim.betas, weight_decay=optim.weight_decay,
                lr_scale={p.name: plan.lr_scale(p.name) for p in live})
    use_iva = plan.iva_enabled
    with_dynamic = plan.stage == 2
    rng = np.random.default_rng(optim.seed)
    log = TrainingLog()
    t0 = time.perf_counter()
    for step in range(steps):
        lr = cosine_lr(step, steps, optim.lr, optim.min_lr, optim.warmup_steps)
        idx = rng.choice(len(examples), size=min(optim.batch, len(examples)), replace=False)
        model.zero_grad()
        loss = batch_loss(model, [examples[i] for i in idx], with_dynamic, use_iva)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss at step {step}")
        loss.backward()
        opt.step(lr)
        log.record(step, value, lr)
        if eval_fn is not None and eval_every and (step + 1) % eval_every == 0:
            metric = eval_fn(model)
            log.evals.append((step + 1, metric))
            logger.info("step %d loss %.4f eval %.4f", step + 1, value, metric)
            if stop_metric is not None and metric >= stop_metric:
                break
    log.seconds = time.perf_counter() - t0
    return log


# -- gradient checking ---------------------------------------------------------

REL_ERR_FLOOR = 1e-5


def relative_error(analytic, numeric, floor=REL_ERR_FLOOR):
    """``|a - n| / max(|a|, |n|, floor)``; the floor absorbs finite-difference round-off."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _find_nonfinite_op(root):
    """Name of the earliest op in the graph of ``root`` whose output is not finite.

    A non-finite leaf is reported by its parameter name instead.
    """
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)      # post-order: inputs before the ops that use them
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents if id(p) not in seen)
    for node in order:
        if not np.all(np.isfinite(node.data)):
            fn = node._backward
            if fn is None:
                return f"input {getattr(node, 'name', '') or node.shape}"
            return fn.__qualname__.split(".")[0]
    return "unknown"


@dataclass
class GradReport:
    entries: list         # [(name, max relative error, coordinates checked)] sorted descending

    @property
    def max_error(self):
        return max((e[1] for e in self.entries), default=0.0)

    def to_json(self):
        return json.dumps([{"param": n, "max_rel_err": e, "checked": c} for n, e, c in self.entries])


def gradcheck_model(model, example, eps=1e-6, subset=None, seed=0, use_iva=True, with_dynamic=True):
    """Central-difference check of every non-frozen parameter against backprop.

    ``subset`` limits the number of coordinates checked per parameter
    (random, seeded); ``None`` checks all of them.
    """
    if isinstance(example, (NeedleSample, CaptionSample, ConversationSample)):
        example = to_examples(example)[0]

    def loss_value():
        return batch_loss(model, [example], with_dynamic, use_iva)

    model.zero_grad()
    loss = loss_value()
    if not np.isfinite(loss.item()):
        raise NumericError(f"non-finite loss; first bad op: {_find_nonfinite_op(loss)}")
    loss.backward()
    rng = np.random.default_rng(seed)
    entries = []
    for name, p in model.named_parameters():
        if p.frozen:
            continue
        if p.grad is None:
            raise DimensionError(f"{name} received no gradient")
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if subset is not None and subset < flat.size:
            coords = rng.choice(flat.size, size=subset, replace=False)
        worst = 0.0
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            up = loss_value().item()
            flat[c] = old - eps
            down = loss_value().item()
            flat[c] = old
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[c], numeric)))
        entries.append((name, worst, len(coords)))
    entries.sort(key=lambda e: e[1], reverse=True)
    return GradReport(entries)


def save_log(path, log):
    with open(path, "w") as fh:
        json.dump(asdict(log), fh)
