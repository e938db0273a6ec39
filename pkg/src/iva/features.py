"""Synthetic frame features standing in for a frozen image encoder.

Each video has ``N`` frames; each frame has one global vector and ``P``
fine-grained patch vectors of width ``d_v``, all standard normal.  The
needle task plants the answer in a single fine-grained slot:

* the key frame's global feature carries a marker, so the frame can be
  found, but no global feature says anything about the answer;
* one patch of that frame carries the needle: the answer class direction
  plus the tag of the family named by the question, each at ``signal_norm``;
* every other slot is plain noise.

Pooled summaries dilute the needle by the patch count (per frame) or the
slot count (per video), so reading it back takes attention that can pick
one patch out of one frame.
"""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import serialize
from .errors import DomainError, FormatError

PAD, BOS, SEP, ASK = 0, 1, 2, 3
NUM_SPECIAL = 4

# Needle directions are fixed across datasets so train and test share them.
BASIS_SEED = 1729


@dataclass
class FrameFeatureSet:
    global_feats: np.ndarray
    fine_feats: np.ndarray
    seed: int = None

    def __post_init__(self):
        g = np.asarray(self.global_feats, dtype=np.float64)
        f = np.asarray(self.fine_feats, dtype=np.float64)
        if g.ndim != 2 or f.ndim != 3:
            raise DomainError(f"expected global (N, d_v) and fine (N, P, d_v), got {g.shape} and {f.shape}")
        if g.shape[0] < 1 or f.shape[1] < 1 or g.shape[1] < 1:
            raise DomainError(f"extents must be >= 1, got global {g.shape}, fine {f.shape}")
        if f.shape[0] != g.shape[0] or f.shape[2] != g.shape[1]:
            raise DomainError(f"global {g.shape} and fine {f.shape} disagree on N or d_v")
        if not (np.isfinite(g).all() and np.isfinite(f).all()):
            raise DomainError("features must be finite")
        self.global_feats = g
        self.fine_feats = f

    @property
    def num_frames(self):
        return self.global_feats.shape[0]

    @property
    def patch_count(self):
        return self.fine_feats.shape[1]

    @property
    def d_v(self):
        return self.global_feats.shape[1]

    def metadata(self):
        return {"N": self.num_frames, "P": self.patch_count, "d_v": self.d_v, "seed": self.seed}


@dataclass
class NeedleLabel:
    key_frame: int
    key_patch: int
    answer_token: int
    family: int = 0
    answer_class: int = 0


@dataclass
class NeedleSample:
    features: FrameFeatureSet
    label: NeedleLabel
    question: list
    answer: list


@dataclass
class CaptionSample:
    features: FrameFeatureSet
    caption: list


@dataclass
class Vocabulary:
    """Token-id layout: specials, then class tokens, then family tokens."""

    num_classes: int
    num_families: int

    def class_token(self, c):
        return NUM_SPECIAL + c

    def family_token(self, f):
        return NUM_SPECIAL + self.num_classes + f

    def class_of(self, token):
        c = token - NUM_SPECIAL
        return c if 0 <= c < self.num_classes else None

    @property
    def size(self):
        return NUM_SPECIAL + self.num_classes + self.num_families


def generate_synthetic_video(N, P, d_v, seed):
    """Standard-normal global and fine features; identical for identical seeds."""
    if min(N, P, d_v) < 1:
        raise DomainError(f"N, P, d_v must be >= 1, got {(N, P, d_v)}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((N, d_v))
    f = rng.standard_normal((N, P, d_v))
    return FrameFeatureSet(g, f, seed)


def needle_basis(d_v, num_classes, num_families):
    """Orthonormal directions: one per class, one tag per family, and the key-frame marker."""
    k = num_classes + num_families + 1
    if d_v < k:
        raise DomainError(f"d_v={d_v} too small for {num_classes} classes + {num_families} families + marker")
    rng = np.random.default_rng(BASIS_SEED)
    q, _ = np.linalg.qr(rng.standard_normal((d_v, d_v)))
    q = q.T[:k]
    return q[:num_classes], q[num_classes:num_classes + num_families], q[-1]


def generate_needle_dataset(count, N, P, d_v, vocab_size, seed, num_classes=4, num_families=4,
                            signal_norm=5.0):
    """Build ``count`` needle samples (see module docstring).

    Answer classes are balanced to within one sample; key frame, key patch
    and family are uniform.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if min(N, P, d_v) < 1:
        raise DomainError(f"N, P, d_v must be >= 1, got {(N, P, d_v)}")
    if num_classes < 1 or num_families < 1:
        raise DomainError(f"need at least one class and one family, got {num_classes}, {num_families}")
    vocab = Vocabulary(num_classes, num_families)
    if vocab_size < vocab.size:
        raise DomainError(f"vocab_size {vocab_size} < required {vocab.size}")
    class_dirs, family_dirs, marker = needle_basis(d_v, num_classes, num_families)

    rng = np.random.default_rng(seed)
    answer_classes = rng.permutation(np.arange(count) % num_classes)
    samples = []
    for i in range(count):
        g = rng.standard_normal((N, d_v))
        f = rng.standard_normal((N, P, d_v))
        key_frame = int(rng.integers(N))
        key_patch = int(rng.integers(P))
        family = int(rng.integers(num_families))
        c = int(answer_classes[i])
        g[key_frame] += signal_norm * marker
        f[key_frame, key_patch] += signal_norm * (class_dirs[c] + family_dirs[family])
        label = NeedleLabel(key_frame, key_patch, vocab.class_token(c), family, c)
        samples.append(NeedleSample(
            FrameFeatureSet(g, f, None), label, [ASK, vocab.family_token(family)], [vocab.class_token(c)]
        ))
    return samples


def generate_caption_dataset(count, N, P, d_v, vocab_size, seed, num_classes=4, signal_norm=3.0):
    """Video/caption pairs for pretraining the video-token path.

    Every frame's global and patches lean toward one class direction; the
    caption is ``[BOS, class token, SEP]``.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    vocab = Vocabulary(num_classes, 0)
    if vocab_size < vocab.size:
        raise DomainError(f"vocab_size {vocab_size} < required {vocab.size}")
    class_dirs, _, _ = needle_basis(d_v, num_classes, 0)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        c = i % num_classes
        g = rng.standard_normal((N, d_v)) + signal_norm * class_dirs[c]
        f = rng.standard_normal((N, P, d_v)) + signal_norm * class_dirs[c]
        out.append(CaptionSample(FrameFeatureSet(g, f, None), [BOS, vocab.class_token(c), SEP]))
    return out


# -- persistence --------------------------------------------------------------

def save_features(path, fs):
    """Write ``fs`` as two IVAT records plus a ``<path>.json`` metadata sidecar."""
    serialize.save_tensors(path, [fs.global_feats, fs.fine_feats])
    with open(path + ".json", "w") as fh:
        json.dump(fs.metadata(), fh)


def load_features(path):
    arrays = serialize.load_tensors(path)
    if len(arrays) != 2:
        raise FormatError(f"feature file must hold 2 records, found {len(arrays)}", 0)
    seed = None
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
        seed = meta.get("seed")
        expected = (meta["N"], meta["P"], meta["d_v"])
        if arrays[1].shape != expected:
            raise FormatError(f"sidecar shape {expected} != stored fine shape {arrays[1].shape}", 0)
    return FrameFeatureSet(arrays[0], arrays[1], seed)


def feature_file_size(N, P, d_v):
    return serialize.record_size((N, d_v)) + serialize.record_size((N, P, d_v))


def write_manifest(directory, samples, name="manifest.jsonl"):
    """Persist samples: one feature file per video plus a JSON-lines manifest."""
    os.makedirs(directory, exist_ok=True)
    manifest = os.path.join(directory, name)
    with open(manifest, "w") as fh:
        for i, s in enumerate(samples):
            fname = f"video_{i:06d}.ivat"
            save_features(os.path.join(directory, fname), s.features)
            record = {"id": i, "features": fname}
            if isinstance(s, CaptionSample):
                record["caption"] = list(s.caption)
            else:
                record["question"] = list(s.question)
                record["answer"] = list(s.answer)
                if s.label is not None:
                    record["label"] = asdict(s.label)
            fh.write(json.dumps(record) + "\n")
    return manifest


def read_manifest(path):
    """Load every sample listed in a JSON-lines manifest."""
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                fs = load_features(os.path.join(base, rec["features"]))
                if "caption" in rec:
                    samples.append(CaptionSample(fs, rec["caption"]))
                    continue
                label = NeedleLabel(**rec["label"]) if "label" in rec else None
                samples.append(NeedleSample(fs, label, rec["question"], rec["answer"]))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return samples
