"""Answer judging and metric aggregation.

The shipped judge is deterministic token matching.  Any other judge can be
plugged in through JSON-lines files: requests ``{id, question, prediction,
reference}`` go out, responses ``{id, correct, score}`` come back, and
``aggregate`` treats both sources the same way.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, FormatError

MAX_SCORE = 5


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    score: int

    def __post_init__(self):
        if not isinstance(self.score, (int, np.integer)) or not 0 <= self.score <= MAX_SCORE:
            raise DomainError(f"score must be an integer in [0, {MAX_SCORE}], got {self.score!r}")

    @property
    def answer(self):
        return "yes" if self.correct else "no"


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def common_prefix_length(a, b):
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def judge_exact(pred, gold):
    """Exact match scores 5; otherwise 5 x (shared prefix / gold length), rounded, at most 4."""
    pred, gold = list(pred), list(gold)
    if pred == gold:
        return JudgeVerdict(True, MAX_SCORE)
    if not gold:
        return JudgeVerdict(False, 0)
    ratio = common_prefix_length(pred, gold) / len(gold)
    return JudgeVerdict(False, min(_round_half_up(MAX_SCORE * ratio), MAX_SCORE - 1))


@dataclass
class EvalReport:
    accuracy: float
    mean_score: float
    count: int
    records: list = field(default_factory=list)   # [{id, correct, score}], sorted by id

    def to_json(self, indent=None):
        return json.dumps(asdict(self), indent=indent)

    def summary(self):
        return f"{self.count} samples  accuracy {self.accuracy:.4f}  mean score {self.mean_score:.4f}"


def aggregate(verdicts, ids=None):
    """Accuracy (share of 'yes') and mean score over ``verdicts``.

    ``verdicts`` is a sequence of JudgeVerdict, or a mapping id -> verdict.
    Records come back ordered by id.
    """
    if isinstance(verdicts, dict):
        items = list(verdicts.items())
    else:
        verdicts = list(verdicts)
        ids = list(range(len(verdicts))) if ids is None else list(ids)
        if len(ids) != len(verdicts):
            raise DomainError(f"{len(ids)} ids for {len(verdicts)} verdicts")
        items = list(zip(ids, verdicts))
    if not items:
        raise DomainError("aggregate needs at least one verdict")
    items.sort(key=lambda kv: kv[0])
    correct = sum(1 for _, v in items if v.correct)
    total = sum(int(v.score) for _, v in items)
    n = len(items)
    records = [{"id": k, "correct": bool(v.correct), "score": int(v.score)} for k, v in items]
    return EvalReport(correct / n, total / n, n, records)


# -- file-based judge protocol -------------------------------------------------

def write_judge_requests(path, rows):
    """``rows``: iterable of (id, question, prediction, reference)."""
    with open(path, "w") as fh:
        for sid, question, prediction, reference in rows:
            fh.write(json.dumps({
                "id": sid, "question": list(map(int, question)),
                "prediction": list(map(int, prediction)), "reference": list(map(int, reference)),
            }) + "\n")


def judge_request_file(requests_path, responses_path):
    """Answer a request file with ``judge_exact``, writing the response file."""
    with open(requests_path) as src, open(responses_path, "w") as dst:
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            try:
                req = json.loads(line)
                v = judge_exact(req["prediction"], req["reference"])
                dst.write(json.dumps({"id": req["id"], "correct": v.correct, "score": v.score}) + "\n")
            except (KeyError, json.JSONDecodeError) as exc:
                raise FormatError(f"{requests_path}:{lineno}: bad judge request ({exc})") from exc


def read_judge_responses(path):
    """Mapping id -> JudgeVerdict from a response file."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                correct = rec["correct"]
                if isinstance(correct, str):
                    correct = correct.strip().lower() == "yes"
                out[rec["id"]] = JudgeVerdict(bool(correct), int(rec["score"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad judge response ({exc})") from exc
    return out


# -- model evaluation ----------------------------------------------------------

def predict_answers(model, samples, max_new=None, use_iva=True, batch=100):
    """Greedy answers for needle-style samples, grouped into batches of equal shape."""
    preds = [None] * len(samples)
    groups = {}
    for i, s in enumerate(samples):
        key = (s.features.fine_feats.shape, len(s.question))
        groups.setdefault(key, []).append(i)
    for idx in groups.values():
        for start in range(0, len(idx), batch):
            chunk = idx[start:start + batch]
            n_new = max_new or max(len(samples[i].answer) for i in chunk)
            out = model.predict_videos([samples[i].features for i in chunk],
                                       [samples[i].question for i in chunk], n_new, use_iva)
            for i, row in zip(chunk, out):
                preds[i] = [int(t) for t in row[:len(samples[i].answer)]] if max_new is None else \
                    [int(t) for t in row]
    return preds


def evaluate_model(model, samples, judge=judge_exact, use_iva=True):
    preds = predict_answers(model, samples, use_iva=use_iva)
    return aggregate([judge(p, s.answer) for p, s in zip(preds, samples)])


def accuracy(model, samples, use_iva=True):
    """Share of samples whose generated answer matches exactly."""
    return evaluate_model(model, samples, use_iva=use_iva).accuracy
