"""End-to-end runs on the synthetic needle task, shared by the CLI and the tests."""
import logging
import time
from dataclasses import asdict, dataclass, field

from .config import ModelConfig
from .evaluation import accuracy
from .features import generate_needle_dataset
from .host import IvaModel
from .training import OptimConfig, StagePlan, run_stage

logger = logging.getLogger(__name__)

TRAIN_SEED_OFFSET = 1000
TEST_SEED_OFFSET = 5000


@dataclass
class NeedleSetup:
    frames: int = 16
    patches: int = 8
    d_v: int = 32
    classes: int = 4
    families: int = 4
    train: int = 2000
    test: int = 500
    vocab_size: int = 128
    d_m: int = 64
    layers: int = 4
    heads: int = 4
    ct_layers: int = 4
    lq: int = 4
    ni: int = 2
    iva_depth: int = 1
    steps: int = 3000
    batch: int = 8
    lr: float = 1e-3
    eval_every: int = 250

    def model_config(self):
        seq = 2 * self.frames + 2 + self.lq + 1
        return ModelConfig.build(
            vocab_size=self.vocab_size, d_m=self.d_m, layers=self.layers, heads=self.heads,
            max_seq_len=seq, d_v=self.d_v, ct_heads=self.heads, ct_layers=self.ct_layers,
            lq=self.lq, ni=self.ni, iva_depth=self.iva_depth,
        )

    def datasets(self, seed):
        kw = dict(N=self.frames, P=self.patches, d_v=self.d_v, vocab_size=self.vocab_size,
                  num_classes=self.classes, num_families=self.families)
        return (generate_needle_dataset(self.train, seed=TRAIN_SEED_OFFSET + seed, **kw),
                generate_needle_dataset(self.test, seed=TEST_SEED_OFFSET + seed, **kw))


@dataclass
class NeedleRun:
    seed: int
    with_iva: bool
    steps_run: int
    final_accuracy: float
    best_accuracy: float
    seconds: float
    evals: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def run_needle(setup, seed, with_iva, stop_at=None, data=None):
    """Train one model with the stage-2 plan and track test accuracy.

    With ``stop_at`` set, training ends at the first evaluation that
    reaches it.  ``data`` reuses a (train, test) pair across runs.
    """
    train, test = data if data is not None else setup.datasets(seed)
    model = IvaModel(setup.model_config(), seed=seed, with_iva=with_iva)
    t0 = time.perf_counter()
    log = run_stage(
        model, StagePlan.for_stage(2), train, setup.steps,
        OptimConfig(lr=setup.lr, batch=setup.batch, seed=seed),
        eval_fn=lambda m: accuracy(m, test), eval_every=setup.eval_every, stop_metric=stop_at,
    )
    if not log.evals or log.evals[-1][0] != len(log.steps):
        log.evals.append((len(log.steps), accuracy(model, test)))
    accs = [a for _, a in log.evals]
    run = NeedleRun(seed, with_iva, len(log.steps), accs[-1], max(accs), time.perf_counter() - t0,
                    [list(e) for e in log.evals])
    logger.info("needle seed %d iva=%s: %s", seed, with_iva, run)
    return run, model
