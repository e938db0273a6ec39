"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

Prints per-kernel timings on shapes taken from the desk model, then one
full training step (forward + backward + AdamW) under each backend.
"""
import argparse
import timeit

import numpy as np

from iva.autodiff import kernels
from iva.experiments import NeedleSetup
from iva.host import IvaModel
from iva.training import OptimConfig, StagePlan, run_stage


def kernel_cases(rng):
    att = rng.standard_normal((8 * 4 * 39, 39))          # host attention rows
    act = rng.standard_normal((8 * 39, 256))             # host MLP hidden
    ln = rng.standard_normal((8 * 39, 64))
    logits = rng.standard_normal((8, 128))
    targets = rng.integers(0, 128, size=8)
    w = np.full(8, 1 / 8)
    gain, bias = np.ones(64), np.zeros(64)

    def cases(b):
        y = b.softmax_forward(att, 1.0)
        _, xhat, rstd = b.layer_norm_forward(ln, gain, bias, 1e-5)
        _, sig = b.gelu_forward(act)
        _, probs = b.cross_entropy_forward(logits, targets, w)
        return {
            "softmax fwd": lambda: b.softmax_forward(att, 1.0),
            "softmax bwd": lambda: b.softmax_backward(y, att, 1.0),
            "layer_norm fwd": lambda: b.layer_norm_forward(ln, gain, bias, 1e-5),
            "layer_norm bwd": lambda: b.layer_norm_backward(ln, xhat, rstd, gain),
            "gelu fwd": lambda: b.gelu_forward(act),
            "gelu bwd": lambda: b.gelu_backward(act, sig, act),
            "cross_entropy fwd": lambda: b.cross_entropy_forward(logits, targets, w),
            "cross_entropy bwd": lambda: b.cross_entropy_backward(probs, targets, w, np.ones(8)),
        }
    return cases


def time_training_step(backend, steps):
    kernels.use_backend(backend)
    setup = NeedleSetup(train=64, test=8, steps=steps)
    train, _ = setup.datasets(0)
    model = IvaModel(setup.model_config(), seed=0)
    log = run_stage(model, StagePlan.for_stage(2), train, steps, OptimConfig(lr=1e-3, seed=0))
    return log.seconds / steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--train-steps", type=int, default=40)
    args = ap.parse_args()

    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    make = kernel_cases(np.random.default_rng(0))
    table = {name: make(b) for name, b in backends}
    names = list(table["python"])
    print(f"{'kernel':<20}" + "".join(f"{n + ' (us)':>16}" for n, _ in backends) + f"{'speedup':>10}")
    for k in names:
        us = [min(timeit.repeat(table[n][k], number=args.repeat, repeat=3)) / args.repeat * 1e6
              for n, _ in backends]
        speed = f"{us[0] / us[1]:>9.2f}x" if len(us) == 2 else ""
        print(f"{k:<20}" + "".join(f"{u:>16.1f}" for u in us) + speed)

    print()
    step = {n: time_training_step(n, args.train_steps) for n, _ in backends}
    for n, t in step.items():
        print(f"training step ({n}): {t * 1e3:.1f} ms")
    if len(step) == 2:
        print(f"training step speedup: {step['python'] / step['cython']:.2f}x")


if __name__ == "__main__":
    main()
