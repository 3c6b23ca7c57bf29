"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--threads 1]

Shapes follow one MNIST batch of 64 through the default student. The last
row times a full student training step (T=4, forward and backward) on each
backend.
"""
import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from spikedistill import kernels
from spikedistill import functional as F
from spikedistill.models import ArchConfig, build_student, forward_student
from spikedistill.rng import stream
from spikedistill.tensor import Tensor, backward


def kernel_cases(rng):
    b = 64
    x1 = rng.standard_normal((b, 1, 30, 30)).astype(np.float32)
    x2 = rng.standard_normal((b, 16, 16, 16)).astype(np.float32)
    cols2 = kernels.numpy_backend.im2col(x2, 3, 3, 1, 14, 14)
    n = b * 16 * 14 * 14
    i_t = rng.uniform(-1, 2, n).astype(np.float32)
    v = rng.uniform(-0.5, 1, n).astype(np.float32)
    s, _, h = kernels.numpy_backend.lif_forward(i_t, v, 1.0, 0.0, 2.0, 4.0, False, False)
    g = rng.standard_normal(n).astype(np.float32)
    return {
        "im2col conv1 (64x1x28x28)": lambda k: k.im2col(x1, 3, 3, 1, 28, 28),
        "im2col conv2 (64x16x14x14)": lambda k: k.im2col(x2, 3, 3, 1, 14, 14),
        "col2im conv2": lambda k: k.col2im(cols2, b, 16, 16, 16, 3, 3, 1, 14, 14),
        f"lif_forward ({n} neurons)": lambda k: k.lif_forward(i_t, v, 1.0, 0.0, 2.0, 4.0, False, False),
        f"lif_backward ({n} neurons)": lambda k: k.lif_backward(g, g, s, h, 1.0, 0.0, 2.0, 4.0, False, True),
        "surrogate_grad": lambda k: k.surrogate_grad(h, 1.0, 4.0),
    }


def train_step_case(rng):
    m = build_student(ArchConfig(), rng=stream(0, "init"))
    x = Tensor(rng.standard_normal((64, 1, 28, 28)).astype(np.float32))
    labels = rng.integers(0, 10, 64)

    def step(_):
        logits, _ = forward_student(m, x, 4)
        backward(F.cross_entropy(logits, labels))
    return step


def best_ms(fn, backend, repeat):
    fn(backend)  # warm-up
    return 1e3 * min(timeit.repeat(lambda: fn(backend), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':<34}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    with threadpool_limits(args.threads):
        for name, fn in kernel_cases(rng).items():
            a = best_ms(fn, kernels.numpy_backend, args.repeat)
            c = best_ms(fn, kernels.compiled_backend, args.repeat)
            print(f"{name:<34}{a:>10.3f}{c:>11.3f}{a / c:>8.1f}x")
        step = train_step_case(rng)
        times = {}
        for name in ("numpy", "cython"):
            kernels.use_backend(name)
            times[name] = best_ms(step, None, max(3, args.repeat // 4))
        kernels.use_backend("cython")
        print(f"{'student train step (T=4, b=64)':<34}{times['numpy']:>10.1f}{times['cython']:>11.1f}"
              f"{times['numpy'] / times['cython']:>8.1f}x")


if __name__ == "__main__":
    main()
