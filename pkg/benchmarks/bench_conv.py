"""Time the compiled and numpy correlation kernels on the shapes the models use.

    python3 benchmarks/bench_conv.py [--repeat N]
"""
import argparse
import time

import numpy as np

from tslab.tensor import backend

# (label, padded input N,C,T,H,W, kernel F,C,kt,kh,kw)
CASES = [
    ("convlstm input conv, h=4", (16, 1, 20, 66, 66), (16, 1, 1, 3, 3)),
    ("convlstm hidden conv, h=4", (16, 4, 1, 66, 66), (16, 4, 1, 3, 3)),
    ("convlstm layer 2, h=4", (16, 4, 20, 34, 34), (16, 4, 1, 3, 3)),
    ("cnn3d block 1, h=4", (16, 1, 22, 66, 66), (4, 1, 3, 3, 3)),
    ("cnn3d block 2, h=4", (16, 4, 12, 34, 34), (4, 4, 3, 3, 3)),
    ("cnn3d block 1, h=16", (16, 1, 22, 66, 66), (16, 1, 3, 3, 3)),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if backend.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    gen = np.random.default_rng(0)
    print(f"{'case':<28}{'op':<8}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for label, xs, ws in CASES:
        x, w = gen.random(xs), gen.random(ws)
        g = backend.compiled.correlate(x, w)
        for op, args_ in (("fwd", (x, w)), ("wgrad", (x, g, ws[2:]))):
            ref = getattr(backend.reference, "correlate" if op == "fwd" else "correlate_weight_grad")
            fast = getattr(backend.compiled, "correlate" if op == "fwd" else "correlate_weight_grad")
            assert np.allclose(ref(*args_), fast(*args_), rtol=1e-10, atol=1e-9)
            tr = best_of(lambda: ref(*args_), args.repeat)
            tc = best_of(lambda: fast(*args_), args.repeat)
            print(f"{label:<28}{op:<8}{tr * 1e3:>10.1f}{tc * 1e3:>13.1f}{tr / tc:>8.1f}x")


if __name__ == "__main__":
    main()
