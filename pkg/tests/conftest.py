import itertools

import numpy as np
import pytest


def naive_conv(x, w, b, pad):
    """Direct nested-loop cross-correlation over 2 or 3 trailing axes (independent oracle)."""
    spatial = w.ndim - 2
    x = np.pad(x, ((0, 0), (0, 0)) + ((pad, pad),) * spatial)
    n, c = x.shape[:2]
    f = w.shape[0]
    ks = w.shape[2:]
    out_sp = tuple(x.shape[2 + i] - ks[i] + 1 for i in range(spatial))
    out = np.zeros((n, f) + out_sp)
    for ni in range(n):
        for fi in range(f):
            for pos in itertools.product(*(range(o) for o in out_sp)):
                acc = b[fi] if b is not None else 0.0
                for ci in range(c):
                    for off in itertools.product(*(range(k) for k in ks)):
                        idx = tuple(p + o for p, o in zip(pos, off))
                        acc += x[(ni, ci) + idx] * w[(fi, ci) + off]
                out[(ni, fi) + pos] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_2dot():
    from tslab.shapegen import generate_split

    return generate_split("2dot", {"train": 40, "val": 20, "eval": 20}, seed=3)


# lines recorded by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
