"""Smoke test for the stablab_py extension module.

Build first:

    cargo build --release -p stablab-python --features extension-module

then run `python3 python/smoke_test.py`. Set STABLAB_PY_LIB to point at a
different build of the shared library.
"""

import importlib.machinery
import importlib.util
import math
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [os.environ.get("STABLAB_PY_LIB")] + [
        str(ROOT / "target" / profile / "libstablab_py.so") for profile in ("release", "debug")
    ]
    for path in filter(None, candidates):
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("stablab_py", path)
            spec = importlib.util.spec_from_file_location("stablab_py", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("stablab_py shared library not found; build it with cargo first")


def main():
    sp = load_module()

    ls = sp.Loss.least_squares(1.0, 1.0, 1.0)
    c = ls.constants()
    assert (c["smoothness"], c["lipschitz"]) == (1.0, 2.0), c
    assert ls.value([0.5], [1.0], 1.0) == 0.125
    assert ls.gradient([0.5], [1.0], 1.0) == [-0.5]

    logistic = sp.Loss.logistic(1.0)
    assert abs(logistic.value([0.0, 0.0], [1.0, 0.0], 1.0) - math.log(2)) < 1e-15
    w = logistic.train([[1.0, 0.0], [0.0, 1.0]], [1.0, -1.0], steps=50, alpha=0.5, seed=3)
    assert w[0] > 0 > w[1], w

    idx = sp.indices(7, 10, 30, "permutation")
    assert sorted(idx[:10]) == list(range(10))

    cdf = sp.hit_time_cdf(50, 100, 10000, seed=1)
    assert abs(cdf[50] - (1 - (1 - 1 / 50) ** 50)) < 3 * math.sqrt(0.25 / 10000), cdf[50]

    b = sp.bound("convex", L=1.0, n=100.0, T=100.0, alpha=0.01)
    assert abs(b["value"] - 0.02) < 1e-15, b

    report = sp.props(filter="sigmoid_range")
    assert report["passed"], report

    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "exp.ini"
        cfg.write_text(
            "[problem]\nn = 40\ndim = 3\nsupport = 100\n\n"
            "[run]\nsteps = 60\nalpha = 0.05\n\n"
            "[lab]\ntrials = 30\nprobe_size = 16\n"
        )
        summary = sp.run(str(cfg), seed=5, out=tmp)
        assert summary["outcome"] == "pass", summary
        assert (pathlib.Path(tmp) / "stability.csv").exists()
        try:
            sp.bound("convex", L=1.0)
        except ValueError:
            pass
        else:
            raise AssertionError("missing inputs should raise")

    print("stablab_py smoke test passed")


if __name__ == "__main__":
    main()
