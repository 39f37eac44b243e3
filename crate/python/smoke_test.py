"""Smoke test for the pyan2cls extension module.

Build the module first:

    cargo build --release -p an2cls-python --features extension-module

then run `python3 python/smoke_test.py`. The script copies
target/release/libpyan2cls.so to a temporary directory as pyan2cls.so
(set PYAN2CLS_LIB to use another build) and imports it from there.
"""

import importlib
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    lib = Path(os.environ.get("PYAN2CLS_LIB", ROOT / "target" / "release" / "libpyan2cls.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}; build it with cargo first")
    tmp = tempfile.mkdtemp(prefix="pyan2cls-")
    shutil.copy(lib, Path(tmp) / "pyan2cls.so")
    sys.path.insert(0, tmp)
    return importlib.import_module("pyan2cls")


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    m = load_module()

    names = dict(m.list_problems("small"))
    check("chained_rosenbrock_2" in names, "small suite lists chained_rosenbrock_2")

    p = m.Problem.builtin("chained_rosenbrock_2")
    check(p.dim == 2 and p.x0 == [-1.2, 1.0], "builtin problem exposes dim and x0")
    check(max(abs(v) for v in p.gradient([1.0, 1.0])) < 1e-12, "gradient vanishes at the minimizer")
    h = p.hessian([1.0, 1.0])
    check(abs(h[0][0] - 802.0) < 1e-9 and abs(h[0][1] + 400.0) < 1e-9, "hessian at the minimizer")

    res = m.solve(p, "an2cls-e")
    check(res.converged and res.iterations == 28, "exact solver converges in 28 iterations")
    check(all(abs(a - 1.0) < 1e-6 for a in res.x), "solution is (1, 1)")
    check(len(res.trace) == res.iterations and res.trace[0]["k"] == 0, "trace records every iteration")
    check(res.evals["h"] >= 1, "evaluation counts are reported")

    krylov = m.Solver("an2cls-k", eps=1e-8)
    check(float(krylov.get("eps")) == 1e-8, "settings round trip")
    res_k = krylov.solve(p)
    check(res_k.converged and res_k.grad_norm <= 1e-8, "Krylov solver meets a tighter tolerance")

    saddle = m.Problem.builtin("double_well_saddle_5")
    res_so = m.solve(saddle, "soan2cls")
    check(res_so.converged and res_so.lambda_min >= -1e-3, "second-order driver ends at a local minimum")

    step = m.stepcomp_exact([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    check(step["kind"] == "newton" and abs(step["step"][0] + 0.5) < 1e-14, "exact step on the identity")
    step_k = m.stepcomp_krylov([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)
    check(abs(step_k["step"][0] + 0.5) < 1e-14 and step_k["krylov_dim"] == 1, "Krylov step on the identity")

    def f(x):
        return (x[0] - 3.0) ** 2 + 10.0 * (x[1] + 1.0) ** 2 + math.cos(x[0])

    def grad(x):
        return [2.0 * (x[0] - 3.0) - math.sin(x[0]), 20.0 * (x[1] + 1.0)]

    def hess(x):
        return [[2.0 - math.cos(x[0]), 0.0], [0.0, 20.0]]

    user = m.Problem.from_callables("user", [0.0, 0.0], f, grad, hess)
    res_u = m.solve(user, "an2cls-e", eps=1e-10)
    check(res_u.converged and abs(grad(res_u.x)[0]) < 1e-9, "solves a problem defined by Python callables")

    def broken(x):
        raise ZeroDivisionError("boom")

    bad = m.Problem.from_callables("bad", [0.0, 0.0], broken, grad, hess)
    try:
        m.solve(bad)
    except ZeroDivisionError:
        check(True, "callback exceptions propagate")
    else:
        raise AssertionError("callback exception was swallowed")

    try:
        m.Solver("an2cls-e", no_such_key=1)
    except ValueError:
        check(True, "unknown settings raise ValueError")
    else:
        raise AssertionError("unknown setting accepted")

    with tempfile.TemporaryDirectory() as out:
        summary = m.run_benchmark(out, "small", ["an2cls-e", "an2cls-k"], parallel=True)
        check({s["solver"] for s in summary["solvers"]} == {"an2cls-e", "an2cls-k"}, "benchmark summary lists solvers")
        check((Path(out) / "rows.csv").exists() and (Path(out) / "profile.svg").exists(), "benchmark writes outputs")

    print("smoke test passed")


if __name__ == "__main__":
    main()
