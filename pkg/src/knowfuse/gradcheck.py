"""Central finite-difference audit for every differentiable op.

The harness perturbs each parameter entry by +/- step, rebuilds the
forward graph, and compares the analytic gradient against the central
difference quotient. All gradient-bearing code paths in the package
(primitives, GNN layers, fusion ops, losses) are registered here so a
single run certifies the whole engine.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffmath as dm

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


@dataclass
class SuiteReport:
    results: list[CheckResult] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            status = "ok" if r.passed else "FAIL"
            out.append(
                f"[{status}] {r.name}: max rel err {r.max_rel_err:.3e} "
                f"(tol {r.tolerance:.0e}, {r.instances} instances)"
            )
        out.append(f"gradcheck {'passed' if self.passed else 'FAILED'} in {self.elapsed_s:.1f}s")
        return out


def relative_error(analytic: float, numeric: float) -> float:
    # The 1e-3 floor turns the comparison absolute for near-zero entries,
    # where the difference quotient's own noise floor (~1e-9 at step 1e-5)
    # makes a strict ratio meaningless. Entries of ordinary magnitude are
    # still held to the plain relative criterion.
    denom = max(abs(analytic), abs(numeric), 1e-3)
    return abs(analytic - numeric) / denom


def check_gradients(
    build_loss: Callable[[dm.ParameterStore], dm.Node],
    store: dm.ParameterStore,
    step: float = DEFAULT_STEP,
) -> float:
    """Max relative error between backprop and central differences.

    ``build_loss`` must rebuild the full forward graph from the current
    parameter values on every call; the analytic gradient is taken from
    one backward pass at the unperturbed point.
    """
    loss = build_loss(store)
    dm.backward(loss)
    analytic = {p.name: np.array(p.grad) for p in store}

    worst = 0.0
    for p in store:
        base = np.array(p.value)
        flat = base.reshape(-1)
        for i in range(flat.size):
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * step
                p.assign(bumped.reshape(base.shape))
                if sign > 0:
                    f_plus = float(build_loss(store).value)
                else:
                    f_minus = float(build_loss(store).value)
            p.assign(base)
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, relative_error(float(analytic[p.name].reshape(-1)[i]), numeric))
    return worst


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# primitive checks


def _primitive_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    """Each case returns (store, build_loss) for a random instance."""

    def unary(op, shape=(3, 4), **kw):
        def make(rng):
            store = dm.ParameterStore()
            store.add("x", rng.normal(size=shape) + 0.05)
            return store, lambda s: dm.sq_l2_norm(op(s.get("x"), **kw))
        return make

    def case_matmul(rng):
        store = dm.ParameterStore()
        store.add("a", rng.normal(size=(3, 4)))
        store.add("b", rng.normal(size=(4, 2)))
        return store, lambda s: dm.sq_l2_norm(dm.matmul(s.get("a"), s.get("b")))

    def case_matmul_vec(rng):
        store = dm.ParameterStore()
        store.add("a", rng.normal(size=(4,)))
        store.add("b", rng.normal(size=(4, 3)))
        return store, lambda s: dm.sq_l2_norm(dm.matmul(s.get("a"), s.get("b")))

    def case_add_bias(rng):
        store = dm.ParameterStore()
        store.add("m", rng.normal(size=(3, 4)))
        store.add("b", rng.normal(size=(4,)))
        return store, lambda s: dm.sq_l2_norm(dm.add(s.get("m"), s.get("b")))

    def case_mul(rng):
        store = dm.ParameterStore()
        store.add("a", rng.normal(size=(3, 4)))
        store.add("b", rng.normal(size=(3, 4)))
        return store, lambda s: dm.sq_l2_norm(dm.mul(s.get("a"), s.get("b")))

    def case_smul(rng):
        store = dm.ParameterStore()
        store.add("s", rng.normal())
        store.add("x", rng.normal(size=(3, 2)))
        return store, lambda s: dm.sq_l2_norm(dm.smul(s.get("s"), s.get("x")))

    def case_concat(rng):
        store = dm.ParameterStore()
        store.add("a", rng.normal(size=(3,)))
        store.add("b", rng.normal(size=(4,)))
        return store, lambda s: dm.sq_l2_norm(dm.sigmoid(dm.concat(s.get("a"), s.get("b"))))

    def case_sub(rng):
        store = dm.ParameterStore()
        store.add("a", rng.normal(size=(5,)))
        store.add("b", rng.normal(size=(5,)))
        return store, lambda s: dm.sq_l2_norm(dm.sub(s.get("a"), s.get("b")))

    def case_logsumexp(rng):
        store = dm.ParameterStore()
        store.add("x", rng.normal(size=(6,)))
        return store, lambda s: dm.logsumexp(s.get("x"))

    def case_pick_slice(rng):
        store = dm.ParameterStore()
        store.add("x", rng.normal(size=(6,)))
        return store, lambda s: dm.mul(
            dm.pick(s.get("x"), 2), dm.sq_l2_norm(dm.slice1d(s.get("x"), 1, 5))
        )

    def case_softmax(rng):
        store = dm.ParameterStore()
        store.add("x", rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        return store, lambda s: dm.tsum(dm.mul(dm.softmax(s.get("x")), dm.constant(w)))

    def case_mean_rows(rng):
        store = dm.ParameterStore()
        store.add("x", rng.normal(size=(4, 3)))
        return store, lambda s: dm.sq_l2_norm(dm.mean_rows(s.get("x")))

    return {
        "matmul": case_matmul,
        "matmul_vec": case_matmul_vec,
        "add_bias_rows": case_add_bias,
        "sub": case_sub,
        "mul_elementwise": case_mul,
        "smul": case_smul,
        "scale": unary(lambda x: dm.scale(x, 1.7)),
        "concat": case_concat,
        "relu": unary(dm.relu),
        "leaky_relu": unary(dm.leaky_relu),
        "sigmoid": unary(dm.sigmoid),
        "tanh": unary(dm.tanh),
        "softplus": unary(dm.softplus),
        "softmax": case_softmax,
        "logsumexp": case_logsumexp,
        "pick_slice": case_pick_slice,
        "mean_rows": case_mean_rows,
        "reshape": unary(lambda x: dm.reshape(x, (4, 3))),
        "sum": unary(lambda x: dm.tanh(dm.tsum(x)), shape=(2, 3)),
    }


def check_primitives(instances: int = 20, seed: int = 2024) -> list[CheckResult]:
    results = []
    for name, make in _primitive_cases().items():
        rng = _rng(seed + zlib.crc32(name.encode()) % 1000)
        worst = 0.0
        for _ in range(instances):
            store, build = make(rng)
            worst = max(worst, check_gradients(build, store))
        results.append(CheckResult(f"primitive/{name}", worst, DEFAULT_TOLERANCE, instances))
    return results


def check_random_compositions(count: int = 20, seed: int = 77) -> CheckResult:
    """Random chains of 3-6 primitives over two parameter tensors."""
    rng = _rng(seed)
    unary_ops = [dm.relu, dm.leaky_relu, dm.sigmoid, dm.tanh, dm.softplus,
                 lambda x: dm.scale(x, 0.7), dm.softmax]
    worst = 0.0
    for _ in range(count):
        depth = int(rng.integers(3, 7))
        choices = [int(rng.integers(0, len(unary_ops))) for _ in range(depth)]
        shape = (int(rng.integers(2, 4)), int(rng.integers(2, 5)))
        w_shape = (shape[1], int(rng.integers(2, 4)))
        x0 = rng.normal(size=shape)
        w0 = rng.normal(size=w_shape)

        def build(s):
            h = dm.matmul(s.get("x"), s.get("w"))
            for c in choices:
                h = unary_ops[c](h)
            return dm.sq_l2_norm(dm.mean_rows(h))

        store = dm.ParameterStore()
        store.add("x", x0)
        store.add("w", w0)
        worst = max(worst, check_gradients(build, store))
    return CheckResult("compositions/random", worst, DEFAULT_TOLERANCE, count)


def run_suite(instances: int = 20, seed: int = 2024) -> SuiteReport:
    """Full finite-difference suite across primitives and model layers.

    Model-layer checks are registered lazily to avoid import cycles.
    """
    from . import model_checks

    t0 = time.perf_counter()
    report = SuiteReport()
    report.results.extend(check_primitives(instances=instances, seed=seed))
    report.results.append(check_random_compositions(count=instances, seed=seed + 1))
    report.results.extend(model_checks.run_all(instances=instances, seed=seed + 2))
    report.elapsed_s = time.perf_counter() - t0
    return report
