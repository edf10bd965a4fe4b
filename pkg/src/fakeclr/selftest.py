"""A fast battery of closed-form and gradient checks, runnable without pytest."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .contrastive import (NegativeQueue, QueueSchedule, forgetting_factors, info_nce, iteration_info_nce,
                          iteration_info_nce_grads, iteration_info_nce_tensor)
from .gan import adversarial_losses
from .metrics import GaussianSummary, frechet_distance, mmd_poly, nearest_neighbor_report
from .numerics import Tensor, grad_check, make_rng


def _unit(rng, *shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _instance(rng):
    n, p = int(rng.integers(1, 65)), int(rng.integers(2, 17))
    m = forgetting_factors(rng.integers(0, 50, size=n), 0.1)
    return _unit(rng, p), _unit(rng, p), _unit(rng, n, p), m, float(rng.uniform(0.05, 1.0))


def check_gradients() -> float:
    rng = make_rng(0, 1)
    worst = 0.0
    for _ in range(100):
        q, k, negs, m, tau = _instance(rng)
        tq, tk, tn = (Tensor(a, requires_grad=True) for a in (q, k, negs))
        iteration_info_nce_tensor(tq, tk, tn, m, tau).backward()
        for a, c in zip((tq.grad, tk.grad, tn.grad), iteration_info_nce_grads(q, k, negs, m, tau)):
            worst = max(worst, float(np.max(np.abs(a - c) / np.maximum(1.0, np.abs(c)))))
    return worst


def check_finite_differences() -> float:
    rng = make_rng(0, 2)
    q, k, negs, m, tau = _instance(rng)
    return grad_check(lambda t: iteration_info_nce_tensor(t, Tensor(k), negs, m, tau), q, eps=1e-6)


def check_uniform_infonce() -> float:
    e = np.array([1.0, 0.0])
    return max(abs(info_nce(e, e, np.tile(e, (n, 1)), 0.07) - math.log(n + 1)) for n in range(1, 101))


def check_weighted_example() -> float:
    e1, e2, e3 = np.eye(3)
    return abs(iteration_info_nce(e1, e1, [e2, e3], [math.log(2), 0.0], 1.0) - math.log(1 + 3 / math.e))


def check_adversarial() -> float:
    l_d, l_g = adversarial_losses(np.zeros(4), np.zeros(4))
    return max(abs(l_d.item() - 2 * math.log(2)), abs(l_g.item() - math.log(2)))


def check_queue() -> float:
    rng = make_rng(0, 3)
    mismatches = 0
    for _ in range(100):
        n0 = int(rng.integers(1, 100))
        schedule = QueueSchedule(n0, float(rng.uniform(0, 2)), int(rng.integers(1, n0 + 1)))
        queue, ref, t = NegativeQueue(2, schedule), [], 0
        for _ in range(10):
            t += int(rng.integers(0, 10))
            keys = _unit(rng, int(rng.integers(0, 20)), 2)
            queue.push(keys, t)
            ref = (ref + [(tuple(x), t) for x in keys])[-queue.capacity(t):]
            mismatches += [tuple(x) for x in queue.embeddings] != [e for e, _ in ref]
            mismatches += queue.labels.tolist() != [lab for _, lab in ref]
    return float(mismatches)


def check_frechet() -> float:
    eye = np.eye(2)
    return abs(frechet_distance(GaussianSummary([0, 0], eye), GaussianSummary([3, 4], eye)) - 25.0)


def check_mmd() -> float:
    rng = make_rng(0, 4)
    x, y = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))

    def k(a, b):
        return (a @ b / 2 + 1) ** 3

    sxx = sum(k(x[i], x[j]) for i in range(4) for j in range(4) if i != j) / 12
    syy = sum(k(y[i], y[j]) for i in range(4) for j in range(4) if i != j) / 12
    sxy = sum(k(a, b) for a in x for b in y) / 16
    return abs(mmd_poly(x, y) - (sxx + syy - 2 * sxy))


def check_nearest() -> float:
    rng = make_rng(0, 5)
    gen, train = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
    d = np.linalg.norm(gen[:, None] - train[None], axis=2)
    report = nearest_neighbor_report(gen, train)
    return float(np.sum(report.indices[:, 0] != d.argmin(axis=1)))


CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("closed-form vs reverse-mode gradients", check_gradients, 1e-10),
    ("reverse-mode vs central differences", check_finite_differences, 1e-4),
    ("uniform-similarity InfoNCE = ln(N+1)", check_uniform_infonce, 1e-12),
    ("weighted InfoNCE example", check_weighted_example, 1e-12),
    ("zero-logit adversarial losses", check_adversarial, 1e-12),
    ("queue vs list replay", check_queue, 0.0),
    ("Frechet shared-covariance closed form", check_frechet, 0.0),
    ("MMD vs brute-force sums", check_mmd, 1e-12),
    ("nearest neighbour vs exhaustive scan", check_nearest, 0.0),
]


def run_selftest(out=print) -> bool:
    ok = True
    for name, fn, tol in CHECKS:
        err = fn()
        passed = err <= tol
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}: error {err:.3g} (tolerance {tol:g})")
    return ok
