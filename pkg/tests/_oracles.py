"""Independent brute-force oracles shared across the test suite.

These deliberately avoid the library's log-space code paths: partition sums
enumerate every (class, fire/abstain-pattern) term directly, and gradients
come from central finite differences of the checked scalar functions.
"""

from __future__ import annotations

import itertools
from typing import Callable

import numpy as np


def enum_partition(theta: np.ndarray) -> float:
    """Sum of unnormalized weights over all classes and 2^m firing patterns."""
    m, n_classes = theta.shape
    total = 0.0
    for y in range(n_classes):
        for pattern in itertools.product((0, 1), repeat=m):
            term = 1.0
            for j, fired in enumerate(pattern):
                if fired:
                    term *= float(np.exp(theta[j, y]))
            total += term
    return total


def enum_joint(theta: np.ndarray, firing_row: np.ndarray, y: int) -> float:
    """P(l, y) for one firing row, normalized by the enumerated partition."""
    term = 1.0
    for j in range(theta.shape[0]):
        if firing_row[j] != 0:
            term *= float(np.exp(theta[j, y - 1]))
    return term / enum_partition(theta)


def enum_posterior(theta: np.ndarray, firing_row: np.ndarray) -> np.ndarray:
    n_classes = theta.shape[1]
    w = np.array([enum_joint(theta, firing_row, y) for y in range(1, n_classes + 1)])
    return w / w.sum()


def enum_lf_precision(theta: np.ndarray, attached: np.ndarray, j: int) -> float:
    """P(y = k_j | LF j fired) by enumerating every pattern where j fired."""
    m, n_classes = theta.shape
    num = den = 0.0
    for y in range(n_classes):
        for pattern in itertools.product((0, 1), repeat=m):
            if not pattern[j]:
                continue
            term = 1.0
            for jj, fired in enumerate(pattern):
                if fired:
                    term *= float(np.exp(theta[jj, y]))
            den += term
            if y == attached[j] - 1:
                num += term
    return num / den


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = x.copy()
        lo = x.copy()
        hi[idx] += step
        lo[idx] -= step
        grad[idx] = (f(hi) - f(lo)) / (2.0 * step)
        it.iternext()
    return grad


def rel_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative disagreement between two gradients."""
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
    return float(np.linalg.norm(analytic - numeric)) / denom


def random_firing_rows(
    rng: np.random.Generator, attached: np.ndarray, n_rows: int, fire_prob: float = 0.5
) -> np.ndarray:
    """Rows over the firing alphabet {0, attached_j}, at least one fire per row."""
    m = len(attached)
    rows = np.zeros((n_rows, m), dtype=np.int64)
    for i in range(n_rows):
        while True:
            mask = rng.random(m) < fire_prob
            if mask.any():
                break
        rows[i, mask] = attached[mask]
    return rows
