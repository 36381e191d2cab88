"""Generative aggregation model over labeling-function firings.

For m LFs with reliability parameters theta[j, y] (one per LF and class) and
attached classes k_j, the unnormalized joint over a firing vector l and a
class y is a product of per-LF potentials:

    psi(l_j, y) = exp(theta[j, y])  if l_j != 0
                  1                 otherwise

Because an LF can only emit its own class or abstain, the per-LF outcome
space is binary, and the normalizer summed over all classes and all 2^m
fire/abstain patterns collapses to

    Z(theta) = sum_y prod_j (1 + exp(theta[j, y])).

Everything here is a pure function of (theta, inputs) computed in log space;
theta is an (m, K) float array, attached an (m,) int array of classes 1..K,
and firing rows are (n, m) int arrays with entries in {0} or the attached
class of their column.
"""

from __future__ import annotations

import warnings

import numpy as np

PROB_CLAMP = 1e-6


def _logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    if axis is None:
        m = float(np.max(a))
        return m + float(np.log(np.sum(np.exp(a - m))))
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    z = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _as_theta(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError(f"theta must be (m, K), got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite entries")
    return theta


def _as_rows(firings: np.ndarray, m: int) -> np.ndarray:
    rows = np.asarray(firings, dtype=np.int64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != m:
        raise ValueError(f"firing rows have {rows.shape[1]} columns, theta has {m} LFs")
    return rows


def init_theta(attached: np.ndarray, n_classes: int) -> np.ndarray:
    """Starting parameters: 1.0 on each LF's own class, 0.0 elsewhere.

    Encodes the prior that an LF is more often right than wrong about its
    attached class, which breaks the uniform saddle point.
    """
    attached = np.asarray(attached, dtype=np.int64)
    theta = np.zeros((len(attached), n_classes), dtype=np.float64)
    theta[np.arange(len(attached)), attached - 1] = 1.0
    return theta


def potential(theta: np.ndarray, j: int, l_ij: int, y: int, attached: np.ndarray) -> float:
    """Single potential psi(l_ij, y): exp(theta[j, y]) when fired, else 1."""
    theta = _as_theta(theta)
    attached = np.asarray(attached, dtype=np.int64)
    if not 0 <= j < theta.shape[0]:
        raise ValueError(f"LF index {j} out of range")
    if not 1 <= y <= theta.shape[1]:
        raise ValueError(f"class {y} out of range 1..{theta.shape[1]}")
    if l_ij not in (0, int(attached[j])):
        raise ValueError(f"firing {l_ij} is neither 0 nor the attached class {int(attached[j])}")
    return float(np.exp(theta[j, y - 1])) if l_ij != 0 else 1.0


def log_partition(theta: np.ndarray) -> float:
    """log Z(theta) = logsumexp_y ( sum_j softplus(theta[j, y]) ).

    Computed entirely in log space, so it stays finite for |theta| well past
    700 where a naive product of (1 + exp(theta)) would overflow.
    """
    theta = _as_theta(theta)
    if theta.shape[0] == 0:
        return float(np.log(theta.shape[1]))
    return float(_logsumexp(_softplus(theta).sum(axis=0)))


def fired_scores(theta: np.ndarray, firings: np.ndarray) -> np.ndarray:
    """Per-row class scores: s[i, y] = sum over fired LFs of theta[j, y]."""
    theta = _as_theta(theta)
    rows = _as_rows(firings, theta.shape[0])
    return (rows != 0).astype(np.float64) @ theta


def joint_prob(theta: np.ndarray, l_i: np.ndarray, y: int) -> float:
    """P(l_i, y) = exp( sum over fired LFs of theta[j, y] - log Z )."""
    theta = _as_theta(theta)
    if not 1 <= y <= theta.shape[1]:
        raise ValueError(f"class {y} out of range 1..{theta.shape[1]}")
    s = fired_scores(theta, l_i)[0]
    return float(np.exp(s[y - 1] - log_partition(theta)))


def posterior(theta: np.ndarray, l_i: np.ndarray) -> np.ndarray:
    """P(y | l_i): softmax over classes of the fired-LF score vector.

    The shared normalizer cancels, so the posterior depends only on the rows
    of theta whose LFs fired; an all-abstain row gives the uniform
    distribution.
    """
    return posterior_rows(theta, l_i)[0]


def posterior_rows(theta: np.ndarray, firings: np.ndarray) -> np.ndarray:
    return _softmax(fired_scores(theta, firings), axis=1)


def marginal_log_likelihood(theta: np.ndarray, firings: np.ndarray) -> np.ndarray:
    """Per-row log P(l_i) = logsumexp_y s[i, y] - log Z."""
    s = fired_scores(theta, firings)
    return _logsumexp(s, axis=1) - log_partition(theta)


def nll_unsupervised(theta: np.ndarray, firings: np.ndarray) -> float:
    """Negative log-likelihood of the firing rows under the model.

    Rows where every LF abstained are dropped: their likelihood K/Z rewards
    driving all of theta to -inf, a degenerate optimum. An input with no
    firing rows at all contributes 0 and raises a warning.
    """
    theta = _as_theta(theta)
    rows = _as_rows(firings, theta.shape[0])
    rows = rows[(rows != 0).any(axis=1)]
    if rows.shape[0] == 0:
        warnings.warn("no rows with firings; unsupervised loss is 0", stacklevel=2)
        return 0.0
    return float(-marginal_log_likelihood(theta, rows).sum())


def nll_grad(theta: np.ndarray, firings: np.ndarray) -> np.ndarray:
    """Analytic gradient of nll_unsupervised with respect to theta.

    d logZ / d theta[j, y] = pz[y] * sigmoid(theta[j, y]) with
    pz = softmax_y(sum_j softplus(theta[j, y])), and each row i contributes
    -posterior_i[y] on its fired coordinates, so

        grad[j, y] = n * pz[y] * sigmoid(theta[j, y])
                     - sum_i fired[i, j] * posterior_i[y].
    """
    theta = _as_theta(theta)
    rows = _as_rows(firings, theta.shape[0])
    rows = rows[(rows != 0).any(axis=1)]
    if rows.shape[0] == 0:
        return np.zeros_like(theta)
    n = rows.shape[0]
    pz = _softmax(_softplus(theta).sum(axis=0))
    fired = (rows != 0).astype(np.float64)
    post = posterior_rows(theta, rows)
    return n * pz[None, :] * _sigmoid(theta) - fired.T @ post


def _precision_logits(theta: np.ndarray) -> np.ndarray:
    """g[j, y] = theta[j, y] + sum over other LFs of softplus(theta[j', y])."""
    sp = _softplus(theta)
    return theta + sp.sum(axis=0, keepdims=True) - sp


def lf_precision(theta: np.ndarray, attached: np.ndarray, j: int) -> float:
    """Model probability that y equals LF j's class given that LF j fired.

    Conditioning the joint on "LF j fired" and marginalizing the other LFs'
    outcomes gives

        exp(theta[j, k_j]) * prod_{j'!=j} (1 + exp(theta[j', k_j]))
        ----------------------------------------------------------
        sum_y exp(theta[j, y]) * prod_{j'!=j} (1 + exp(theta[j', y]))
    """
    p = lf_precisions(theta, attached)
    if not 0 <= j < len(p):
        raise ValueError(f"LF index {j} out of range")
    return float(p[j])


def lf_precisions(theta: np.ndarray, attached: np.ndarray) -> np.ndarray:
    theta = _as_theta(theta)
    attached = np.asarray(attached, dtype=np.int64)
    probs = _softmax(_precision_logits(theta), axis=1)
    return probs[np.arange(theta.shape[0]), attached - 1]


def precision_guide(
    theta: np.ndarray,
    attached: np.ndarray,
    beliefs: np.ndarray,
    clamp: float = PROB_CLAMP,
) -> float:
    """Bernoulli log-likelihood tying model precisions to believed precisions.

    R = sum_j [ q_j log p_j + (1 - q_j) log(1 - p_j) ] with
    p_j = lf_precision(theta, j), clamped away from {0, 1} before the logs.
    R is maximal when every p_j equals q_j and is always <= 0; the trainer
    subtracts it from the minimized objective.
    """
    q = np.asarray(beliefs, dtype=np.float64)
    p = np.clip(lf_precisions(theta, attached), clamp, 1.0 - clamp)
    return float(np.sum(q * np.log(p) + (1.0 - q) * np.log(1.0 - p)))


def precision_guide_grad(
    theta: np.ndarray,
    attached: np.ndarray,
    beliefs: np.ndarray,
    clamp: float = PROB_CLAMP,
) -> np.ndarray:
    """Analytic gradient of precision_guide with respect to theta.

    With P_j = softmax_y g_j(y), d_j(y) = 1[y = k_j] - P_j(y), and
    c_j = dR/d log p_j, the chain rule through the shared softplus terms gives

        grad[j, y] = c_j d_j(y) (1 - sigmoid(theta[j, y]))
                     + sigmoid(theta[j, y]) * sum_j' c_j' d_j'(y).

    Rows whose p_j hit the clamp contribute zero, matching the value.
    """
    theta = _as_theta(theta)
    attached = np.asarray(attached, dtype=np.int64)
    q = np.asarray(beliefs, dtype=np.float64)
    m = theta.shape[0]

    probs = _softmax(_precision_logits(theta), axis=1)
    p = probs[np.arange(m), attached - 1]
    active = (p > clamp) & (p < 1.0 - clamp)
    safe_p = np.clip(p, clamp, 1.0 - clamp)
    c = np.where(active, q - (1.0 - q) * safe_p / (1.0 - safe_p), 0.0)

    d = -probs.copy()
    d[np.arange(m), attached - 1] += 1.0
    cd = c[:, None] * d
    total = cd.sum(axis=0, keepdims=True)
    sig = _sigmoid(theta)
    return cd * (1.0 - sig) + sig * total


def grad_theta(
    theta: np.ndarray,
    attached: np.ndarray,
    firings: np.ndarray,
    beliefs: np.ndarray,
    guide_weight: float = 1.0,
    clamp: float = PROB_CLAMP,
) -> np.ndarray:
    """Gradient of [ nll_unsupervised - guide_weight * precision_guide ]."""
    return nll_grad(theta, firings) - guide_weight * precision_guide_grad(
        theta, attached, beliefs, clamp
    )


def agreement_grad_theta(
    theta: np.ndarray, firings: np.ndarray, feature_probs: np.ndarray
) -> np.ndarray:
    """Theta gradient of sum_i KL(feature_probs_i || posterior(theta, l_i)).

    Only the cross-entropy part depends on theta; through the posterior
    softmax each row contributes fired[i, j] * (posterior_i[y] - p_i[y]).
    """
    theta = _as_theta(theta)
    rows = _as_rows(firings, theta.shape[0])
    p = np.asarray(feature_probs, dtype=np.float64)
    if p.shape != (rows.shape[0], theta.shape[1]):
        raise ValueError(f"feature probs shape {p.shape} does not match rows/classes")
    fired = (rows != 0).astype(np.float64)
    post = posterior_rows(theta, rows)
    return fired.T @ (post - p)
