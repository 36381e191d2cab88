"""Deterministic token featurizer and hashed linear softmax classifier.

The featurizer is the desk-scale stand-in for a heavy layout encoder: a
dense block of geometry and character statistics plus hashed indicator
features (token identity, word shape, character 3-grams, nearest left/right
neighbor identity) folded into a 2**hash_bits space with the hashing trick.
Hashing uses BLAKE2b truncated to 64 bits with a fixed personalization tag
per feature family, so indices are bit-identical across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import math
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .documents import Corpus, Document, Token, normalize_bbox
from .labeling import ContextParams, DocContext, TokenContext
from .utils import atomic_write_text

DENSE_DIM = 8
DEFAULT_HASH_BITS = 18

_FAMILY_TOKEN = b"tok"
_FAMILY_SHAPE = b"shape"
_FAMILY_TRIGRAM = b"3gram"
_FAMILY_LEFT = b"left"
_FAMILY_RIGHT = b"right"
_NO_NEIGHBOR = "<none>"

_PUNCT = set(string.punctuation)


def stable_hash(text: str, family: bytes) -> int:
    """Fixed 64-bit hash, independent of process and platform."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, person=family).digest()
    return int.from_bytes(digest, "big")


def word_shape(text: str) -> str:
    """Collapse characters to x/X/9/# classes with runs merged."""
    out: list[str] = []
    for c in text:
        if c.islower():
            ch = "x"
        elif c.isupper():
            ch = "X"
        elif c.isdigit():
            ch = "9"
        else:
            ch = "#"
        if not out or out[-1] != ch:
            out.append(ch)
    return "".join(out)


@dataclass(frozen=True)
class FeatureVector:
    """Dense statistics plus hashed sparse indices for one token."""

    dense: np.ndarray
    indices: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dense", np.asarray(self.dense, dtype=np.float64))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        if self.dense.shape != (DENSE_DIM,):
            raise ValueError(f"dense block must have shape ({DENSE_DIM},), got {self.dense.shape}")


def featurize(
    token: Token,
    context: TokenContext,
    doc: Document,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> FeatureVector:
    """Deterministic features for one token in its context."""
    mask = (1 << hash_bits) - 1
    text = token.text
    n = len(text)
    nb = normalize_bbox(token.bbox, doc.page_width, doc.page_height)
    cx, cy = nb.center
    dense = np.array(
        [
            cx,
            cy,
            nb.width,
            nb.height,
            math.log1p(n),
            sum(c.isdigit() for c in text) / n,
            sum(c.isupper() for c in text) / n,
            sum(c in _PUNCT for c in text) / n,
        ],
        dtype=np.float64,
    )

    low = text.lower()
    indices = [
        stable_hash(low, _FAMILY_TOKEN) & mask,
        stable_hash(word_shape(text), _FAMILY_SHAPE) & mask,
    ]
    grams = [low[i : i + 3] for i in range(len(low) - 2)] if len(low) >= 3 else [low]
    indices.extend(stable_hash(g, _FAMILY_TRIGRAM) & mask for g in grams)
    for direction, family in (("left", _FAMILY_LEFT), ("right", _FAMILY_RIGHT)):
        neighbor = context.nearest(direction)
        word = neighbor.token.text.lower() if neighbor is not None else _NO_NEIGHBOR
        indices.append(stable_hash(word, family) & mask)
    return FeatureVector(dense=dense, indices=np.array(indices, dtype=np.int64))


@dataclass
class TokenFeatures:
    """Featurized corpus in canonical instance order (CSR-style sparse part)."""

    dense: np.ndarray
    indices: np.ndarray
    offsets: np.ndarray
    hash_bits: int

    @property
    def n_instances(self) -> int:
        return int(self.dense.shape[0])

    def vector(self, row: int) -> FeatureVector:
        lo, hi = int(self.offsets[row]), int(self.offsets[row + 1])
        return FeatureVector(dense=self.dense[row], indices=self.indices[lo:hi])


def featurize_corpus(
    corpus: Corpus,
    context_params: ContextParams,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> TokenFeatures:
    dense = np.zeros((corpus.n_instances, DENSE_DIM), dtype=np.float64)
    all_indices: list[np.ndarray] = []
    offsets = np.zeros(corpus.n_instances + 1, dtype=np.int64)
    doc_ctx = [DocContext(doc, context_params) for doc in corpus.documents]
    for r, (d, t) in enumerate(corpus.instances):
        doc = corpus.documents[d]
        fv = featurize(doc.tokens[t], doc_ctx[d].context_of(t), doc, hash_bits)
        dense[r] = fv.dense
        all_indices.append(fv.indices)
        offsets[r + 1] = offsets[r] + len(fv.indices)
    indices = np.concatenate(all_indices) if all_indices else np.zeros(0, dtype=np.int64)
    return TokenFeatures(dense=dense, indices=indices, offsets=offsets, hash_bits=hash_bits)


@dataclass
class PhiParams:
    """Classifier weights: one row per dense dimension and hash bucket."""

    weights: np.ndarray
    bias: np.ndarray
    hash_bits: int

    @property
    def n_classes(self) -> int:
        return int(self.bias.shape[0])

    def copy(self) -> "PhiParams":
        return PhiParams(self.weights.copy(), self.bias.copy(), self.hash_bits)


def init_phi(hash_bits: int, n_classes: int) -> PhiParams:
    rows = DENSE_DIM + (1 << hash_bits)
    return PhiParams(
        weights=np.zeros((rows, n_classes), dtype=np.float64),
        bias=np.zeros(n_classes, dtype=np.float64),
        hash_bits=hash_bits,
    )


def _logits(phi: PhiParams, fv: FeatureVector) -> np.ndarray:
    if int(fv.indices.max(initial=-1)) >= (1 << phi.hash_bits):
        raise ValueError("sparse index exceeds the classifier's hash space")
    z = phi.bias + fv.dense @ phi.weights[:DENSE_DIM]
    if len(fv.indices):
        z = z + phi.weights[DENSE_DIM + fv.indices].sum(axis=0)
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def forward(phi: PhiParams, fv: FeatureVector) -> np.ndarray:
    """Class distribution for one token; sums to 1 for any finite inputs."""
    return np.exp(_log_softmax(_logits(phi, fv)))


def predict(phi: PhiParams, fv: FeatureVector) -> int:
    """Most probable class (1-based); exact ties go to the lowest index."""
    return int(np.argmax(forward(phi, fv))) + 1


def _scatter_logit_grad(
    phi: PhiParams, fvs: list[FeatureVector], g: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Map per-sample logit gradients g (B, K) back onto the parameters."""
    grad_w = np.zeros_like(phi.weights)
    for fv, g_row in zip(fvs, g):
        grad_w[:DENSE_DIM] += fv.dense[:, None] * g_row[None, :]
        np.add.at(grad_w, DENSE_DIM + fv.indices, g_row)
    return grad_w, g.sum(axis=0)


def ce_loss_and_grad(
    phi: PhiParams,
    batch: list[FeatureVector],
    gold: np.ndarray,
    l2: float = 1e-5,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over a batch plus L2 on the weights (bias excluded).

    Returns (loss, weight gradient, bias gradient); the gradient matches
    central finite differences of the returned loss.
    """
    if not batch:
        raise ValueError("empty batch")
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (len(batch),):
        raise ValueError(f"gold has shape {gold.shape} for a batch of {len(batch)}")
    if gold.min() < 1 or gold.max() > phi.n_classes:
        raise ValueError(f"gold labels must lie in 1..{phi.n_classes}")

    b = len(batch)
    logp = np.stack([_log_softmax(_logits(phi, fv)) for fv in batch])
    loss = float(-logp[np.arange(b), gold - 1].mean())
    g = np.exp(logp)
    g[np.arange(b), gold - 1] -= 1.0
    g /= b
    grad_w, grad_b = _scatter_logit_grad(phi, batch, g)
    if l2:
        loss += 0.5 * l2 * float(np.sum(phi.weights**2))
        grad_w += l2 * phi.weights
    return loss, grad_w, grad_b


def kl_grad_and_value(
    phi: PhiParams, fv: FeatureVector, target: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(classifier distribution || target) and its gradient on phi.

    The target is clamped below at 1e-9 inside the log; the gradient flows
    through the classifier's softmax Jacobian only.
    """
    kl, grad_w, grad_b = kl_batch(phi, [fv], np.asarray(target, dtype=np.float64)[None, :])
    return kl, grad_w, grad_b


def kl_batch(
    phi: PhiParams, batch: list[FeatureVector], targets: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of per-token KL terms over a batch, with summed gradients."""
    if not batch:
        raise ValueError("empty batch")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(batch), phi.n_classes):
        raise ValueError(f"targets shape {targets.shape} does not match the batch")
    logp = np.stack([_log_softmax(_logits(phi, fv)) for fv in batch])
    p = np.exp(logp)
    a = logp - np.log(np.clip(targets, 1e-9, None))
    per_row = (p * a).sum(axis=1)
    # d KL / d logit_k = p_k * (a_k - KL)
    g = p * (a - per_row[:, None])
    grad_w, grad_b = _scatter_logit_grad(phi, batch, g)
    return float(per_row.sum()), grad_w, grad_b


def forward_probs(phi: PhiParams, feats: TokenFeatures, rows: np.ndarray) -> np.ndarray:
    """Class distributions for a set of featurized rows."""
    out = np.zeros((len(rows), phi.n_classes), dtype=np.float64)
    for i, r in enumerate(rows):
        out[i] = forward(phi, feats.vector(int(r)))
    return out


def predict_rows(phi: PhiParams, feats: TokenFeatures, rows: np.ndarray) -> np.ndarray:
    return np.argmax(forward_probs(phi, feats, rows), axis=1) + 1


def save_phi(phi: PhiParams, classes: tuple[str, ...], path: str | Path) -> None:
    nonzero = np.nonzero(np.any(phi.weights != 0.0, axis=1))[0]
    obj = {
        "hash_bits": phi.hash_bits,
        "dense_dim": DENSE_DIM,
        "classes": list(classes),
        "weights": [[int(r), phi.weights[r].tolist()] for r in nonzero],
        "bias": phi.bias.tolist(),
        "version": 1,
    }
    atomic_write_text(path, json.dumps(obj) + "\n")


def load_phi(path: str | Path) -> tuple[PhiParams, tuple[str, ...]]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("dense_dim") != DENSE_DIM:
        raise ValueError(f"snapshot dense_dim {obj.get('dense_dim')} != {DENSE_DIM}")
    classes = tuple(obj["classes"])
    phi = init_phi(int(obj["hash_bits"]), len(classes))
    for r, row in obj["weights"]:
        if not 0 <= int(r) < phi.weights.shape[0]:
            raise ValueError(f"weight row index {r} out of range")
        phi.weights[int(r)] = np.asarray(row, dtype=np.float64)
    phi.bias = np.asarray(obj["bias"], dtype=np.float64)
    if phi.bias.shape != (len(classes),):
        raise ValueError("bias length does not match the class vocabulary")
    return phi, classes
