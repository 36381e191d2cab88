"""Joint training of the feature classifier and the aggregation model.

One optimization step minimizes

    w_ce * CE(labeled batch)            cross-entropy of the classifier
  + w_gm * NLL(unlabeled batch rows)    generative model fit to firings
  + w_kl * sum KL(classifier || aggregation posterior)   agreement term
  + w_qg * (-R)                         precision-belief guide

with ADAM, a linear learning-rate warm-up over the first fraction of total
steps, and early stopping on validation macro-F1. The CE batch is drawn from
labeled instances; the KL batch from all instances (labeled or unlabeled)
where at least one rule fired, with the generative loss applied to its
unlabeled subset. Per epoch the longer stream is sliced sequentially and the
shorter one cycled, so epoch length is ceil(max(|L|, |fired|)/batch_size).

All shuffling derives from a single seed; featurizer hashing and parameter
initialization are themselves deterministic, so two runs with the same seed
and data produce bit-identical histories and parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import aggregation as agg
from . import features as ft
from .documents import Corpus, CorpusSplit
from .evaluation import score
from .labeling import ContextParams, LabelMatrix
from .rules import LabelingFunction, parse_lf_suite, suite_to_json
from .utils import atomic_write_text


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    learning_rate: float = 5e-3
    batch_size: int = 16
    max_epochs: int = 5
    warmup_fraction: float = 0.1
    patience: int = 2
    w_ce: float = 1.0
    w_gm: float = 1.0
    w_kl: float = 1.0
    w_qg: float = 1.0
    guide_clamp: float = 1e-3
    hash_bits: int = ft.DEFAULT_HASH_BITS
    l2: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        for w in ("w_ce", "w_gm", "w_kl", "w_qg"):
            if getattr(self, w) < 0:
                raise ValueError(f"{w} must be >= 0")
        if not 0.0 < self.guide_clamp < 0.5:
            raise ValueError("guide_clamp must be in (0, 0.5)")


@dataclass
class AdamState:
    """First/second-moment accumulators shaped like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def warmup_lr(base_lr: float, step: int, total_steps: int, warmup_fraction: float) -> float:
    """Learning rate at 1-based step: linear ramp, then constant."""
    warm = max(1, math.ceil(warmup_fraction * total_steps))
    return base_lr * min(1.0, step / warm)


def adam_apply(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    config: TrainConfig,
) -> None:
    """One in-place ADAM update; a missing gradient counts as zero."""
    state.step += 1
    t = state.step
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    for key in params:
        g = grads.get(key)
        m, v = state.m[key], state.v[key]
        if g is None:
            m *= b1
            v *= b2
            # zero gradient: m and v decay toward zero and the step is zero
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def estimate_quality_beliefs(
    firings_val: np.ndarray,
    gold_val: np.ndarray,
    attached: np.ndarray,
    eps: float = 1e-3,
) -> np.ndarray:
    """Empirical LF precision on the validation split, clamped to [eps, 1-eps].

    Rules that never fire on validation get the uninformative value 0.5.
    """
    rows = np.asarray(firings_val, dtype=np.int64)
    gold = np.asarray(gold_val, dtype=np.int64)
    if rows.shape[0] == 0:
        raise ValueError("validation split is empty")
    if gold.shape != (rows.shape[0],):
        raise ValueError("gold labels do not align with the validation rows")
    attached = np.asarray(attached, dtype=np.int64)
    fired = rows != 0
    fires = fired.sum(axis=0)
    correct = (fired & (gold[:, None] == attached[None, :])).sum(axis=0)
    q = np.full(len(attached), 0.5, dtype=np.float64)
    has = fires > 0
    q[has] = correct[has] / fires[has]
    return np.clip(q, eps, 1.0 - eps)


@dataclass
class TrainingData:
    """Aligned per-instance arrays in canonical corpus order."""

    features: ft.TokenFeatures
    firings: np.ndarray
    attached: np.ndarray
    gold: np.ndarray
    class_names: tuple[str, ...]
    rows_labeled: np.ndarray
    rows_unlabeled: np.ndarray
    rows_validation: np.ndarray
    rows_test: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_instances(self) -> int:
        return self.features.n_instances


def build_training_data(
    corpus: Corpus,
    matrix: LabelMatrix,
    split: CorpusSplit,
    context_params: ContextParams,
    hash_bits: int = ft.DEFAULT_HASH_BITS,
) -> TrainingData:
    """Featurize the corpus and align it with the matrix and split.

    Gold labels of unlabeled documents are stripped from the returned view;
    they remain on disk but are invisible to training.
    """
    expected = tuple(
        (corpus.documents[d].doc_id, t) for d, t in corpus.instances
    )
    if matrix.instance_index != expected:
        raise ValueError("label matrix rows do not align with the corpus instance order")
    feats = ft.featurize_corpus(corpus, context_params, hash_bits)
    rows = split.rows(corpus)
    gold = corpus.gold_labels()
    gold[rows["unlabeled"]] = 0
    return TrainingData(
        features=feats,
        firings=matrix.rows,
        attached=np.asarray(matrix.lf_classes, dtype=np.int64),
        gold=gold,
        class_names=corpus.classes,
        rows_labeled=rows["labeled"],
        rows_unlabeled=rows["unlabeled"],
        rows_validation=rows["validation"],
        rows_test=rows["test"],
    )


def _stream_batch(perm: np.ndarray, step: int, batch_size: int, is_longest: bool) -> np.ndarray:
    lo = step * batch_size
    if is_longest:
        return perm[lo : lo + batch_size]
    return perm[np.arange(lo, lo + batch_size) % len(perm)]


def joint_step(
    phi: ft.PhiParams,
    theta: np.ndarray,
    data: TrainingData,
    batch_l: np.ndarray,
    batch_u: np.ndarray,
    beliefs: np.ndarray,
    config: TrainConfig,
    adam: AdamState,
    total_steps: int,
    unlabeled_mask: np.ndarray,
) -> dict[str, float]:
    """One joint update; returns the loss breakdown at the pre-update point."""
    if len(batch_l) == 0 and len(batch_u) == 0:
        raise ValueError("both batches are empty")

    grad_w: np.ndarray | None = None
    grad_b: np.ndarray | None = None
    grad_theta: np.ndarray | None = None
    ce = gm = kl = qg = 0.0

    if config.w_ce > 0 and len(batch_l):
        fvs = [data.features.vector(int(r)) for r in batch_l]
        ce, gw, gb = ft.ce_loss_and_grad(phi, fvs, data.gold[batch_l], l2=config.l2)
        grad_w = config.w_ce * gw
        grad_b = config.w_ce * gb

    if config.w_kl > 0 and len(batch_u):
        fvs = [data.features.vector(int(r)) for r in batch_u]
        rows_u = data.firings[batch_u]
        targets = agg.posterior_rows(theta, rows_u)
        kl, gw, gb = ft.kl_batch(phi, fvs, targets)
        grad_w = config.w_kl * gw if grad_w is None else grad_w + config.w_kl * gw
        grad_b = config.w_kl * gb if grad_b is None else grad_b + config.w_kl * gb
        p_feat = np.stack([ft.forward(phi, fv) for fv in fvs])
        gt = agg.agreement_grad_theta(theta, rows_u, p_feat)
        grad_theta = config.w_kl * gt

    if config.w_gm > 0 and len(batch_u):
        rows_gm = batch_u[unlabeled_mask[batch_u]]
        if len(rows_gm):
            gm = agg.nll_unsupervised(theta, data.firings[rows_gm])
            gt = agg.nll_grad(theta, data.firings[rows_gm])
            grad_theta = config.w_gm * gt if grad_theta is None else grad_theta + config.w_gm * gt

    if config.w_qg > 0:
        qg = -agg.precision_guide(theta, data.attached, beliefs)
        gt = -agg.precision_guide_grad(theta, data.attached, beliefs)
        grad_theta = config.w_qg * gt if grad_theta is None else grad_theta + config.w_qg * gt

    total = config.w_ce * ce + config.w_gm * gm + config.w_kl * kl + config.w_qg * qg
    lr = warmup_lr(config.learning_rate, adam.step + 1, total_steps, config.warmup_fraction)
    adam_apply(
        params={"phi_w": phi.weights, "phi_b": phi.bias, "theta": theta},
        grads={"phi_w": grad_w, "phi_b": grad_b, "theta": grad_theta},
        state=adam,
        lr=lr,
        config=config,
    )
    return {"ce": ce, "gm": gm, "kl": kl, "qg": qg, "total": total}


class JointTokenTagger(BaseEstimator):
    """Semi-supervised token classifier trained against rule firings.

    fit() learns the classifier weights and the rule-reliability parameters
    jointly; predict() uses the classifier alone, since rules may not fire on
    unseen layouts. With w_gm = w_kl = w_qg = 0 this reduces exactly to
    supervised cross-entropy training on the labeled rows.
    """

    def __init__(
        self,
        learning_rate: float = 5e-3,
        batch_size: int = 16,
        max_epochs: int = 5,
        warmup_fraction: float = 0.1,
        patience: int = 2,
        w_ce: float = 1.0,
        w_gm: float = 1.0,
        w_kl: float = 1.0,
        w_qg: float = 1.0,
        guide_clamp: float = 1e-3,
        hash_bits: int = ft.DEFAULT_HASH_BITS,
        l2: float = 1e-5,
        adam_beta1: float = 0.9,
        adam_beta2: float = 0.999,
        adam_eps: float = 1e-8,
        seed: int = 0,
    ) -> None:
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.warmup_fraction = warmup_fraction
        self.patience = patience
        self.w_ce = w_ce
        self.w_gm = w_gm
        self.w_kl = w_kl
        self.w_qg = w_qg
        self.guide_clamp = guide_clamp
        self.hash_bits = hash_bits
        self.l2 = l2
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed

    def config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, data: TrainingData) -> "JointTokenTagger":
        cfg = self.config()
        if data.features.hash_bits != cfg.hash_bits:
            raise ValueError(
                f"features were hashed with {data.features.hash_bits} bits, "
                f"the tagger expects {cfg.hash_bits}"
            )
        if cfg.w_ce > 0 and len(data.rows_labeled) == 0:
            raise ValueError("no labeled instances but w_ce > 0")
        if len(data.rows_validation) == 0:
            raise ValueError("validation split is empty")

        beliefs = estimate_quality_beliefs(
            data.firings[data.rows_validation],
            data.gold[data.rows_validation],
            data.attached,
            eps=cfg.guide_clamp,
        )

        fired = (data.firings != 0).any(axis=1)
        train_pool = np.zeros(data.n_instances, dtype=bool)
        train_pool[data.rows_labeled] = True
        train_pool[data.rows_unlabeled] = True
        rows_fired = np.nonzero(fired & train_pool)[0]
        unlabeled_mask = np.zeros(data.n_instances, dtype=bool)
        unlabeled_mask[data.rows_unlabeled] = True

        use_l = cfg.w_ce > 0 and len(data.rows_labeled) > 0
        use_u = (cfg.w_gm > 0 or cfg.w_kl > 0) and len(rows_fired) > 0
        if (cfg.w_gm > 0 or cfg.w_kl > 0) and len(rows_fired) == 0:
            raise ValueError("no instances with rule firings to train the aggregation model")
        n_l = len(data.rows_labeled) if use_l else 0
        n_u = len(rows_fired) if use_u else 0
        longest = max(n_l, n_u)
        if longest == 0:
            raise ValueError("nothing to train on: both batch streams are empty")
        steps_per_epoch = math.ceil(longest / cfg.batch_size)
        total_steps = steps_per_epoch * cfg.max_epochs

        rng = np.random.default_rng(cfg.seed)
        phi = ft.init_phi(cfg.hash_bits, data.n_classes)
        theta = agg.init_theta(data.attached, data.n_classes)
        adam = AdamState.for_params({"phi_w": phi.weights, "phi_b": phi.bias, "theta": theta})

        history: list[dict] = []
        best: tuple[float, int, ft.PhiParams, np.ndarray] | None = None
        bad_epochs = 0
        stop_after = max(1, cfg.patience)

        for epoch in range(cfg.max_epochs):
            perm_l = rng.permutation(n_l) if use_l else None
            perm_u = rng.permutation(n_u) if use_u else None
            sums = {"ce": 0.0, "gm": 0.0, "kl": 0.0, "qg": 0.0, "total": 0.0}
            for s in range(steps_per_epoch):
                batch_l = (
                    data.rows_labeled[_stream_batch(perm_l, s, cfg.batch_size, n_l == longest)]
                    if use_l
                    else np.zeros(0, dtype=np.int64)
                )
                batch_u = (
                    rows_fired[_stream_batch(perm_u, s, cfg.batch_size, n_u == longest)]
                    if use_u
                    else np.zeros(0, dtype=np.int64)
                )
                breakdown = joint_step(
                    phi, theta, data, batch_l, batch_u, beliefs, cfg, adam,
                    total_steps, unlabeled_mask,
                )
                for k in sums:
                    sums[k] += breakdown[k]

            val_pred = ft.predict_rows(phi, data.features, data.rows_validation)
            val_f1 = score(data.gold[data.rows_validation], val_pred, data.class_names).macro_f1
            entry = {k: sums[k] / steps_per_epoch for k in sums}
            entry["epoch"] = epoch
            entry["val_f1"] = val_f1
            history.append(entry)

            if best is None or val_f1 > best[0]:
                best = (val_f1, epoch, phi.copy(), theta.copy())
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= stop_after:
                    break

        assert best is not None
        self.phi_ = best[2]
        self.theta_ = best[3]
        self.attached_ = data.attached.copy()
        self.beliefs_ = beliefs
        self.classes_ = data.class_names
        self.history_ = history
        self.best_epoch_ = best[1]
        return self

    def predict_proba(self, feats: ft.TokenFeatures, rows: np.ndarray | None = None) -> np.ndarray:
        if rows is None:
            rows = np.arange(feats.n_instances)
        return ft.forward_probs(self.phi_, feats, rows)

    def predict(self, feats: ft.TokenFeatures, rows: np.ndarray | None = None) -> np.ndarray:
        return np.argmax(self.predict_proba(feats, rows), axis=1) + 1

    def predict_token(self, fv: ft.FeatureVector) -> tuple[int, np.ndarray]:
        """Class index and distribution for a single featurized token."""
        dist = ft.forward(self.phi_, fv)
        return int(np.argmax(dist)) + 1, dist

    def to_model(self, lfs: list[LabelingFunction]) -> "TrainedModel":
        return TrainedModel(
            phi=self.phi_,
            theta=self.theta_,
            attached=self.attached_,
            lfs=lfs,
            class_names=self.classes_,
            config=self.get_params(),
            history=self.history_,
            best_epoch=self.best_epoch_,
        )


@dataclass
class TrainedModel:
    """A trained bundle: both parameter sets plus the suite that produced them."""

    phi: ft.PhiParams
    theta: np.ndarray
    attached: np.ndarray
    lfs: list[LabelingFunction]
    class_names: tuple[str, ...]
    config: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def predict_token(self, fv: ft.FeatureVector) -> tuple[int, np.ndarray]:
        dist = ft.forward(self.phi, fv)
        return int(np.argmax(dist)) + 1, dist

    def predict_proba(self, feats: ft.TokenFeatures, rows: np.ndarray | None = None) -> np.ndarray:
        if rows is None:
            rows = np.arange(feats.n_instances)
        return ft.forward_probs(self.phi, feats, rows)

    def fused_proba(
        self, feats: ft.TokenFeatures, firings: np.ndarray, rows: np.ndarray | None = None
    ) -> np.ndarray:
        """Optional extension: average the classifier distribution with the
        aggregation posterior on tokens where at least one rule fired."""
        if rows is None:
            rows = np.arange(feats.n_instances)
        probs = self.predict_proba(feats, rows)
        sub = np.asarray(firings, dtype=np.int64)[rows]
        has_fire = (sub != 0).any(axis=1)
        if has_fire.any():
            post = agg.posterior_rows(self.theta, sub[has_fire])
            probs[has_fire] = 0.5 * (probs[has_fire] + post)
        return probs


def save_theta(
    theta: np.ndarray,
    lfs: list[LabelingFunction],
    class_names: tuple[str, ...],
    path: str | Path,
) -> None:
    obj = {
        "classes": list(class_names),
        "lfs": [{"id": lf.lf_id, "class": class_names[lf.attached_class - 1]} for lf in lfs],
        "theta": np.asarray(theta, dtype=np.float64).tolist(),
        "version": 1,
    }
    atomic_write_text(path, json.dumps(obj) + "\n")


def load_theta(path: str | Path, lfs: list[LabelingFunction]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Load a parameter snapshot, validating its shape against the suite."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    classes = tuple(obj["classes"])
    theta = np.asarray(obj["theta"], dtype=np.float64)
    if theta.shape != (len(lfs), len(classes)):
        raise ValueError(
            f"theta shape {theta.shape} does not match {len(lfs)} LFs x {len(classes)} classes"
        )
    snapshot_ids = [e["id"] for e in obj["lfs"]]
    if snapshot_ids != [lf.lf_id for lf in lfs]:
        raise ValueError("snapshot LF ids do not match the suite")
    return theta, classes


def format_history(history: list[dict]) -> str:
    headers = ("epoch", "ce", "gm", "kl", "qg", "total", "val_f1")
    rows = [
        tuple(
            f"{e[h]:.6f}" if h != "epoch" else str(e[h])
            for h in headers
        )
        for e in history
    ]
    widths = [max(len(h), *(len(r[c]) for r in rows)) for c, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(widths[c]) for c, v in enumerate(r)) for r in rows)
    return "\n".join(lines) + "\n"


def save_bundle(model: TrainedModel, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "lf_suite.json", suite_to_json(model.lfs, model.class_names))
    save_theta(model.theta, model.lfs, model.class_names, out / "theta.json")
    ft.save_phi(model.phi, model.class_names, out / "phi.json")
    atomic_write_text(out / "config.json", json.dumps(model.config, sort_keys=True) + "\n")
    atomic_write_text(
        out / "history.json",
        json.dumps({"history": model.history, "best_epoch": model.best_epoch}) + "\n",
    )
    atomic_write_text(out / "history.txt", format_history(model.history))


def load_bundle(bundle_dir: str | Path) -> TrainedModel:
    out = Path(bundle_dir)
    theta_obj = json.loads((out / "theta.json").read_text(encoding="utf-8"))
    classes = tuple(theta_obj["classes"])
    lfs = parse_lf_suite(out / "lf_suite.json", classes)
    theta, _ = load_theta(out / "theta.json", lfs)
    phi, phi_classes = ft.load_phi(out / "phi.json")
    if phi_classes != classes:
        raise ValueError("classifier snapshot classes do not match the suite snapshot")
    config = json.loads((out / "config.json").read_text(encoding="utf-8"))
    hist = json.loads((out / "history.json").read_text(encoding="utf-8"))
    return TrainedModel(
        phi=phi,
        theta=theta,
        attached=np.array([lf.attached_class for lf in lfs], dtype=np.int64),
        lfs=lfs,
        class_names=classes,
        config=config,
        history=hist["history"],
        best_epoch=int(hist["best_epoch"]),
    )
