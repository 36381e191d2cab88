"""Weak-supervision token tagging for OCR document layouts.

Heuristic labeling rules over words and bounding boxes are aggregated by a
generative model and trained jointly with a hashed linear classifier, so that
accurate token taggers can be built from very few labeled documents.
"""

__version__ = "0.1.0"

from .documents import (
    BBox,
    Corpus,
    CorpusFormatError,
    CorpusSplit,
    Document,
    NormBBox,
    Token,
    corpus_to_jsonl,
    normalize_bbox,
    parse_documents,
    read_corpus,
    reading_order,
    split_corpus,
)
from .labeling import (
    ABSTAIN,
    ContextParams,
    LabelMatrix,
    LFDiagnostics,
    apply_lf,
    build_label_matrix,
    context_of,
    diagnostics,
    evaluate_rule,
)
from .rules import (
    AllOf,
    AnyOf,
    KeywordRule,
    LabelingFunction,
    NeighborRule,
    Not,
    RegexRule,
    RegionRule,
    SuiteFormatError,
    parse_lf_suite,
    suite_to_json,
)
from .aggregation import (
    grad_theta,
    init_theta,
    joint_prob,
    lf_precision,
    log_partition,
    nll_unsupervised,
    posterior,
    potential,
    precision_guide,
)
from .features import (
    FeatureVector,
    PhiParams,
    TokenFeatures,
    ce_loss_and_grad,
    featurize,
    featurize_corpus,
    forward,
    init_phi,
    kl_grad_and_value,
    predict,
    word_shape,
)
from .evaluation import EvalReport, compare, format_report, score
from .training import (
    AdamState,
    JointTokenTagger,
    TrainConfig,
    TrainedModel,
    TrainingData,
    build_training_data,
    estimate_quality_beliefs,
    joint_step,
    load_bundle,
    save_bundle,
)
from .synth import SynthesisError, SynthSpec, SweepResult, generate, run_sweep
