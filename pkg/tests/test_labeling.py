import numpy as np
import pytest

from weaktag.documents import BBox, Corpus, Document, NormBBox, Token
from weaktag.labeling import (
    ContextParams,
    DocContext,
    LabelMatrix,
    apply_lf,
    build_label_matrix,
    context_of,
    diagnostics,
    evaluate_rule,
)
from weaktag.rules import (
    AllOf,
    AnyOf,
    KeywordRule,
    LabelingFunction,
    NeighborRule,
    Not,
    RegexRule,
    RegionRule,
    Rule,
)


def _line_doc(texts, y0=100.0, spacing=120.0, doc_id="d"):
    tokens = []
    for i, text in enumerate(texts):
        x0 = 50.0 + i * spacing
        tokens.append(Token(text=text, bbox=BBox(x0, y0, x0 + 60.0, y0 + 16.0)))
    return Document(doc_id=doc_id, page_width=1000, page_height=500, tokens=tuple(tokens))


class TestContext:
    def test_window_neighbors_with_directions(self):
        doc = _line_doc(["left", "mid", "right"])
        ctx = context_of(doc, 1, ContextParams(window=1, radius=0.0))
        by_dir = {c.direction: c.token.text for c in ctx.neighbors}
        assert by_dir == {"left": "left", "right": "right"}

    def test_degenerate_params_give_empty_context(self):
        doc = _line_doc(["a", "b", "c"])
        ctx = context_of(doc, 1, ContextParams(window=0, radius=0.0))
        assert ctx.neighbors == ()

    def test_single_token_document(self):
        doc = _line_doc(["only"])
        ctx = context_of(doc, 0, ContextParams(window=3, radius=1.0))
        assert ctx.neighbors == ()

    def test_vertical_direction(self):
        t0 = Token(text="up", bbox=BBox(100, 50, 160, 66))
        t1 = Token(text="down", bbox=BBox(100, 300, 160, 316))
        doc = Document(doc_id="d", page_width=1000, page_height=500, tokens=(t0, t1))
        ctx = context_of(doc, 1, ContextParams(window=1, radius=0.0))
        assert ctx.neighbors[0].direction == "above"
        ctx0 = context_of(doc, 0, ContextParams(window=1, radius=0.0))
        assert ctx0.neighbors[0].direction == "below"

    def test_radius_neighbors_deduplicated_with_window(self):
        doc = _line_doc(["a", "b", "c"], spacing=80.0)
        ctx = context_of(doc, 1, ContextParams(window=2, radius=1.0))
        assert sorted(c.index for c in ctx.neighbors) == [0, 2]

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            ContextParams(window=-1)
        with pytest.raises(ValueError):
            ContextParams(radius=2.0)


class TestApplyLF:
    def test_keyword_matches_lowercased(self):
        doc = _line_doc(["TOTAL"])
        lf = LabelingFunction("k", 2, KeywordRule(frozenset({"total"})))
        ctx = context_of(doc, 0, ContextParams())
        assert apply_lf(lf, doc.tokens[0], ctx) == 2

    def test_region_center_outside(self):
        # token centered near (0.1, 0.9); region is the top-right quadrant
        tok = Token(text="x", bbox=BBox(80, 440, 120, 460))
        doc = Document(doc_id="d", page_width=1000, page_height=500, tokens=(tok,))
        lf = LabelingFunction("r", 1, RegionRule(NormBBox(0.5, 0.0, 1.0, 0.5)))
        assert apply_lf(lf, tok, context_of(doc, 0, ContextParams())) == 0

    def test_neighbor_missing_is_false(self):
        doc = _line_doc(["12", "word"])
        lf = LabelingFunction("n", 1, NeighborRule("left", RegexRule("^[0-9]+$")))
        ctx = context_of(doc, 0, ContextParams(window=1, radius=0.0))
        assert apply_lf(lf, doc.tokens[0], ctx) == 0
        # and fires where the left neighbor exists and matches
        ctx1 = context_of(doc, 1, ContextParams(window=1, radius=0.0))
        assert apply_lf(lf, doc.tokens[1], ctx1) == 1

    def test_nested_neighbor_uses_neighbor_context(self):
        doc = _line_doc(["1", "mid", "end"])
        # "left neighbor itself has a numeric left neighbor"
        inner = NeighborRule("left", RegexRule("^[0-9]+$"))
        lf = LabelingFunction("nn", 1, NeighborRule("left", inner))
        ctx = context_of(doc, 2, ContextParams(window=1, radius=0.0))
        assert apply_lf(lf, doc.tokens[2], ctx) == 1

    def test_prefix_keyword(self):
        doc = _line_doc(["Subtotal:"])
        lf = LabelingFunction("p", 1, KeywordRule(frozenset({"sub"}), match_mode="prefix"))
        assert apply_lf(lf, doc.tokens[0], context_of(doc, 0, ContextParams())) == 1

    def test_deterministic(self):
        doc = _line_doc(["alpha", "12.50"])
        lf = LabelingFunction("d", 1, AnyOf((RegexRule("[0-9]"), KeywordRule(frozenset({"alpha"})))))
        params = ContextParams()
        first = [apply_lf(lf, doc.tokens[i], context_of(doc, i, params)) for i in range(2)]
        second = [apply_lf(lf, doc.tokens[i], context_of(doc, i, params)) for i in range(2)]
        assert first == second


def _random_rule(rng: np.random.Generator, depth: int) -> Rule:
    kinds = ["regex", "keyword", "region"]
    if depth > 1:
        kinds += ["neighbor", "all_of", "any_of", "not"]
    kind = kinds[int(rng.integers(0, len(kinds)))]
    if kind == "regex":
        return RegexRule(["^[a-z]+$", "[0-9]", "^tok[0-9]$", "o"][int(rng.integers(0, 4))])
    if kind == "keyword":
        words = ["tok1", "tok2", "alpha", "beta", "12"]
        chosen = frozenset(w for w in words if rng.random() < 0.4)
        return KeywordRule(chosen)
    if kind == "region":
        x0, y0 = rng.uniform(0, 0.5, size=2)
        return RegionRule(NormBBox(float(x0), float(y0), float(x0 + 0.5), float(y0 + 0.5)))
    if kind == "neighbor":
        direction = ["left", "right", "above", "below"][int(rng.integers(0, 4))]
        return NeighborRule(direction, _random_rule(rng, depth - 1))
    if kind == "all_of":
        return AllOf(tuple(_random_rule(rng, depth - 1) for _ in range(int(rng.integers(1, 3)))))
    if kind == "any_of":
        return AnyOf(tuple(_random_rule(rng, depth - 1) for _ in range(int(rng.integers(1, 3)))))
    return Not(_random_rule(rng, depth - 1))


def _random_doc(rng: np.random.Generator, n_tokens: int) -> Document:
    texts = ["tok1", "tok2", "alpha", "beta", "12", "12.50"]
    tokens = []
    for _ in range(n_tokens):
        x0 = float(rng.uniform(0, 900))
        y0 = float(rng.uniform(0, 480))
        tokens.append(
            Token(text=texts[int(rng.integers(0, len(texts)))], bbox=BBox(x0, y0, x0 + 50, y0 + 16))
        )
    return Document(doc_id="rand", page_width=1000, page_height=500, tokens=tuple(tokens))


class TestRuleAlgebra:
    def test_double_negation(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            rule = _random_rule(rng, depth=3)
            doc = _random_doc(rng, int(rng.integers(1, 8)))
            dc = DocContext(doc, ContextParams(window=1, radius=0.15))
            for i in range(len(doc.tokens)):
                ctx = dc.context_of(i)
                assert evaluate_rule(Not(Not(rule)), ctx) == evaluate_rule(rule, ctx)

    def test_empty_junctions(self):
        doc = _random_doc(np.random.default_rng(1), 1)
        ctx = DocContext(doc, ContextParams()).context_of(0)
        assert evaluate_rule(AllOf(()), ctx) is True
        assert evaluate_rule(AnyOf(()), ctx) is False


def _three_by_two() -> tuple[Corpus, list[LabelingFunction]]:
    doc = _line_doc(["aa", "bb", "cc"])
    corpus = Corpus(classes=("one", "two"), documents=(doc,))
    lfs = [
        LabelingFunction("lf1", 1, KeywordRule(frozenset({"aa", "cc"}))),
        LabelingFunction("lf2", 2, KeywordRule(frozenset({"cc"}))),
    ]
    return corpus, lfs


class TestLabelMatrix:
    def test_three_by_two_example(self):
        corpus, lfs = _three_by_two()
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        np.testing.assert_array_equal(matrix.rows, [[1, 0], [0, 0], [1, 2]])

    def test_empty_corpus(self):
        corpus = Corpus(classes=("one",), documents=())
        lfs = [LabelingFunction("a", 1, KeywordRule(frozenset({"x"})))]
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        assert matrix.rows.shape == (0, 1)

    def test_no_lfs_rejected(self):
        corpus, _ = _three_by_two()
        with pytest.raises(ValueError):
            build_label_matrix([], corpus, ContextParams())

    def test_entries_constrained_to_attached_class(self):
        with pytest.raises(ValueError, match="attached"):
            LabelMatrix(
                rows=np.array([[2]]),
                lf_ids=("a",),
                lf_classes=(1,),
                class_names=("one", "two"),
                instance_index=(("d", 0),),
            )

    def test_save_load_round_trip(self, tmp_path):
        corpus, lfs = _three_by_two()
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        path = tmp_path / "m.json"
        matrix.save(path)
        again = LabelMatrix.load(path)
        np.testing.assert_array_equal(again.rows, matrix.rows)
        assert again.lf_ids == matrix.lf_ids
        assert again.instance_index == matrix.instance_index


class TestDiagnostics:
    def test_hand_derived_example(self):
        corpus, lfs = _three_by_two()
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        diag = diagnostics(matrix)
        np.testing.assert_allclose(diag.coverage, [2 / 3, 1 / 3])
        assert diag.overlap == pytest.approx(1 / 3)
        assert diag.conflict == pytest.approx(1 / 3)
        assert diag.precision == (None, None)

    def test_precision_with_gold(self):
        corpus, lfs = _three_by_two()
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        diag = diagnostics(matrix, gold=np.array([1, 2, 2]))
        assert diag.precision[0] == pytest.approx(0.5)
        assert diag.precision[1] == pytest.approx(1.0)

    def test_all_zero_matrix(self):
        matrix = LabelMatrix(
            rows=np.zeros((4, 2), dtype=np.int64),
            lf_ids=("a", "b"),
            lf_classes=(1, 2),
            class_names=("one", "two"),
            instance_index=tuple(("d", i) for i in range(4)),
        )
        diag = diagnostics(matrix)
        assert diag.coverage == (0.0, 0.0)
        assert diag.overlap == 0.0
        assert diag.conflict == 0.0

    def test_gold_length_mismatch(self):
        corpus, lfs = _three_by_two()
        matrix = build_label_matrix(lfs, corpus, ContextParams())
        with pytest.raises(ValueError):
            diagnostics(matrix, gold=np.array([1, 2]))

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(3)
        rows = np.array([[1, 0], [0, 0], [1, 2], [0, 2], [1, 2]])
        gold = np.array([1, 2, 2, 2, 1])
        perm = rng.permutation(len(rows))
        base = LabelMatrix(
            rows=rows,
            lf_ids=("a", "b"),
            lf_classes=(1, 2),
            class_names=("one", "two"),
            instance_index=tuple(("d", i) for i in range(5)),
        )
        shuffled = LabelMatrix(
            rows=rows[perm],
            lf_ids=("a", "b"),
            lf_classes=(1, 2),
            class_names=("one", "two"),
            instance_index=tuple(("d", int(i)) for i in perm),
        )
        d1 = diagnostics(base, gold)
        d2 = diagnostics(shuffled, gold[perm])
        assert d1.coverage == d2.coverage
        assert d1.precision == d2.precision
        assert d1.overlap == d2.overlap
        assert d1.conflict == d2.conflict

    def test_conflict_overlap_coverage_ordering(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            m = int(rng.integers(1, 5))
            n = int(rng.integers(1, 40))
            attached = rng.integers(1, 4, size=m)
            rows = np.where(rng.random((n, m)) < 0.4, attached[None, :], 0)
            matrix = LabelMatrix(
                rows=rows,
                lf_ids=tuple(f"lf{j}" for j in range(m)),
                lf_classes=tuple(int(a) for a in attached),
                class_names=("one", "two", "three"),
                instance_index=tuple(("d", i) for i in range(n)),
            )
            diag = diagnostics(matrix)
            assert diag.conflict <= diag.overlap + 1e-12
            assert diag.overlap <= min(1.0, sum(diag.coverage)) + 1e-12
