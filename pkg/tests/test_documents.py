import io
import json

import numpy as np
import pytest

from weaktag import documents as docs
from weaktag.documents import (
    BBox,
    Corpus,
    CorpusFormatError,
    Document,
    Token,
    corpus_to_jsonl,
    normalize_bbox,
    parse_documents,
    read_corpus,
    reading_order,
    split_corpus,
)

HEADER = '{"classes": ["item", "amount"]}'


def _doc_line(doc_id="d1", tokens=None, width=1000, height=500):
    tokens = tokens if tokens is not None else [
        {"text": "alpha", "bbox": [10, 10, 60, 26], "label": "item"},
        {"text": "1.50", "bbox": [700, 10, 740, 26], "label": "amount"},
    ]
    return json.dumps({"doc_id": doc_id, "width": width, "height": height, "tokens": tokens})


class TestTypes:
    def test_bbox_rejects_reversed_corners(self):
        with pytest.raises(ValueError):
            BBox(10, 0, 5, 5)
        with pytest.raises(ValueError):
            BBox(0, 10, 5, 5)

    def test_bbox_rejects_negative(self):
        with pytest.raises(ValueError):
            BBox(-1, 0, 5, 5)

    def test_token_rejects_empty_and_newline(self):
        with pytest.raises(ValueError):
            Token(text="", bbox=BBox(0, 0, 1, 1))
        with pytest.raises(ValueError):
            Token(text="a\nb", bbox=BBox(0, 0, 1, 1))

    def test_document_rejects_out_of_page_token(self):
        tok = Token(text="x", bbox=BBox(0, 0, 1200, 20))
        with pytest.raises(ValueError):
            Document(doc_id="d", page_width=1000, page_height=500, tokens=(tok,))

    def test_corpus_rejects_duplicate_doc_ids(self):
        d = Document(doc_id="d", page_width=10, page_height=10, tokens=())
        with pytest.raises(ValueError):
            Corpus(classes=("a",), documents=(d, d))


class TestNormalizeBBox:
    def test_full_page_box(self):
        nb = normalize_bbox(BBox(0, 0, 1000, 500), 1000, 500)
        assert (nb.x0, nb.y0, nb.x1, nb.y1) == (0.0, 0.0, 1.0, 1.0)

    def test_exact_division(self):
        nb = normalize_bbox(BBox(250, 100, 500, 200), 1000, 400)
        assert (nb.x0, nb.y0, nb.x1, nb.y1) == (0.25, 0.25, 0.5, 0.5)

    def test_zero_page_dimension(self):
        with pytest.raises(ValueError):
            normalize_bbox(BBox(0, 0, 10, 10), 0, 400)

    def test_results_stay_in_unit_square(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            w, h = rng.uniform(10, 2000, size=2)
            x0, y0 = rng.uniform(0, 0.9, size=2)
            bbox = BBox(x0 * w, y0 * h, min(w, (x0 + 0.1) * w), min(h, (y0 + 0.1) * h))
            nb = normalize_bbox(bbox, w, h)
            assert 0 <= nb.x0 <= nb.x1 <= 1
            assert 0 <= nb.y0 <= nb.y1 <= 1


class TestReadingOrder:
    def _doc(self, boxes):
        tokens = tuple(Token(text=f"t{i}", bbox=BBox(*b)) for i, b in enumerate(boxes))
        return Document(doc_id="d", page_width=1000, page_height=500, tokens=tokens)

    def test_same_line_sorted_left_to_right(self):
        doc = self._doc([(400, 10, 440, 26), (10, 10, 50, 26)])
        assert reading_order(doc) == [1, 0]

    def test_distinct_lines_sorted_top_down(self):
        doc = self._doc([(10, 200, 50, 216), (400, 10, 440, 26)])
        assert reading_order(doc) == [1, 0]

    def test_singleton_and_empty(self):
        assert reading_order(self._doc([(0, 0, 10, 10)])) == [0]
        assert reading_order(self._doc([])) == []

    def test_always_a_permutation(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(1, 30))
            boxes = []
            for _i in range(n):
                x0 = float(rng.uniform(0, 900))
                y0 = float(rng.uniform(0, 480))
                boxes.append((x0, y0, x0 + 40, y0 + 16))
            order = reading_order(self._doc(boxes))
            assert sorted(order) == list(range(n))

    def test_deterministic(self):
        doc = self._doc([(10, 10, 50, 26), (10.0, 11.0, 50, 27), (300, 10, 340, 26)])
        assert reading_order(doc) == reading_order(doc)


class TestParsing:
    def test_round_trip(self):
        text = HEADER + "\n" + _doc_line()
        corpus = read_corpus(io.StringIO(text))
        again = read_corpus(io.StringIO(corpus_to_jsonl(corpus)))
        assert again == corpus

    def test_two_tokens_preserved_in_order(self):
        parsed = parse_documents(io.StringIO(HEADER + "\n" + _doc_line()))
        assert len(parsed) == 1
        assert [t.text for t in parsed[0].tokens] == ["alpha", "1.50"]

    def test_empty_stream(self):
        assert parse_documents(io.StringIO("")) == []
        corpus = read_corpus(io.StringIO(""))
        assert corpus.documents == ()

    def test_reversed_bbox_names_token(self):
        bad = _doc_line(tokens=[{"text": "x", "bbox": [50, 10, 10, 26]}])
        with pytest.raises(CorpusFormatError, match=r"token 0"):
            read_corpus(io.StringIO(HEADER + "\n" + bad))

    def test_error_names_line_number(self):
        bad = HEADER + "\n" + _doc_line() + "\n" + "{not json"
        with pytest.raises(CorpusFormatError, match=r"line 3"):
            read_corpus(io.StringIO(bad))

    def test_undeclared_label_rejected(self):
        bad = _doc_line(tokens=[{"text": "x", "bbox": [0, 0, 5, 5], "label": "total"}])
        with pytest.raises(CorpusFormatError, match=r"'total'"):
            read_corpus(io.StringIO(HEADER + "\n" + bad))

    def test_missing_header_rejected(self):
        with pytest.raises(CorpusFormatError, match="header"):
            read_corpus(io.StringIO(_doc_line()))

    def test_bytes_stream_accepted(self):
        text = HEADER + "\n" + _doc_line()
        corpus = read_corpus(io.BytesIO(text.encode("utf-8")))
        assert corpus.n_classes == 2


def _corpus_of(n_docs, labeled_every=1):
    lines = [json.dumps({"classes": ["a", "b"]})]
    for i in range(n_docs):
        label = {"label": "a"} if i % labeled_every == 0 else {}
        lines.append(
            json.dumps(
                {
                    "doc_id": f"d{i}",
                    "width": 100,
                    "height": 100,
                    "tokens": [{"text": "w", "bbox": [0, 0, 10, 10], **label}],
                }
            )
        )
    return read_corpus(io.StringIO("\n".join(lines)))


class TestSplitCorpus:
    def test_counts(self):
        corpus = _corpus_of(100)
        split = split_corpus(corpus, 0.01, 0.10, 0.10, seed=5)
        assert len(split.labeled) == 1
        assert len(split.validation) == 10
        assert len(split.test) == 10
        assert len(split.unlabeled) == 79

    def test_deterministic(self):
        corpus = _corpus_of(60)
        a = split_corpus(corpus, 0.1, 0.1, 0.1, seed=9)
        b = split_corpus(corpus, 0.1, 0.1, 0.1, seed=9)
        assert a == b

    def test_fraction_sum_over_one_rejected(self):
        corpus = _corpus_of(10)
        with pytest.raises(ValueError):
            split_corpus(corpus, 0.9, 0.4, 0.2, seed=0)

    def test_insufficient_gold_docs(self):
        corpus = _corpus_of(20, labeled_every=4)  # only 5 fully labeled docs
        with pytest.raises(ValueError, match="gold-labeled"):
            split_corpus(corpus, 0.2, 0.2, 0.2, seed=0)

    def test_partition_of_rows(self):
        corpus = _corpus_of(50)
        split = split_corpus(corpus, 0.1, 0.2, 0.2, seed=2)
        rows = split.rows(corpus)
        merged = np.concatenate(list(rows.values()))
        assert sorted(merged.tolist()) == list(range(corpus.n_instances))

    def test_gold_present_on_supervised_parts(self):
        corpus = _corpus_of(40, labeled_every=2)
        split = split_corpus(corpus, 0.1, 0.1, 0.1, seed=2)
        rows = split.rows(corpus)
        gold = corpus.gold_labels()
        for part in ("labeled", "validation", "test"):
            assert np.all(gold[rows[part]] > 0)

    def test_manifest_round_trip(self):
        corpus = _corpus_of(30)
        split = split_corpus(corpus, 0.1, 0.1, 0.1, seed=4)
        again = docs.CorpusSplit.from_obj(json.loads(json.dumps(split.to_obj())))
        assert again == split
