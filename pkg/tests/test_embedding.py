import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablematch.coordination import passthrough
from tablematch.embedding import (
    EmbedderConfig,
    EmbeddingError,
    cosine_distance,
    embed_dataset,
    embed_text,
)
from tablematch.tables import Dataset, EntityRef, Record, SourceTable

CFG = EmbedderConfig(dimension=64)


def _ngram_overlap_distance(a: str, b: str, n: int = 3) -> float:
    """Brute-force signed-TF cosine over explicit n-gram count dicts."""

    def grams(text):
        joined = " ".join(text.lower().split())
        data = joined.encode("utf-8")
        if len(data) < n:
            data = data + b"\x00" * (n - len(data))
        counts: dict[bytes, int] = {}
        for i in range(len(data) - n + 1):
            g = data[i : i + n]
            counts[g] = counts.get(g, 0) + 1
        return counts

    ca, cb = grams(a), grams(b)
    dot = sum(ca[g] * cb.get(g, 0) for g in ca)
    na = sum(v * v for v in ca.values()) ** 0.5
    nb = sum(v * v for v in cb.values()) ** 0.5
    return 1 - dot / (na * nb)


class TestEmbedText:
    def test_identical_strings_identical_vectors(self):
        a = embed_text("title: X-T50 camera", CFG)
        b = embed_text("title: X-T50 camera", CFG)
        assert np.array_equal(a, b)

    @given(st.text(max_size=120))
    @settings(max_examples=200)
    def test_unit_norm(self, text):
        vec = embed_text(text, CFG)
        assert vec.shape == (64,)
        assert np.all(np.isfinite(vec))
        assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-6

    def test_empty_text_fixed_basis(self):
        vec = embed_text("", CFG)
        assert vec[0] == 1.0
        assert float(np.linalg.norm(vec)) == 1.0

    def test_near_strings_closer_than_far_strings(self):
        # the hashed vectors should respect the explicit n-gram overlap oracle
        d_near = cosine_distance(embed_text("abcdef", CFG), embed_text("abcdex", CFG))
        d_far = cosine_distance(embed_text("abcdef", CFG), embed_text("uvwxyz", CFG))
        assert 0 < d_near <= 1
        assert d_near < d_far
        oracle_near = _ngram_overlap_distance("abcdef", "abcdex")
        oracle_far = _ngram_overlap_distance("abcdef", "uvwxyz")
        assert oracle_near < oracle_far

    def test_token_truncation(self):
        config = EmbedderConfig(dimension=64, max_seq_length=2)
        assert np.array_equal(
            embed_text("one two three four", config), embed_text("one two", config)
        )

    def test_case_insensitive(self):
        assert np.array_equal(embed_text("Alpha Beta", CFG), embed_text("alpha beta", CFG))

    def test_dimension_validated(self):
        with pytest.raises(ValueError):
            EmbedderConfig(dimension=4)


def _toy_dataset(texts_a, texts_b):
    t0 = SourceTable(0, "a", ["title"], [Record([v], i) for i, v in enumerate(texts_a)])
    t1 = SourceTable(1, "b", ["title"], [Record([v], i) for i, v in enumerate(texts_b)])
    return Dataset(tables=[t0, t1])


class TestEmbedDataset:
    def test_one_vector_per_record(self):
        ds = _toy_dataset(["a", "b", "c"], ["d", "e"])
        out = embed_dataset(passthrough(ds), CFG)
        assert set(out) == set(ds.all_refs())

    def test_identical_records_distance_zero(self):
        ds = _toy_dataset(["same text"], ["same text"])
        out = embed_dataset(passthrough(ds), CFG)
        assert np.array_equal(out[EntityRef(0, 0)], out[EntityRef(1, 0)])
        assert cosine_distance(out[EntityRef(0, 0)], out[EntityRef(1, 0)]) == pytest.approx(
            0.0, abs=1e-6
        )

    def test_batch_size_does_not_change_result(self):
        ds = _toy_dataset([f"rec {i}" for i in range(7)], ["x", "y"])
        small = embed_dataset(passthrough(ds), EmbedderConfig(dimension=64, batch_size=2))
        large = embed_dataset(passthrough(ds), EmbedderConfig(dimension=64, batch_size=512))
        assert set(small) == set(large)
        for ref in small:
            assert np.array_equal(small[ref], large[ref])

    def test_plain_dict_input(self):
        out = embed_dataset({EntityRef(0, 0): "hello"}, CFG)
        assert set(out) == {EntityRef(0, 0)}


class TestDistance:
    @given(st.text(min_size=1, max_size=60))
    @settings(max_examples=100)
    def test_self_distance_zero(self, text):
        v = embed_text(text, CFG)
        assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-6)

    @given(st.text(min_size=1, max_size=60), st.text(min_size=1, max_size=60))
    @settings(max_examples=100)
    def test_symmetric_and_bounded(self, a, b):
        va, vb = embed_text(a, CFG), embed_text(b, CFG)
        d1, d2 = cosine_distance(va, vb), cosine_distance(vb, va)
        assert d1 == pytest.approx(d2, abs=1e-7)
        assert 0 <= d1 <= 2


class _EmbedStub(BaseHTTPRequestHandler):
    mode = "ok"

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        texts = body["texts"]
        if self.mode == "fail":
            self.send_response(500)
            self.end_headers()
            return
        dim = 8 if self.mode == "wrong_dim" else 64
        vectors = []
        for i, _ in enumerate(texts):
            vec = [0.0] * dim
            vec[i % dim] = 1.0
            vectors.append(vec)
        payload = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def embed_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbedStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    thread.join(timeout=5)


class TestExternalService:
    def _config(self, server):
        host, port = server.server_address
        return EmbedderConfig(
            kind="external_service", dimension=64, endpoint=f"http://{host}:{port}/embed"
        )

    def test_service_vectors_used(self, embed_server):
        _EmbedStub.mode = "ok"
        out = embed_dataset({EntityRef(0, 0): "a", EntityRef(0, 1): "b"}, self._config(embed_server))
        assert len(out) == 2
        for vec in out.values():
            assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-6

    def test_wrong_dimension_rejected(self, embed_server):
        _EmbedStub.mode = "wrong_dim"
        with pytest.raises(EmbeddingError, match="dimension"):
            embed_dataset({EntityRef(0, 0): "a"}, self._config(embed_server))

    def test_failure_reports_retries(self, embed_server):
        _EmbedStub.mode = "fail"
        with pytest.raises(EmbeddingError, match="attempts"):
            embed_dataset({EntityRef(0, 0): "a"}, self._config(embed_server))
