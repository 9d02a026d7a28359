import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablematch.coordination import (
    DIFFICULT_TEMPLATE,
    SIMPLE_TEMPLATE,
    CoordinationError,
    PromptError,
    TextModelConfig,
    apply_rules,
    build_prompt,
    coordinate,
    custom_rule,
    default_rules,
    passthrough,
)
from tablematch.tables import Dataset, Record, SourceTable, serialize_record


def rules_for(category):
    return [r for r in default_rules() if r.category == category]


class TestRuleFixtures:
    """The built-in conversion table, one category at a time."""

    @pytest.mark.parametrize(
        ("category", "raw", "expected"),
        [
            ("weight", "0.001kg", "1g"),
            ("weight", "1.5kg", "1500g"),
            ("weight", "500mg", "0.5g"),
            ("capacity", "2500ml", "2.5L"),
            ("capacity", "1000ml", "1L"),
            ("capacity", "50cl", "0.5L"),
            ("year", "05", "2005"),
            ("year", "95", "1995"),
            ("ordinal", "01", "1st"),
            ("ordinal", "2", "2nd"),
            ("ordinal", "3", "3rd"),
            ("ordinal", "11", "11th"),
            ("ordinal", "23", "23rd"),
            ("abbreviation", "En", "English"),
            ("abbreviation", "Eng", "English"),
            ("abbreviation", "Fr", "French"),
            # mm:ss arithmetic: 2 minutes 12 seconds
            ("time", "02:12", "132sec"),
            ("time", "137000", "137sec"),
            ("time", "2.283", "137sec"),
        ],
    )
    def test_category_fixture(self, category, raw, expected):
        assert apply_rules(raw, rules_for(category)) == expected

    def test_no_rule_matches_passes_through(self):
        assert apply_rules("no units, plain text") == "no units, plain text"

    def test_small_bare_integer_in_time_column_left_alone(self):
        assert apply_rules("length: 132", default_rules()) == "length: 132"

    def test_full_set_with_column_hints(self):
        raw = "number: 01 | length: 02:12 | year: 05 | language: En | weight: 0.001kg | capacity: 2500ml"
        out = apply_rules(raw, default_rules())
        assert out == (
            "number: 1st | length: 132sec | year: 2005 | language: English"
            " | weight: 1g | capacity: 2.5L"
        )

    def test_hints_prevent_cross_category_rewrites(self):
        # a two-digit number in a non-year column stays put
        assert apply_rules("postcode: 05", default_rules()) == "postcode: 05"
        # decimal in a non-time column is not a duration
        assert apply_rules("price: 2.283", default_rules()) == "price: 2.283"

    def test_rules_only_fire_on_their_tokens(self):
        out = apply_rules("title: Running 2500ml bottle", default_rules())
        assert out == "title: Running 2.5L bottle"

    def test_custom_rule(self):
        rule = custom_rule("dash", r"(\w+)-(\w+)", r"\1 \2")
        assert apply_rules("X-T50", [rule]) == "X T50"


class TestRuleProperties:
    @given(st.integers(min_value=0, max_value=59), st.integers(min_value=0, max_value=59))
    def test_clock_oracle(self, minutes, seconds):
        token = f"{minutes:02d}:{seconds:02d}"
        assert apply_rules(token, rules_for("time")) == f"{minutes * 60 + seconds}sec"

    @given(st.integers(min_value=10000, max_value=10_000_000))
    def test_milliseconds_oracle(self, ms):
        assert apply_rules(str(ms), rules_for("time")) == f"{round(ms / 1000)}sec"

    @given(
        st.decimals(min_value="0.001", max_value="100000", places=3),
        st.sampled_from(["kg", "g", "mg"]),
    )
    @settings(max_examples=200)
    def test_weight_preserves_magnitude(self, qty, unit):
        factor = {"kg": 1000, "g": 1, "mg": 0.001}[unit]
        out = apply_rules(f"{qty}{unit}", rules_for("weight"))
        assert out.endswith("g")
        recovered = float(out[:-1])
        expected = float(qty) * factor
        assert recovered == pytest.approx(expected, rel=1e-9)

    @given(
        st.decimals(min_value="0.001", max_value="100000", places=3),
        st.sampled_from(["l", "ml", "cl", "L", "mL"]),
    )
    @settings(max_examples=200)
    def test_capacity_preserves_magnitude(self, qty, unit):
        factor = {"l": 1, "ml": 0.001, "cl": 0.01}[unit.lower()]
        out = apply_rules(f"{qty}{unit}", rules_for("capacity"))
        assert out.endswith("L")
        assert float(out[:-1]) == pytest.approx(float(qty) * factor, rel=1e-9)

    @pytest.mark.parametrize(
        "text",
        [
            "0.001kg",
            "2500ml",
            "02:12",
            "137000",
            "2.283",
            "number: 01 | year: 05 | language: En",
            "weight: 1.5kg | capacity: 50cl | length: 03:20",
            "title: plain words only",
        ],
    )
    def test_idempotent(self, text):
        once = apply_rules(text)
        assert apply_rules(once) == once

    @given(st.text(alphabet="abcdefg 0123456789.:", max_size=40))
    @settings(max_examples=300)
    def test_idempotent_on_arbitrary_bare_text(self, text):
        once = apply_rules(text)
        assert apply_rules(once) == once


def _dataset():
    t0 = SourceTable(
        table_id=0,
        name="a",
        columns=["title", "weight"],
        rows=[
            Record(["alpha", "0.001kg"], 0),
            Record(["beta", "2kg"], 1),
            Record(["gamma", "30g"], 2),
        ],
    )
    t1 = SourceTable(
        table_id=1,
        name="b",
        columns=["title", "weight"],
        rows=[Record(["alpha", "1g"], 0), Record(["delta", "5g"], 1)],
    )
    return Dataset(tables=[t0, t1])


class TestPrompts:
    def test_simple_prompt_contains_samples_verbatim(self):
        samples = ["title: a", "title: b", "title: c"]
        prompt = build_prompt(SIMPLE_TEMPLATE, default_rules(), samples)
        for sample in samples:
            assert sample in prompt

    def test_difficult_prompt_lists_each_instruction_once(self):
        prompt = build_prompt(DIFFICULT_TEMPLATE, default_rules(), ["title: x"])
        for instruction in (
            "Convert all durations to seconds",
            "Convert two-digit years to four-digit years",
            "Expand and complete abbreviations",
            "Convert numeric values to ordinal format",
            "Unify the weight in units of g",
            "Unify the capacity in units of L",
        ):
            assert prompt.count(instruction) == 1

    def test_empty_samples_rejected(self):
        with pytest.raises(PromptError):
            build_prompt(SIMPLE_TEMPLATE, default_rules(), [])

    def test_unresolved_placeholder_rejected(self):
        from tablematch.coordination import PromptTemplate

        bad = PromptTemplate(style="simple", system_text="hello {nonsense}")
        with pytest.raises(PromptError, match="nonsense"):
            build_prompt(bad, default_rules(), ["s"])


class _StubHandler(BaseHTTPRequestHandler):
    behavior = "echo"
    calls = 0

    def do_POST(self):
        type(self).calls += 1
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        user_text = body["messages"][1]["content"]
        if self.behavior == "fail":
            self.send_response(500)
            self.end_headers()
            return
        if self.behavior == "extra_line":
            content = user_text + "\nunexpected trailing line"
        else:
            content = user_text
        payload = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.calls = 0
    yield server
    server.shutdown()
    thread.join(timeout=5)


def _tm_config(server, **kwargs):
    host, port = server.server_address
    defaults = dict(batch_size=2, timeout=5.0, retry_limit=1)
    defaults.update(kwargs)
    return TextModelConfig(endpoint=f"http://{host}:{port}/v1/chat", model_name="stub", **defaults)


class TestCoordinate:
    def test_rules_only_normalizes(self):
        ds = _dataset()
        coordinated = coordinate(ds, "rules_only")
        assert "weight: 1g" in coordinated.text(ds.all_refs()[0])

    def test_rules_only_pure(self):
        ds = _dataset()
        assert coordinate(ds, "rules_only").texts == coordinate(ds, "rules_only").texts

    def test_cardinality_preserved(self):
        ds = _dataset()
        coordinated = coordinate(ds, "rules_only")
        assert set(coordinated.texts) == set(ds.all_refs())

    def test_echo_model_returns_serialized_input(self, stub_server):
        _StubHandler.behavior = "echo"
        ds = _dataset()
        coordinated = coordinate(ds, "model_only", tm_config=_tm_config(stub_server))
        for table in ds.tables:
            for rec in table.rows:
                from tablematch.tables import EntityRef

                ref = EntityRef(table.table_id, rec.row_index)
                assert coordinated.text(ref) == serialize_record(table, rec.row_index)

    def test_failing_model_aborts_in_model_only(self, stub_server):
        _StubHandler.behavior = "fail"
        ds = _dataset()
        with pytest.raises(CoordinationError) as exc:
            coordinate(ds, "model_only", tm_config=_tm_config(stub_server))
        assert len(exc.value.failures) == 2  # the failing batch, per record

    def test_failing_model_falls_back_to_rules(self, stub_server):
        _StubHandler.behavior = "fail"
        ds = _dataset()
        fallback = coordinate(
            ds, "model_with_rule_fallback", tm_config=_tm_config(stub_server)
        )
        assert fallback.texts == coordinate(ds, "rules_only").texts

    def test_line_count_mismatch_aborts_or_falls_back(self, stub_server):
        _StubHandler.behavior = "extra_line"
        ds = _dataset()
        with pytest.raises(CoordinationError, match="lines"):
            coordinate(ds, "model_only", tm_config=_tm_config(stub_server))
        fallback = coordinate(
            ds, "model_with_rule_fallback", tm_config=_tm_config(stub_server)
        )
        assert fallback.texts == coordinate(ds, "rules_only").texts

    def test_retries_are_attempted(self, stub_server):
        _StubHandler.behavior = "fail"
        ds = _dataset()
        config = _tm_config(stub_server, retry_limit=2, batch_size=16)
        with pytest.raises(CoordinationError):
            coordinate(ds, "model_only", tm_config=config)
        assert _StubHandler.calls == 3  # initial try + two retries for one batch

    def test_model_mode_requires_config(self):
        with pytest.raises(ValueError, match="requires"):
            coordinate(_dataset(), "model_only")

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown coordination mode"):
            coordinate(_dataset(), "magic")

    def test_passthrough_is_raw_serialization(self):
        ds = _dataset()
        raw = passthrough(ds)
        assert raw.text(ds.all_refs()[0]) == "title: alpha | weight: 0.001kg"


class TestTextModelConfigValidation:
    def test_defaults_are_deterministic_decoding(self):
        config = TextModelConfig(endpoint="http://x", model_name="m")
        assert (config.n, config.max_tokens, config.temperature, config.top_p) == (
            1,
            64,
            0.0,
            0.95,
        )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"temperature": -0.1},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"n": 0},
            {"batch_size": 0},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TextModelConfig(endpoint="http://x", model_name="m", **kwargs)
