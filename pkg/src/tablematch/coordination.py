"""Attribute coordination: make equivalent records textually consistent.

Records from different sources describe the same value in different
shapes ("0.001kg" vs "1g", "02:12" vs "132sec"). This module normalizes
them either with a deterministic rule engine, or by sending batches of
serialized records to a hosted text model driven by a style-specific
prompt, or with the model plus a rule fallback for failed batches.

Rules are applied token-wise. Rules with ambiguous patterns (a bare "05"
could be a year or a track number) fire only on columns whose header
hints at their category; when the text has no headers at all, matching
falls back to patterns alone. Distinctive patterns (unit suffixes, mm:ss)
fire anywhere.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable

import requests

from .tables import (
    SERIALIZE_SEP,
    Dataset,
    EntityRef,
    parse_serialized,
    sample_texts,
    serialize_record,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "TABLEMATCH_API_KEY"

RULE_CATEGORIES = ("time", "year", "abbreviation", "ordinal", "weight", "capacity", "custom")

# Header substrings that mark a column as carrying a given value category.
COLUMN_HINTS: dict[str, tuple[str, ...]] = {
    "time": ("length", "duration", "time", "runtime"),
    "year": ("year",),
    "ordinal": ("number", "track", "rank", "position"),
    "abbreviation": ("language", "lang", "country"),
}


class CoordinationError(RuntimeError):
    """Raised when normalization cannot be completed.

    ``failures`` lists (record address, reason) for every record in the
    failing batch.
    """

    def __init__(self, message: str, failures: list[tuple[EntityRef, str]] | None = None):
        super().__init__(message)
        self.failures = failures or []


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationRule:
    """One token-level rewrite. Applying a rule to its own output is a no-op."""

    rule_id: str
    category: str
    instruction: str
    pattern: re.Pattern
    convert: Callable[[re.Match], str | None]
    needs_hint: bool = False

    def __post_init__(self):
        if self.category not in RULE_CATEGORIES:
            raise ValueError(f"unknown rule category {self.category!r}")


def custom_rule(rule_id: str, pattern: str, replacement: str, instruction: str = "") -> NormalizationRule:
    """User-defined rule from a regex and a backreference template."""
    compiled = re.compile(pattern)
    return NormalizationRule(
        rule_id=rule_id,
        category="custom",
        instruction=instruction or f"Rewrite {pattern} as {replacement}",
        pattern=compiled,
        convert=lambda m: m.expand(replacement),
    )


def _format_decimal(value: Decimal) -> str:
    value = value.normalize()
    if value == value.to_integral_value():
        return str(value.quantize(Decimal(1)))
    return format(value, "f")


_WEIGHT_FACTORS = {"kg": Decimal(1000), "g": Decimal(1), "mg": Decimal("0.001")}
_CAPACITY_FACTORS = {"l": Decimal(1), "ml": Decimal("0.001"), "cl": Decimal("0.01")}

_ABBREVIATIONS = {
    "en": "English",
    "eng": "English",
    "fr": "French",
    "de": "German",
    "ger": "German",
    "es": "Spanish",
    "sp": "Spanish",
    "it": "Italian",
    "pt": "Portuguese",
    "ru": "Russian",
    "ja": "Japanese",
    "jp": "Japanese",
    "zh": "Chinese",
    "nl": "Dutch",
    "sv": "Swedish",
    "pl": "Polish",
}

# Two-digit years split at 30: below it 20xx, from it on 19xx.
YEAR_PIVOT = 30


def _convert_clock(m: re.Match) -> str:
    minutes, seconds = int(m.group(1)), int(m.group(2))
    return f"{minutes * 60 + seconds}sec"


def _convert_time_value(m: re.Match) -> str | None:
    token = m.group(0)
    if "." in token:
        return f"{round(float(token) * 60)}sec"  # decimal minutes
    value = int(token)
    if value >= 10000:
        return f"{round(value / 1000)}sec"  # milliseconds
    return None  # small bare integer: assume already seconds, leave alone


def _convert_year(m: re.Match) -> str:
    two = int(m.group(0))
    century = 2000 if two < YEAR_PIVOT else 1900
    return str(century + two)


def _convert_ordinal(m: re.Match) -> str:
    n = int(m.group(0))
    if 10 <= n % 100 <= 13:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def _convert_abbreviation(m: re.Match) -> str | None:
    return _ABBREVIATIONS.get(m.group(0).lower())


def _convert_weight(m: re.Match) -> str:
    grams = Decimal(m.group(1)) * _WEIGHT_FACTORS[m.group(2).lower()]
    return f"{_format_decimal(grams)}g"


def _convert_capacity(m: re.Match) -> str:
    liters = Decimal(m.group(1)) * _CAPACITY_FACTORS[m.group(2).lower()]
    return f"{_format_decimal(liters)}L"


def default_rules() -> list[NormalizationRule]:
    """The built-in rule set, in precedence order."""
    return [
        NormalizationRule(
            "time_clock", "time", "Convert all durations to seconds",
            re.compile(r"(\d{1,2}):([0-5]\d)"), _convert_clock,
        ),
        NormalizationRule(
            "time_value", "time", "Convert all durations to seconds",
            re.compile(r"\d+(?:\.\d+)?"), _convert_time_value, needs_hint=True,
        ),
        NormalizationRule(
            "year_two_digit", "year", "Convert two-digit years to four-digit years",
            re.compile(r"\d{2}"), _convert_year, needs_hint=True,
        ),
        NormalizationRule(
            "abbreviation", "abbreviation", "Expand and complete abbreviations",
            re.compile(r"[A-Za-z]{2,4}"), _convert_abbreviation, needs_hint=True,
        ),
        NormalizationRule(
            "ordinal", "ordinal", "Convert numeric values to ordinal format",
            re.compile(r"\d{1,3}"), _convert_ordinal, needs_hint=True,
        ),
        NormalizationRule(
            "weight_unit", "weight", "Unify the weight in units of g",
            re.compile(r"(\d+(?:\.\d+)?)(kg|g|mg)", re.IGNORECASE), _convert_weight,
        ),
        NormalizationRule(
            "capacity_unit", "capacity", "Unify the capacity in units of L",
            re.compile(r"(\d+(?:\.\d+)?)(ml|cl|l)", re.IGNORECASE), _convert_capacity,
        ),
    ]


def _hints_for_column(column: str) -> frozenset[str]:
    low = column.lower()
    return frozenset(
        category
        for category, needles in COLUMN_HINTS.items()
        if any(n in low for n in needles)
    )


def _apply_to_cell(
    cell: str,
    rules: list[NormalizationRule],
    hints: frozenset[str] | None,
    builtin_only: bool,
) -> str:
    tokens = cell.split(" ")
    for i, token in enumerate(tokens):
        if not token:
            continue
        # Built-in rules only ever touch tokens with digits or known
        # abbreviations, so everything else can skip the regex round.
        if (
            builtin_only
            and not any(c.isdigit() for c in token)
            and token.lower() not in _ABBREVIATIONS
        ):
            continue
        for rule in rules:
            if hints is not None and rule.needs_hint and rule.category not in hints:
                continue
            m = rule.pattern.fullmatch(token)
            if m is None:
                continue
            replacement = rule.convert(m)
            if replacement is not None:
                tokens[i] = replacement
                break
    return " ".join(tokens)


def apply_rules(record_text: str, rules: list[NormalizationRule] | None = None) -> str:
    """Normalize a serialized record (or a bare value) token by token.

    When ``record_text`` follows the ``"col: value | ..."`` layout, column
    headers gate the hint-dependent rules. Bare text gets pattern-only
    matching with every supplied rule. Unmatched tokens pass through, so
    the operation is idempotent and never fails.
    """
    rules = rules if rules is not None else default_rules()
    builtin_only = all(r.category != "custom" for r in rules)
    pairs = parse_serialized(record_text)
    if pairs is None:
        return _apply_to_cell(record_text, rules, None, builtin_only)
    return SERIALIZE_SEP.join(
        f"{col}: {_apply_to_cell(val, rules, _hints_for_column(col), builtin_only)}"
        for col, val in pairs
    )


# --- prompt construction ------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    style: str  # "simple" | "difficult"
    system_text: str
    per_record_text: str = "{record}"


SIMPLE_TEMPLATE = PromptTemplate(
    style="simple",
    system_text=(
        "You normalize data records for matching. Rewrite each record so that "
        "units, dates, durations and abbreviations use one consistent form. "
        "Keep every field and its name, and return each record on its own line "
        "in the same 'column: value | ...' layout, nothing else.\n"
        "The records look like:\n{samples}"
    ),
)

DIFFICULT_TEMPLATE = PromptTemplate(
    style="difficult",
    system_text=(
        "You normalize data records for matching. Apply these conversions to "
        "every value they fit:\n{rules}\n"
        "Keep every field and its name, and return each record on its own line "
        "in the same 'column: value | ...' layout, nothing else.\n"
        "The records look like:\n{samples}"
    ),
)

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


def _render(template_text: str, values: dict[str, str]) -> str:
    names = set(_PLACEHOLDER_RE.findall(template_text))
    unknown = names - set(values)
    if unknown:
        raise PromptError(f"unresolved placeholder(s): {sorted(unknown)}")
    out = template_text
    for name in names:
        out = out.replace("{" + name + "}", values[name])
    return out


def build_prompt(
    template: PromptTemplate, rules: list[NormalizationRule], samples: list[str]
) -> str:
    """Render the system prompt from rule instructions and sample records.

    Each distinct rule instruction appears exactly once, in rule order.
    """
    if not samples:
        raise PromptError("need at least one sample record")
    instructions = []
    for rule in rules:
        if rule.instruction not in instructions:
            instructions.append(rule.instruction)
    return _render(
        template.system_text,
        {
            "rules": "\n".join(f"- {text}" for text in instructions),
            "samples": "\n".join(samples),
        },
    )


# --- text-model gateway -------------------------------------------------------

@dataclass
class TextModelConfig:
    """Connection and decoding settings for the hosted text model.

    Decoding defaults pin deterministic single-string output: one
    completion, 64 tokens per record, temperature 0, nucleus 0.95.
    ``max_tokens`` is per record; requests scale it by batch size.
    """

    endpoint: str
    model_name: str
    n: int = 1
    max_tokens: int = 64
    temperature: float = 0.0
    top_p: float = 0.95
    batch_size: int = 16
    timeout: float = 30.0
    retry_limit: int = 2

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.n < 1 or self.batch_size < 1:
            raise ValueError("n and batch_size must be >= 1")


def _call_model(system_prompt: str, user_text: str, config: TextModelConfig, n_records: int) -> list[str]:
    payload = {
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": user_text},
        ],
        "n": config.n,
        "max_tokens": config.max_tokens * n_records,
        "temperature": config.temperature,
        "top_p": config.top_p,
    }
    headers = {}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last_err: str = ""
    for attempt in range(config.retry_limit + 1):
        try:
            resp = requests.post(
                config.endpoint, json=payload, headers=headers, timeout=config.timeout
            )
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except Exception as err:  # noqa: BLE001 - every failure kind retries the same way
            last_err = str(err)
            if attempt < config.retry_limit:
                time.sleep(min(0.2 * (attempt + 1), 2.0))
            continue
        lines = content.split("\n")
        while lines and lines[-1] == "":
            lines.pop()
        if len(lines) != n_records:
            raise CoordinationError(
                f"model returned {len(lines)} lines for {n_records} records"
            )
        return lines
    raise CoordinationError(f"model endpoint failed after {config.retry_limit + 1} attempts: {last_err}")


# --- coordination entry points ------------------------------------------------

MODES = ("rules_only", "model_only", "model_with_rule_fallback")


@dataclass
class CoordinatedDataset:
    """A dataset plus one normalized text per record.

    Coordination never adds or removes rows: the key set is exactly the
    source dataset's record addresses.
    """

    dataset: Dataset
    texts: dict[EntityRef, str]

    def __post_init__(self):
        expected = set(self.dataset.all_refs())
        if set(self.texts) != expected:
            missing = expected - set(self.texts)
            extra = set(self.texts) - expected
            raise ValueError(f"texts do not cover the dataset (missing {len(missing)}, extra {len(extra)})")

    def items(self) -> list[tuple[EntityRef, str]]:
        return [(ref, self.texts[ref]) for ref in sorted(self.texts)]

    def text(self, ref: EntityRef) -> str:
        return self.texts[ref]


def _serialized_texts(dataset: Dataset) -> dict[EntityRef, str]:
    return {
        EntityRef(t.table_id, r.row_index): serialize_record(t, r.row_index)
        for t in dataset.tables
        for r in t.rows
    }


def passthrough(dataset: Dataset) -> CoordinatedDataset:
    """Raw serialized records, no normalization (the coordination bypass)."""
    return CoordinatedDataset(dataset, _serialized_texts(dataset))


def coordinate(
    dataset: Dataset,
    mode: str = "rules_only",
    template: PromptTemplate | None = None,
    tm_config: TextModelConfig | None = None,
    rules: list[NormalizationRule] | None = None,
    sample_k: int = 8,
    seed: int = 0,
) -> CoordinatedDataset:
    """Produce one normalized text per record.

    ``rules_only`` is pure and offline. The model modes send records in
    batches and expect one normalized line per record back; with
    ``model_with_rule_fallback`` any batch that still fails after retries
    is normalized by the rule engine instead, while ``model_only`` aborts
    and reports the failing records.
    """
    if mode not in MODES:
        raise ValueError(f"unknown coordination mode {mode!r}, expected one of {MODES}")
    rules = rules if rules is not None else default_rules()
    raw = _serialized_texts(dataset)
    refs = sorted(raw)
    if mode == "rules_only":
        return CoordinatedDataset(dataset, {ref: apply_rules(raw[ref], rules) for ref in refs})

    if tm_config is None:
        raise ValueError(f"mode {mode!r} requires a TextModelConfig")
    template = template or SIMPLE_TEMPLATE
    k = min(sample_k, dataset.total_records())
    system_prompt = build_prompt(template, rules, sample_texts(dataset, k, seed))
    texts: dict[EntityRef, str] = {}
    for start in range(0, len(refs), tm_config.batch_size):
        batch = refs[start : start + tm_config.batch_size]
        user_text = "\n".join(
            _render(template.per_record_text, {"record": raw[ref]}) for ref in batch
        )
        try:
            lines = _call_model(system_prompt, user_text, tm_config, len(batch))
        except CoordinationError as err:
            if mode == "model_only":
                raise CoordinationError(
                    f"coordination aborted at records {batch[0]}..{batch[-1]}: {err}",
                    failures=[(ref, str(err)) for ref in batch],
                ) from err
            logger.warning("batch at %s fell back to rules: %s", batch[0], err)
            lines = [apply_rules(raw[ref], rules) for ref in batch]
        texts.update(zip(batch, (line.strip() for line in lines)))
    return CoordinatedDataset(dataset, texts)
