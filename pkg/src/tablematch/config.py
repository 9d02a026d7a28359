"""Pipeline configuration: one flat key-value file plus CLI overrides.

The file format is ``key = value`` lines with ``#`` comments. Keys use
the external names (``lambda``, ``d``, ``rho_min``); defaults marked
[tuned] below are fixed decoding/embedding/pruning settings the pipeline
was calibrated with, everything else is ordinary engineering default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .ann import EXACT_FALLBACK_MAX_ROWS, HnswParams
from .coordination import (
    DIFFICULT_TEMPLATE,
    SIMPLE_TEMPLATE,
    PromptTemplate,
    TextModelConfig,
)
from .embedding import EmbedderConfig
from .matching import MatchParams
from .pruning import PruneParams

# Stage names accepted by the disable switch, with their legacy aliases.
DISABLE_STAGES = ("coordination", "pruning")
_DISABLE_ALIASES = {"mplac": "coordination", "dpm": "pruning"}


def normalize_disable(values) -> frozenset[str]:
    out = set()
    for value in values:
        name = _DISABLE_ALIASES.get(value.strip().lower(), value.strip().lower())
        if name == "":
            continue
        if name not in DISABLE_STAGES:
            raise ValueError(
                f"unknown stage {value!r}; expected one of {DISABLE_STAGES}"
            )
        out.add(name)
    return frozenset(out)


@dataclass
class PipelineConfig:
    dataset_dir: Path = Path(".")
    out_dir: Path = Path("out")
    cache_dir: Path | None = None
    coordination_mode: str = "rules_only"
    prompt_style: str = "simple"
    tm_endpoint: str | None = None
    tm_model: str | None = None
    tm_batch_size: int = 16
    embedder: str = "hashed_ngram"
    embed_endpoint: str | None = None
    dimension: int = 384            # embedding buckets
    max_seq_length: int = 64        # [tuned] token truncation
    embed_batch_size: int = 512     # [tuned]
    ngram_n: int = 3
    match_threshold: float = 0.3    # key: lambda; max pair distance
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 64
    exact_threshold: int = EXACT_FALLBACK_MAX_ROWS
    prune_radius: float = 0.4       # key: d
    min_neighbors: int = 2          # key: rho_min [tuned]
    sample_k: int = 8
    seed: int = 0
    workers: int = 1
    disable: frozenset[str] = frozenset()

    def embedder_config(self) -> EmbedderConfig:
        return EmbedderConfig(
            kind=self.embedder,
            dimension=self.dimension,
            max_seq_length=self.max_seq_length,
            batch_size=self.embed_batch_size,
            ngram_n=self.ngram_n,
            endpoint=self.embed_endpoint,
        )

    def hnsw_params(self) -> HnswParams:
        return HnswParams(
            m=self.hnsw_m,
            ef_construction=self.hnsw_ef_construction,
            ef_search=self.hnsw_ef_search,
            seed=self.seed,
        )

    def match_params(self) -> MatchParams:
        return MatchParams(
            threshold=self.match_threshold,
            ann=self.hnsw_params(),
            exact_threshold=self.exact_threshold,
            workers=self.workers,
        )

    def prune_params(self) -> PruneParams:
        return PruneParams(radius=self.prune_radius, min_neighbors=self.min_neighbors)

    def prompt_template(self) -> PromptTemplate:
        if self.prompt_style == "simple":
            return SIMPLE_TEMPLATE
        if self.prompt_style == "difficult":
            return DIFFICULT_TEMPLATE
        raise ValueError(f"unknown prompt style {self.prompt_style!r}")

    def tm_config(self) -> TextModelConfig | None:
        if self.coordination_mode == "rules_only":
            return None
        if not self.tm_endpoint or not self.tm_model:
            raise ValueError(
                f"coordination mode {self.coordination_mode!r} needs tm_endpoint and tm_model"
            )
        return TextModelConfig(
            endpoint=self.tm_endpoint,
            model_name=self.tm_model,
            batch_size=self.tm_batch_size,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, frozenset):
                value = sorted(value)
            out[f.name] = value
        return out


# File/flag keys that differ from the dataclass field name.
KEY_ALIASES = {
    "lambda": "match_threshold",
    "d": "prune_radius",
    "rho_min": "min_neighbors",
}

_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    if name in ("dataset_dir", "out_dir"):
        return Path(raw)
    if name == "cache_dir":
        return Path(raw) if raw else None
    if name == "disable":
        return normalize_disable(raw.split(",")) if raw else frozenset()
    if name in ("tm_endpoint", "tm_model", "embed_endpoint"):
        return raw or None
    if name in ("match_threshold", "prune_radius"):
        return float(raw)
    if name in ("coordination_mode", "prompt_style", "embedder"):
        return raw
    return int(raw)


def load_config(path: Path | str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional file plus override values.

    Unknown keys are rejected so typos fail loudly. Override values that
    are already typed (from CLI parsing) pass through unchanged; strings
    are coerced by key.
    """
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, raw = stripped.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = key.strip()
            name = KEY_ALIASES.get(key, key)
            if name not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[name] = _coerce(name, raw.strip())
    for key, value in (overrides or {}).items():
        name = KEY_ALIASES.get(key, key)
        if name not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[name] = _coerce(name, value) if isinstance(value, str) else value
    return PipelineConfig(**values)
