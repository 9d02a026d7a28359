"""tablematch: batch entity matching across many tables.

Pipeline: normalize record text (rules or a hosted text model), embed,
pair up mutual nearest neighbors per table pair, merge pairs into
clusters transitively, prune low-density members, and score against
ground truth with tuple-exact precision/recall/F1.
"""

from .ann import ExactIndex, HnswIndex, HnswParams, build_index, exact_search, make_index
from .config import PipelineConfig, load_config
from .coordination import (
    CoordinatedDataset,
    NormalizationRule,
    PromptTemplate,
    TextModelConfig,
    apply_rules,
    build_prompt,
    coordinate,
    default_rules,
    passthrough,
)
from .embedding import (
    EmbedderConfig,
    EmbeddingVector,
    cosine_distance,
    embed_dataset,
    embed_text,
)
from .evaluate import EvalReport, SweepSpec, ablate, score, sweep
from .matching import (
    DisjointSet,
    MatchPair,
    MatchParams,
    collect_pairs,
    mutual_top1_pairs,
    run_matching,
    transitive_merge,
)
from .pipeline import PipelineResult, run_pipeline
from .pruning import EntityLabel, PruneParams, classify, neighborhood, prune
from .synth import CorruptionSpec, SynthSpec, generate
from .tables import (
    Cluster,
    Dataset,
    EntityRef,
    IngestConfig,
    Record,
    SourceTable,
    load_dataset,
    make_cluster,
    read_clusters_csv,
    sample_records,
    serialize_record,
    write_clusters_csv,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "Cluster", "CoordinatedDataset", "CorruptionSpec", "Dataset", "DisjointSet",
    "EmbedderConfig", "EmbeddingVector", "EntityLabel", "EntityRef", "EvalReport", "ExactIndex",
    "HnswIndex", "HnswParams", "IngestConfig", "MatchPair", "MatchParams",
    "NormalizationRule", "PipelineConfig", "PipelineResult", "PromptTemplate",
    "PruneParams", "Record", "SourceTable", "SweepSpec", "SynthSpec",
    "TextModelConfig", "ablate", "apply_rules", "build_index", "build_prompt",
    "classify", "collect_pairs", "coordinate", "cosine_distance", "default_rules",
    "embed_dataset", "embed_text", "exact_search", "generate", "load_config",
    "load_dataset", "make_cluster", "make_index", "mutual_top1_pairs",
    "neighborhood", "passthrough", "prune", "read_clusters_csv", "run_matching",
    "run_pipeline", "sample_records", "score", "serialize_record", "sweep",
    "transitive_merge", "write_clusters_csv", "write_dataset",
]
