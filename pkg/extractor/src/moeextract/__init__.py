"""Routing-trace extractor for open-weight MoE checkpoints."""

from .align import (
    AlignmentError,
    AlignmentResult,
    GoldWord,
    align_with_gold,
    parse_gold_conllu,
    sentence_layout,
)
from .extract import (
    DEFAULT_ROUTER_PATTERN,
    DumpReport,
    ExtractorConfig,
    ExtractorError,
    UD_TAGS,
    dump_traces,
)

__all__ = [
    "AlignmentError",
    "AlignmentResult",
    "GoldWord",
    "align_with_gold",
    "parse_gold_conllu",
    "sentence_layout",
    "DEFAULT_ROUTER_PATTERN",
    "DumpReport",
    "ExtractorConfig",
    "ExtractorError",
    "UD_TAGS",
    "dump_traces",
]
