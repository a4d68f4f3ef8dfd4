"""Character dictionary: duplicate screening, entries, naming, metrics."""

from .dedup import DedupGroup, dedup_cliques, maximal_cliques, similarity_graph
from .edh import EDH_LENGTH, DedupConfig, edh_features
from .entries import DictionaryMetrics, build_dictionary, dictionary_metrics, representative
from .naming import NamingOutcome, merge_directives, naming_session, parse_command

__all__ = [
    "DedupConfig",
    "DedupGroup",
    "DictionaryMetrics",
    "EDH_LENGTH",
    "NamingOutcome",
    "build_dictionary",
    "dedup_cliques",
    "dictionary_metrics",
    "edh_features",
    "maximal_cliques",
    "merge_directives",
    "naming_session",
    "parse_command",
    "representative",
    "similarity_graph",
]
