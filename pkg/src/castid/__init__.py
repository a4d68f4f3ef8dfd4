"""Self-supervised character identity pipeline for animated video.

Detections and base embeddings go in; tracklets, triplets, a refined
embedding space, character clusters, a named dictionary, a classifier and
dense per-frame labels come out. See ``castid --help`` for the CLI.
"""

from .errors import CastError, ConfigError, IntegrityError, MissingEmbeddingError, ParseError, UndefinedScoreError
from .model import (
    BoundingBox,
    Cluster,
    ClusterSet,
    DictionaryEntry,
    EmbeddingSet,
    FrameGeometry,
    IngestConfig,
    Proposal,
    Shot,
    SpaceTag,
    Tracklet,
    Triplet,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CastError",
    "Cluster",
    "ClusterSet",
    "ConfigError",
    "DictionaryEntry",
    "EmbeddingSet",
    "FrameGeometry",
    "IngestConfig",
    "IntegrityError",
    "MissingEmbeddingError",
    "ParseError",
    "Proposal",
    "Shot",
    "SpaceTag",
    "Tracklet",
    "Triplet",
    "UndefinedScoreError",
]
