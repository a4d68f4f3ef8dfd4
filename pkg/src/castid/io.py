"""Line-delimited JSON readers/writers for every stage file.

Every file is UTF-8 text, one JSON object per line, keys sorted, reals
written with at most 9 significant digits. The first line is a header.
Stage files carry ``{"kind": ..., "version": 1}`` in their header; the
proposals and embeddings files use the headers fixed by their external
interface.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import IntegrityError, ParseError
from .model import (
    BoundingBox,
    Cluster,
    ClusterSet,
    DictionaryEntry,
    EmbeddingSet,
    FrameGeometry,
    IngestConfig,
    Proposal,
    Triplet,
    Tracklet,
    canon,
)

FORMAT_VERSION = 1


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_records(path, header: dict, records) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(header) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")
    os.replace(tmp, path)


def iter_records(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for every non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", line=lineno)
            yield lineno, rec


def _field(rec: dict, key: str, lineno: int, kind=None):
    if key not in rec:
        raise ParseError(f"missing field {key!r}", line=lineno)
    value = rec[key]
    if kind is not None:
        ok = isinstance(value, kind) and not isinstance(value, bool)
        if not ok:
            raise ParseError(f"field {key!r} has wrong type {type(value).__name__}", line=lineno)
    return value


_NUM = (int, float)


def _read_header(path, kind: str | None) -> tuple[dict | None, Iterator[tuple[int, dict]]]:
    it = iter_records(path)
    first = next(it, None)
    if first is None:
        return None, iter(())
    lineno, header = first
    if kind is not None and header.get("kind") != kind:
        raise ParseError(f"expected a {kind!r} file, header kind is {header.get('kind')!r}", line=lineno)
    if kind is not None and header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported version {header.get('version')!r}", line=lineno)
    return header, it


def _integrity(lineno: int, exc: IntegrityError) -> IntegrityError:
    return IntegrityError(f"line {lineno}: {exc}")


# -- proposals ---------------------------------------------------------------


def save_proposals(path, proposals: Sequence[Proposal], geometry: FrameGeometry) -> None:
    header = {
        "frame_width": geometry.width,
        "frame_height": geometry.height,
        "sample_fps": geometry.sample_fps,
    }
    records = (
        {
            "proposal_id": p.proposal_id,
            "video_id": p.video_id,
            "shot_id": p.shot_id,
            "frame_index": p.frame_index,
            "x": p.box.x,
            "y": p.box.y,
            "w": p.box.w,
            "h": p.box.h,
            "confidence": p.confidence,
        }
        for p in proposals
    )
    write_records(path, header, records)


def _geometry_from_header(header: dict, lineno: int = 1) -> FrameGeometry:
    try:
        return FrameGeometry(
            _field(header, "frame_width", lineno, _NUM),
            _field(header, "frame_height", lineno, _NUM),
            _field(header, "sample_fps", lineno, _NUM),
        )
    except IntegrityError as exc:
        raise _integrity(lineno, exc) from None


def read_frame_geometry(path) -> FrameGeometry | None:
    header, _ = _read_header(path, None)
    return None if header is None else _geometry_from_header(header)


def load_proposals(path, config: IngestConfig | None = None) -> list[Proposal]:
    """Read a proposals file, clamp boxes to the frame, and screen them.

    A proposal survives when ``confidence >= min_confidence`` and its clamped
    area is at least ``min_area_fraction`` of the frame. Input order is kept.
    Duplicate ids raise :class:`IntegrityError` even when one copy would be
    screened out.
    """
    config = config or IngestConfig()
    header, records = _read_header(path, None)
    if header is None:
        return []
    geom = _geometry_from_header(header)
    min_area = config.min_area_fraction * geom.area
    seen: set[str] = set()
    out: list[Proposal] = []
    for lineno, rec in records:
        pid = _field(rec, "proposal_id", lineno, str)
        if pid in seen:
            raise IntegrityError(f"line {lineno}: duplicate proposal_id {pid!r}")
        seen.add(pid)
        try:
            box = BoundingBox(
                _field(rec, "x", lineno, _NUM),
                _field(rec, "y", lineno, _NUM),
                _field(rec, "w", lineno, _NUM),
                _field(rec, "h", lineno, _NUM),
            ).clamp(geom.width, geom.height)
            prop = Proposal(
                proposal_id=pid,
                video_id=_field(rec, "video_id", lineno, str),
                frame_index=_field(rec, "frame_index", lineno, int),
                shot_id=_field(rec, "shot_id", lineno, str),
                box=box,
                confidence=_field(rec, "confidence", lineno, _NUM),
            )
        except IntegrityError as exc:
            raise _integrity(lineno, exc) from None
        if prop.confidence >= config.min_confidence and box.area >= min_area:
            out.append(prop)
    return out


# -- embeddings --------------------------------------------------------------


def save_embeddings(path, emb: EmbeddingSet) -> None:
    header = {"dimension": emb.dimension, "space_tag": emb.space_tag.value}
    records = (
        {"proposal_id": pid, "vector": [float(v) for v in emb.matrix[k]]}
        for k, pid in enumerate(emb.ids)
    )
    write_records(path, header, records)


def load_embeddings(path) -> EmbeddingSet:
    header, records = _read_header(path, None)
    if header is None:
        raise ParseError("embeddings file is empty (header required)", line=1)
    dim = _field(header, "dimension", 1, int)
    tag = _field(header, "space_tag", 1, str)
    if dim <= 0:
        raise IntegrityError("line 1: dimension must be > 0")
    ids, rows = [], []
    for lineno, rec in records:
        ids.append(_field(rec, "proposal_id", lineno, str))
        vec = _field(rec, "vector", lineno, list)
        if len(vec) != dim:
            raise IntegrityError(f"line {lineno}: vector length {len(vec)} != dimension {dim}")
        if not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in vec):
            raise ParseError("vector holds non-numeric components", line=lineno)
        rows.append(vec)
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    try:
        return EmbeddingSet(ids, matrix, tag)
    except ValueError as exc:
        raise IntegrityError(str(exc)) from None


# -- tracklets ---------------------------------------------------------------


def save_tracklets(path, tracklets: Sequence[Tracklet], skip_window: int | None = None) -> None:
    header = {"kind": "tracklets", "version": FORMAT_VERSION, "skip_window": skip_window}
    records = (
        {
            "tracklet_id": t.tracklet_id,
            "shot_id": t.shot_id,
            "proposal_ids": list(t.proposal_ids),
            "frame_indices": list(t.frame_indices),
            "significance": t.significance,
        }
        for t in tracklets
    )
    write_records(path, header, records)


def load_tracklets(path) -> list[Tracklet]:
    header, records = _read_header(path, "tracklets")
    if header is None:
        return []
    window = header.get("skip_window")
    out, ids, members = [], set(), set()
    for lineno, rec in records:
        try:
            t = Tracklet(
                _field(rec, "tracklet_id", lineno, str),
                _field(rec, "shot_id", lineno, str),
                tuple(_field(rec, "proposal_ids", lineno, list)),
                tuple(_field(rec, "frame_indices", lineno, list)),
                _field(rec, "significance", lineno, _NUM),
            )
        except IntegrityError as exc:
            raise _integrity(lineno, exc) from None
        if t.tracklet_id in ids:
            raise IntegrityError(f"line {lineno}: duplicate tracklet_id {t.tracklet_id}")
        if window is not None and t.max_gap() > window:
            raise IntegrityError(
                f"line {lineno}: tracklet {t.tracklet_id} links frames {t.max_gap()} apart "
                f"(skip window {window})"
            )
        if members.intersection(t.proposal_ids):
            raise IntegrityError(f"line {lineno}: proposal shared between tracklets")
        ids.add(t.tracklet_id)
        members.update(t.proposal_ids)
        out.append(t)
    return out


# -- triplets ----------------------------------------------------------------


def save_triplets(path, triplets: Sequence[Triplet]) -> None:
    header = {"kind": "triplets", "version": FORMAT_VERSION}
    records = ({"anchor": t.anchor, "positive": t.positive, "negative": t.negative} for t in triplets)
    write_records(path, header, records)


def load_triplets(path) -> list[Triplet]:
    header, records = _read_header(path, "triplets")
    if header is None:
        return []
    out = []
    for lineno, rec in records:
        try:
            out.append(
                Triplet(
                    _field(rec, "anchor", lineno, str),
                    _field(rec, "positive", lineno, str),
                    _field(rec, "negative", lineno, str),
                )
            )
        except IntegrityError as exc:
            raise _integrity(lineno, exc) from None
    return out


# -- clusters ----------------------------------------------------------------


def save_clusters(path, clusters: ClusterSet, meta: dict | None = None) -> None:
    header = {"kind": "clusters", "version": FORMAT_VERSION, "noise": list(clusters.noise)}
    if meta:
        header["meta"] = meta
    records = (
        {
            "cluster_id": c.cluster_id,
            "members": list(c.members),
            "medoid": c.medoid,
            "scores": list(c.scores),
        }
        for c in clusters.clusters
    )
    write_records(path, header, records)


def load_clusters(path) -> ClusterSet:
    header, records = _read_header(path, "clusters")
    if header is None:
        return ClusterSet()
    noise = _field(header, "noise", 1, list)
    clusters = []
    for lineno, rec in records:
        try:
            clusters.append(
                Cluster(
                    _field(rec, "cluster_id", lineno, str),
                    tuple(_field(rec, "members", lineno, list)),
                    _field(rec, "medoid", lineno, str),
                    tuple(_field(rec, "scores", lineno, list)),
                )
            )
        except IntegrityError as exc:
            raise _integrity(lineno, exc) from None
    return ClusterSet(tuple(clusters), tuple(noise))


def read_clusters_meta(path) -> dict:
    header, _ = _read_header(path, "clusters")
    return {} if header is None else dict(header.get("meta") or {})


# -- dictionary --------------------------------------------------------------


def save_dictionary(path, entries: Sequence[DictionaryEntry], merges: Sequence[dict] = ()) -> None:
    header = {"kind": "dictionary", "version": FORMAT_VERSION, "merges": list(merges)}
    records = (
        {
            "entry_id": e.entry_id,
            "cluster_id": e.cluster_id,
            "representative": e.representative,
            "name": e.name,
            "discarded": e.discarded,
        }
        for e in entries
    )
    write_records(path, header, records)


def load_dictionary(path, with_merges: bool = False):
    header, records = _read_header(path, "dictionary")
    if header is None:
        return ([], []) if with_merges else []
    out, ids = [], set()
    for lineno, rec in records:
        name = rec.get("name")
        if name is not None and not isinstance(name, str):
            raise ParseError("field 'name' must be text or null", line=lineno)
        try:
            e = DictionaryEntry(
                _field(rec, "entry_id", lineno, str),
                _field(rec, "cluster_id", lineno, str),
                _field(rec, "representative", lineno, str),
                name,
                bool(rec.get("discarded", False)),
            )
        except IntegrityError as exc:
            raise _integrity(lineno, exc) from None
        if e.entry_id in ids:
            raise IntegrityError(f"line {lineno}: duplicate entry_id {e.entry_id}")
        ids.add(e.entry_id)
        out.append(e)
    if with_merges:
        return out, list(header.get("merges") or [])
    return out


# -- ground-truth labels -----------------------------------------------------


def save_labels(path, labels: dict[str, str | None]) -> None:
    """Ground truth: proposal_id -> character name, or None for non-characters."""
    header = {"kind": "labels", "version": FORMAT_VERSION}
    write_records(path, header, ({"proposal_id": k, "label": v} for k, v in labels.items()))


def load_labels(path) -> dict[str, str | None]:
    header, records = _read_header(path, "labels")
    out: dict[str, str | None] = {}
    if header is None:
        return out
    for lineno, rec in records:
        pid = _field(rec, "proposal_id", lineno, str)
        label = rec.get("label")
        if label is not None and not isinstance(label, str):
            raise ParseError("label must be text or null", line=lineno)
        if pid in out:
            raise IntegrityError(f"line {lineno}: duplicate proposal_id {pid}")
        out[pid] = label
    return out


# -- generic dispatch --------------------------------------------------------

_SAVERS = {
    "tracklets": save_tracklets,
    "triplets": save_triplets,
    "clusters": save_clusters,
    "dictionary": save_dictionary,
}
_LOADERS = {
    "tracklets": load_tracklets,
    "triplets": load_triplets,
    "clusters": load_clusters,
    "dictionary": load_dictionary,
    "labels": load_labels,
}


def _stage_kind(obj) -> str:
    if isinstance(obj, ClusterSet):
        return "clusters"
    if isinstance(obj, (list, tuple)):
        if not obj:
            raise IntegrityError("cannot infer the stage kind of an empty sequence; use the typed saver")
        first = obj[0]
        for kind, cls in (("tracklets", Tracklet), ("triplets", Triplet), ("dictionary", DictionaryEntry)):
            if isinstance(first, cls):
                if not all(isinstance(o, cls) for o in obj):
                    raise IntegrityError(f"mixed object types in a {kind} sequence")
                return kind
    raise IntegrityError(f"not a stage object: {type(obj).__name__}")


def save_stage(path, obj) -> None:
    """Write any stage object (tracklets, triplets, clusters, dictionary)."""
    _SAVERS[_stage_kind(obj)](path, obj)


def load_stage(path):
    """Read a stage file, dispatching on the header's ``kind``."""
    header, _ = _read_header(path, None)
    if header is None:
        raise ParseError("empty stage file", line=1)
    kind = header.get("kind")
    if kind not in _LOADERS:
        raise ParseError(f"unknown stage kind {kind!r}", line=1)
    return _LOADERS[kind](path)


__all__ = [
    "canon",
    "dumps",
    "iter_records",
    "load_clusters",
    "load_dictionary",
    "load_embeddings",
    "load_labels",
    "load_proposals",
    "load_stage",
    "load_tracklets",
    "load_triplets",
    "read_frame_geometry",
    "save_clusters",
    "save_dictionary",
    "save_embeddings",
    "save_labels",
    "save_proposals",
    "save_stage",
    "save_tracklets",
    "save_triplets",
    "write_records",
]
