"""Stage functions and the resumable run-all driver.

A working directory holds the inputs and every stage file under fixed
names (see :data:`FILES`). ``run_all`` executes the eight stages in order
and records a manifest with the config digest, the seed, and the digest of
every input and output. A stage is skipped when its outputs still match
the manifest and its inputs and config are unchanged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import classify
from .cluster import cluster_embeddings
from .config import PipelineConfig, dump_config
from .dictionary import build_dictionary, naming_session
from .errors import CastError, IntegrityError, ParseError
from .io import (
    FORMAT_VERSION,
    _field,
    _read_header,
    load_clusters,
    load_dictionary,
    load_embeddings,
    load_labels,
    load_proposals,
    load_tracklets,
    load_triplets,
    read_frame_geometry,
    save_clusters,
    save_dictionary,
    save_embeddings,
    save_labels,
    save_proposals,
    save_tracklets,
    save_triplets,
    write_records,
)
from .metrics import majority_labels
from .model import IngestConfig
from .selfsup import project, refine, sample_triplets
from .shotseg import save_shots
from .synthgen import SyntheticScene
from .tracker import track

logger = logging.getLogger(__name__)

FILES = {
    "proposals": "proposals.jsonl",
    "embeddings": "embeddings.jsonl",
    "negatives": "negatives.jsonl",
    "truth": "truth.jsonl",
    "answers": "answers.txt",
    "shots": "shots.jsonl",
    "tracklets": "tracklets.jsonl",
    "triplets": "triplets.jsonl",
    "refined": "refined.jsonl",
    "head": "head.jsonl",
    "clusters": "clusters.jsonl",
    "dictionary": "dictionary.jsonl",
    "named": "named.jsonl",
    "journal": "naming_journal.jsonl",
    "model": "model.jsonl",
    "dense_labels": "dense_labels.jsonl",
    "manifest": "manifest.json",
    "config": "config.yaml",
}


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing input: {path}")
    return path


# -- projection head file ------------------------------------------------------


def save_head(path, head: np.ndarray) -> None:
    header = {"kind": "head", "version": FORMAT_VERSION, "rows": int(head.shape[0]), "cols": int(head.shape[1])}
    write_records(path, header, ({"row": k, "values": [float(f"{v:.17g}") for v in r]} for k, r in enumerate(head)))


def load_head(path) -> np.ndarray:
    header, records = _read_header(require(path), "head")
    if header is None:
        raise ParseError("empty head file", line=1)
    rows = [np.asarray(_field(rec, "values", lineno, list), dtype=np.float64) for lineno, rec in records]
    head = np.vstack(rows) if rows else np.zeros((0, 0))
    if head.shape != (header["rows"], header["cols"]):
        raise IntegrityError(f"head file holds shape {head.shape}, header says {(header['rows'], header['cols'])}")
    return head


# -- stages ------------------------------------------------------------------


def _ingest(config: PipelineConfig) -> IngestConfig:
    return config.ingest


def stage_track(config: PipelineConfig, proposals, embeddings, out) -> int:
    props = load_proposals(require(proposals), _ingest(config))
    geometry = read_frame_geometry(proposals)
    if geometry is None:
        raise ParseError("proposals file has no header", line=1)
    emb = load_embeddings(require(embeddings))
    tracklets = track(props, emb, geometry, config.tracker)
    save_tracklets(out, tracklets, config.tracker.skip_window(geometry.sample_fps))
    return len(tracklets)


def stage_triplets(config: PipelineConfig, tracklets, proposals, out) -> int:
    props = load_proposals(require(proposals), _ingest(config))
    trks = load_tracklets(require(tracklets))
    triplets = sample_triplets(trks, props, config.triplets.num_triplets, config.seed)
    save_triplets(out, triplets)
    return len(triplets)


def stage_refine(config: PipelineConfig, embeddings, triplets, out, head_out) -> list[float]:
    emb = load_embeddings(require(embeddings))
    trips = load_triplets(require(triplets))
    rc = dataclasses.replace(config.refine, rng_seed=config.seed)
    result = refine(emb, trips, rc)
    save_embeddings(out, result.embeddings)
    save_head(head_out, result.head)
    return result.loss_curve


def stage_cluster(config: PipelineConfig, embeddings, proposals, out):
    emb = load_embeddings(require(embeddings))
    props = load_proposals(require(proposals), _ingest(config))
    conf = {p.proposal_id: p.confidence for p in props}
    result = cluster_embeddings(emb, conf, config.cluster)
    if result.warning:
        logger.warning("cluster: %s", result.warning)
    save_clusters(out, result.clusters, result.meta())
    return result


def stage_dictionary(config: PipelineConfig, clusters, embeddings, out) -> int:
    cs = load_clusters(require(clusters))
    emb = load_embeddings(require(embeddings))
    entries = build_dictionary(cs, emb)
    save_dictionary(out, entries)
    return len(entries)


def oracle_answers(entries, clusters, truth: Mapping[str, str | None]) -> list[str]:
    """Naming answers a perfect annotator would give: the cluster's majority
    character, or ``discard`` for a non-character cluster."""
    majority = majority_labels(clusters.assignment(), truth)
    out = []
    for e in entries:
        label = majority.get(e.cluster_id)
        out.append(f"name {label}" if label is not None else "discard")
    return out


def stage_name(
    config: PipelineConfig,
    dictionary,
    clusters,
    out,
    journal=None,
    answers=None,
    truth=None,
    stream=None,
    crop_dir=None,
):
    """Run the naming session. ``answers`` is a script file; ``truth`` makes an
    oracle script from ground truth; with neither, answers come from stdin."""
    entries = load_dictionary(require(dictionary))
    cs = load_clusters(require(clusters))
    lines = None
    if answers is not None:
        lines = require(answers).read_text(encoding="utf-8").splitlines()
    elif truth is not None:
        lines = oracle_answers(entries, cs, load_labels(require(truth)))
    members = {c.cluster_id: c.members for c in cs.clusters}
    outcome = naming_session(
        entries,
        config.dictionary.samples_per_entry,
        members,
        answers=lines,
        journal=journal,
        out=stream,
        crop_dir=crop_dir,
    )
    if not outcome.complete:
        raise CastError(f"naming stopped after {outcome.decided} of {len(outcome.entries)} entries; rerun to resume from the journal")
    save_dictionary(out, outcome.entries, outcome.merges)
    return outcome


def stage_train(config: PipelineConfig, named, clusters, refined, negatives, head, out):
    entries = load_dictionary(require(named))
    cs = load_clusters(require(clusters))
    emb = load_embeddings(require(refined))
    neg = load_embeddings(require(negatives))
    W = load_head(head)
    if neg.dimension != W.shape[1]:
        raise IntegrityError(f"negatives have dimension {neg.dimension}, the head expects {W.shape[1]}")
    neg_refined = project(neg, W) if len(neg) else neg
    data = classify.assemble_training_set(entries, cs, emb, neg_refined, config.classify.design)
    model = classify.train(data, config.classify.reject_threshold)
    classify.save_model(out, model)
    return model


def stage_label(config: PipelineConfig, model, proposals, refined, out) -> int:
    m = classify.load_model(require(model))
    props = load_proposals(require(proposals), _ingest(config))
    emb = load_embeddings(require(refined))
    labels = classify.dense_labels(m, props, emb)
    classify.save_dense_labels(out, labels)
    return len(labels)


# -- run-all -----------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    sections: tuple[str, ...]
    run: Callable


def _stages(answers_key: str | None) -> list[Stage]:
    name_inputs = ("dictionary", "clusters") + ((answers_key,) if answers_key else ())
    return [
        Stage("track", ("proposals", "embeddings"), ("tracklets",), ("ingest", "tracker"),
              lambda c, f, o: stage_track(c, f["proposals"], f["embeddings"], f["tracklets"])),
        Stage("sample-triplets", ("tracklets", "proposals"), ("triplets",), ("ingest", "triplets"),
              lambda c, f, o: stage_triplets(c, f["tracklets"], f["proposals"], f["triplets"])),
        Stage("refine", ("embeddings", "triplets"), ("refined", "head"), ("refine",),
              lambda c, f, o: stage_refine(c, f["embeddings"], f["triplets"], f["refined"], f["head"])),
        Stage("cluster", ("refined", "proposals"), ("clusters",), ("ingest", "cluster"),
              lambda c, f, o: stage_cluster(c, f["refined"], f["proposals"], f["clusters"])),
        Stage("dict", ("clusters", "refined"), ("dictionary",), (),
              lambda c, f, o: stage_dictionary(c, f["clusters"], f["refined"], f["dictionary"])),
        Stage("name", name_inputs, ("named",), ("dictionary",),
              lambda c, f, o: stage_name(c, f["dictionary"], f["clusters"], f["named"], journal=o.get("journal"),
                                         answers=f["answers"] if answers_key == "answers" else None,
                                         truth=f["truth"] if answers_key == "truth" else None,
                                         stream=o.get("stream"))),
        Stage("train", ("named", "clusters", "refined", "negatives", "head"), ("model",), ("classify",),
              lambda c, f, o: stage_train(c, f["named"], f["clusters"], f["refined"], f["negatives"], f["head"], f["model"])),
        Stage("label", ("model", "proposals", "refined"), ("dense_labels",), ("ingest", "classify"),
              lambda c, f, o: stage_label(c, f["model"], f["proposals"], f["refined"], f["dense_labels"])),
    ]


STAGE_NAMES = tuple(s.name for s in _stages("answers"))


def read_manifest(workdir) -> dict:
    path = Path(workdir) / FILES["manifest"]
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        raise IntegrityError(f"{path}: manifest is not valid JSON") from None


def write_manifest(workdir, manifest: dict) -> None:
    path = Path(workdir) / FILES["manifest"]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


@dataclass(frozen=True)
class RunReport:
    manifest: dict
    executed: tuple[str, ...]
    skipped: tuple[str, ...]


def run_all(
    workdir,
    config: PipelineConfig,
    answers_from: str | None = None,
    force: bool = False,
    only_through: str | None = None,
) -> RunReport:
    """Run the eight stages in ``workdir``, resuming where outputs are current.

    Args:
        answers_from: ``"answers"`` (script file), ``"truth"`` (oracle naming
            from ground truth) or ``None`` to pick whichever file exists,
            preferring the script.
        force: recompute every stage.
        only_through: stop after this stage.
    """
    workdir = Path(workdir)
    if not workdir.is_dir():
        raise FileNotFoundError(f"missing working directory: {workdir}")
    files = {k: workdir / v for k, v in FILES.items()}
    if answers_from is None:
        answers_from = "answers" if files["answers"].exists() else ("truth" if files["truth"].exists() else None)
    if answers_from is None:
        raise FileNotFoundError(f"missing input: {files['answers']} (or {files['truth']} for oracle naming)")
    previous = read_manifest(workdir)
    prev_stages = {s["name"]: s for s in previous.get("stages", [])}
    stages_out = []
    executed, skipped = [], []
    for stage in _stages(answers_from):
        inputs = {k: digest(require(files[k])) for k in stage.inputs}
        cfg = config.section_digest(*stage.sections)
        prev = prev_stages.get(stage.name)
        current = (
            not force
            and prev is not None
            and prev.get("inputs") == inputs
            and prev.get("config") == cfg
            and all(files[k].exists() and digest(files[k]) == prev["outputs"].get(FILES[k]) for k in stage.outputs)
        )
        if current:
            skipped.append(stage.name)
        else:
            if stage.name == "name" and files["journal"].exists():
                # A finished journal belongs to the previous dictionary.
                if prev is not None and prev.get("inputs") != inputs:
                    files["journal"].unlink()
            logger.info("stage %s", stage.name)
            stage.run(config, files, {"journal": files["journal"], "stream": io.StringIO()})
            executed.append(stage.name)
        outputs = {FILES[k]: digest(files[k]) for k in stage.outputs}
        stages_out.append({"name": stage.name, "inputs": inputs, "config": cfg, "outputs": outputs})
        if only_through == stage.name:
            break
    manifest = {
        "version": FORMAT_VERSION,
        "config_digest": config.digest(),
        "seed": config.seed,
        "naming": answers_from,
        "stages": stages_out,
    }
    write_manifest(workdir, manifest)
    return RunReport(manifest, tuple(executed), tuple(skipped))


# -- synthetic inputs --------------------------------------------------------


def write_synthetic(scene: SyntheticScene, workdir, config: PipelineConfig | None = None) -> dict:
    """Write a scene's inputs (proposals, embeddings, negatives, truth, shots)."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    files = {k: workdir / v for k, v in FILES.items()}
    save_proposals(files["proposals"], scene.proposals, scene.geometry)
    save_embeddings(files["embeddings"], scene.embeddings)
    save_embeddings(files["negatives"], scene.negatives)
    save_labels(files["truth"], scene.labels)
    save_shots(files["shots"], scene.shots)
    if config is not None:
        files["config"].write_text(dump_config(config), encoding="utf-8")
    return {k: str(files[k]) for k in ("proposals", "embeddings", "negatives", "truth", "shots")}
