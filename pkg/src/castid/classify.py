"""Character classifiers over the refined embedding space.

A nearest-centroid classifier with cosine similarity stands in for a
fine-tuned CNN. Two class designs are supported: one class per character
(clusters sharing a name are pooled) and one class per cluster, whose
predictions are consolidated back to character names afterwards. A
background class built from negative (non-character) vectors absorbs
false detections.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import CastError, IntegrityError, ParseError
from .io import _field, _read_header, write_records, FORMAT_VERSION
from .model import ClusterSet, DictionaryEntry, EmbeddingSet, Proposal, canon, canon_array

BACKGROUND = "__background__"
UNKNOWN = "unknown"


class Design(str, Enum):
    PER_CHARACTER = "per_character"
    PER_CLUSTER = "per_cluster"


@dataclass(frozen=True)
class LabeledSet:
    """Training examples: one row of ``vectors`` per entry of ``class_ids``."""

    vectors: np.ndarray
    class_ids: tuple[str, ...]
    name_mapping: dict
    design: Design

    def classes(self) -> list[str]:
        return list(dict.fromkeys(self.class_ids))


@dataclass(frozen=True)
class ClassCentroid:
    class_id: str
    name: str
    centroid: np.ndarray


@dataclass(frozen=True)
class ClassifierModel:
    classes: tuple[ClassCentroid, ...]
    design: Design
    reject_threshold: float = 0.5

    @property
    def name_mapping(self) -> dict:
        return {c.class_id: c.name for c in self.classes}

    @property
    def names(self) -> list[str]:
        return sorted({c.name for c in self.classes if c.class_id != BACKGROUND})

    @property
    def dimension(self) -> int:
        return int(self.classes[0].centroid.shape[0])

    def centroid_matrix(self) -> np.ndarray:
        return np.vstack([c.centroid for c in self.classes])


@dataclass(frozen=True)
class Prediction:
    name: str
    score: float
    class_id: str


def assemble_training_set(
    entries: Iterable[DictionaryEntry],
    clusters: ClusterSet,
    emb: EmbeddingSet,
    negatives,
    design: Design | str = Design.PER_CHARACTER,
) -> LabeledSet:
    """Merge the named clusters into one labeled training set.

    ``negatives`` (an :class:`EmbeddingSet` or an array of rows) becomes the
    background class. Discarded and unnamed entries contribute nothing.
    """
    design = Design(design)
    by_id = clusters.by_id()
    named = [e for e in entries if e.name is not None and not e.discarded]
    if not named:
        raise CastError("no named dictionary entries to train on")
    rows, labels, mapping = [], [], {}
    per_name: Counter = Counter()
    for e in named:
        if e.cluster_id not in by_id:
            raise IntegrityError(f"entry {e.entry_id} refers to unknown cluster {e.cluster_id}")
        if design is Design.PER_CHARACTER:
            cid = e.name
        else:
            per_name[e.name] += 1
            cid = f"{e.name}-{per_name[e.name]}"
        mapping[cid] = e.name
        members = by_id[e.cluster_id].members
        rows.append(emb.rows(members))
        labels.extend([cid] * len(members))
    neg = negatives.matrix if isinstance(negatives, EmbeddingSet) else np.asarray(negatives, dtype=np.float64)
    if neg.size:
        rows.append(neg.reshape(-1, emb.dimension))
        labels.extend([BACKGROUND] * neg.shape[0])
    mapping[BACKGROUND] = BACKGROUND
    return LabeledSet(np.vstack(rows), tuple(labels), mapping, design)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise CastError("zero-norm centroid")
    return v / n


def train(data: LabeledSet, reject_threshold: float = 0.5) -> ClassifierModel:
    """Centroid per class: the L2-normalized mean of its examples."""
    order = list(data.name_mapping)
    if len(order) < 2 or BACKGROUND not in order:
        raise CastError("training needs at least one character class and the background class")
    labels = np.asarray(data.class_ids, dtype=object)
    classes = []
    for cid in order:
        rows = data.vectors[labels == cid]
        if rows.shape[0] == 0:
            raise CastError(f"class {cid!r} has no examples")
        classes.append(ClassCentroid(cid, data.name_mapping[cid], canon_array(_unit(rows.mean(axis=0)))))
    return ClassifierModel(tuple(classes), data.design, float(reject_threshold))


def similarities(model: ClassifierModel, X) -> np.ndarray:
    """Cosine similarity of each row of ``X`` to each class centroid."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dimension:
        raise CastError(f"embedding dimension {X.shape[1]} does not match model dimension {model.dimension}")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (X / norms) @ model.centroid_matrix().T


def predict_many(model: ClassifierModel, X) -> list[Prediction]:
    sims = similarities(model, X)
    out = []
    for row in sims:
        k = int(np.argmax(row))
        c = model.classes[k]
        score = canon(row[k])
        if c.class_id == BACKGROUND or score < model.reject_threshold:
            out.append(Prediction(UNKNOWN, score, c.class_id))
        else:
            out.append(Prediction(c.name, score, c.class_id))
    return out


def predict(model: ClassifierModel, x) -> Prediction:
    """Nearest centroid by cosine; background or a weak match gives ``"unknown"``."""
    return predict_many(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


@dataclass(frozen=True)
class Evaluation:
    labels: tuple[str, ...]
    precision: float
    recall: float
    accuracy: float
    f1: float
    confusion: np.ndarray
    support: dict
    per_class: dict

    @property
    def normalized_confusion(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True).astype(np.float64)
        rows[rows == 0] = 1.0
        return self.confusion / rows

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "support": dict(self.support),
            "labels": list(self.labels),
            "confusion": self.confusion.tolist(),
            "confusion_normalized": [[canon(v) for v in r] for r in self.normalized_confusion],
        }


def score_predictions(truth: Sequence[str], predicted: Sequence[str]) -> Evaluation:
    """Macro precision/recall/F1 over the truth classes, plus the confusion matrix.

    A class never predicted has precision 0; rows of the confusion matrix are
    truth, columns are predictions, over the union of both label sets.
    """
    if len(truth) == 0:
        raise CastError("empty test set")
    if len(truth) != len(predicted):
        raise CastError("truth and predictions differ in length")
    labels = tuple(sorted(set(truth) | set(predicted)))
    index = {lab: k for k, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[index[t], index[p]] += 1
    support = Counter(truth)
    per_class = {}
    for lab in sorted(support):
        k = index[lab]
        tp = cm[k, k]
        pred_total = cm[:, k].sum()
        prec = tp / pred_total if pred_total else 0.0
        rec = tp / support[lab]
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[lab] = {"precision": float(prec), "recall": float(rec), "f1": float(f1), "support": support[lab]}
    return Evaluation(
        labels=labels,
        precision=float(np.mean([v["precision"] for v in per_class.values()])),
        recall=float(np.mean([v["recall"] for v in per_class.values()])),
        accuracy=float(np.trace(cm) / cm.sum()),
        f1=float(np.mean([v["f1"] for v in per_class.values()])),
        confusion=cm,
        support=dict(sorted(support.items())),
        per_class=per_class,
    )


def evaluate(model: ClassifierModel, X, truth: Sequence[str]) -> Evaluation:
    """Score ``model`` on test rows ``X`` whose true names are ``truth``
    (character names or ``"unknown"``)."""
    if len(truth) == 0:
        raise CastError("empty test set")
    preds = [p.name for p in predict_many(model, X)]
    return score_predictions(list(truth), preds)


@dataclass(frozen=True)
class DesignComparison:
    characters: tuple[str, ...]
    f1_per_character: tuple[float, ...]
    f1_per_cluster: tuple[float, ...]
    mean_difference: float
    t_statistic: float | None  # None when undefined (fewer than 2 pairs or constant differences)
    p_value: float | None

    def as_dict(self) -> dict:
        return {
            "characters": list(self.characters),
            "f1_per_character": list(self.f1_per_character),
            "f1_per_cluster": list(self.f1_per_cluster),
            "mean_difference": self.mean_difference,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
        }


def compare_designs(a: Evaluation, b: Evaluation) -> DesignComparison:
    """Two-tailed paired t-test on per-character F1 (``a`` per-character design,
    ``b`` per-cluster design, evaluated on the same test set)."""
    chars = tuple(k for k in a.per_class if k != UNKNOWN and k in b.per_class)
    fa = np.array([a.per_class[k]["f1"] for k in chars])
    fb = np.array([b.per_class[k]["f1"] for k in chars])
    diff = fb - fa
    t = p = None
    if len(chars) >= 2 and np.ptp(diff) > 0:
        res = stats.ttest_rel(fb, fa)
        t, p = float(res.statistic), float(res.pvalue)
    return DesignComparison(
        chars,
        tuple(float(v) for v in fa),
        tuple(float(v) for v in fb),
        float(diff.mean()) if len(diff) else 0.0,
        t,
        p,
    )


# -- dense labeling and screen time -----------------------------------------


def dense_labels(model: ClassifierModel, proposals: Sequence[Proposal], emb: EmbeddingSet) -> list[dict]:
    """Per sampled frame, a name and score for every proposal, in frame order."""
    if not proposals:
        return []
    preds = predict_many(model, emb.rows([p.proposal_id for p in proposals]))
    frames: dict[tuple[str, str, int], list[dict]] = {}
    for p, pr in zip(proposals, preds):
        frames.setdefault((p.video_id, p.shot_id, p.frame_index), []).append(
            {
                "proposal_id": p.proposal_id,
                "x": p.box.x,
                "y": p.box.y,
                "w": p.box.w,
                "h": p.box.h,
                "name": pr.name,
                "score": pr.score,
            }
        )
    out = []
    for (video, shot, frame) in sorted(frames, key=lambda k: (k[0], k[2], k[1])):
        dets = sorted(frames[(video, shot, frame)], key=lambda d: d["proposal_id"])
        out.append({"video_id": video, "shot_id": shot, "frame_index": frame, "detections": dets})
    return out


@dataclass(frozen=True)
class ScreenTime:
    frames: int
    per_name: dict
    per_group: dict

    def table(self) -> list[dict]:
        rows = [{"kind": "name", "key": k, "fraction": v} for k, v in self.per_name.items()]
        rows += [{"kind": "group", "key": k, "fraction": v} for k, v in self.per_group.items()]
        return rows


def screen_time(frames: Sequence[Iterable[str]], grouping: Mapping[str, str] | None = None) -> ScreenTime:
    """Screen-time fractions from per-frame name sets.

    Per name: frames showing it over all frames. Per group: the group's
    character-frame occurrences over all character-frame occurrences.
    ``"unknown"`` is not a character.
    """
    grouping = grouping or {}
    shown: Counter = Counter()
    for names in frames:
        shown.update({n for n in names if n != UNKNOWN})
    total = len(frames)
    per_name = {n: canon(c / total) for n, c in sorted(shown.items())} if total else {}
    occurrences = sum(shown.values())
    groups: Counter = Counter()
    for n, c in shown.items():
        if n in grouping:
            groups[grouping[n]] += c
    per_group = {g: canon(c / occurrences) for g, c in sorted(groups.items())} if occurrences else {}
    return ScreenTime(total, per_name, per_group)


def frame_name_sets(labels: Sequence[dict]) -> list[set[str]]:
    return [{d["name"] for d in f["detections"]} for f in labels]


# -- files ------------------------------------------------------------------


def save_model(path, model: ClassifierModel) -> None:
    header = {
        "kind": "classifier",
        "version": FORMAT_VERSION,
        "design": model.design.value,
        "reject_threshold": canon(model.reject_threshold),
        "dimension": model.dimension,
    }
    recs = ({"class_id": c.class_id, "name": c.name, "centroid": [float(v) for v in c.centroid]} for c in model.classes)
    write_records(path, header, recs)


def load_model(path) -> ClassifierModel:
    header, records = _read_header(path, "classifier")
    if header is None:
        raise ParseError("empty classifier file", line=1)
    dim = header.get("dimension")
    classes = []
    for lineno, rec in records:
        vec = np.asarray(_field(rec, "centroid", lineno, list), dtype=np.float64)
        if vec.shape != (dim,):
            raise IntegrityError(f"line {lineno}: centroid length {vec.shape[0]} != {dim}")
        classes.append(ClassCentroid(_field(rec, "class_id", lineno, str), _field(rec, "name", lineno, str), canon_array(vec)))
    if not classes:
        raise IntegrityError("classifier file has no classes")
    return ClassifierModel(tuple(classes), Design(header["design"]), float(header["reject_threshold"]))


def save_dense_labels(path, labels: Sequence[dict]) -> None:
    write_records(path, {"kind": "dense_labels", "version": FORMAT_VERSION}, labels)


def load_dense_labels(path) -> list[dict]:
    header, records = _read_header(path, "dense_labels")
    if header is None:
        return []
    return [rec for _, rec in records]
