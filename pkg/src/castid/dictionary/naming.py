"""Naming session: a user names, discards or skips each dictionary entry.

Answers come from an iterator of command lines (a terminal or a scripted
answers file). Every decision is appended to a journal so an interrupted
session resumes where it stopped.

Commands::

    name <text>    assign a character name
    discard        drop the entry (noisy or non-character cluster)
    skip           leave the entry unnamed
    quit           stop now; the journal keeps what was decided
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

from ..errors import IntegrityError
from ..io import dumps
from ..model import DictionaryEntry

ACTIONS = ("name", "discard", "skip")


@dataclass
class NamingOutcome:
    entries: list[DictionaryEntry]
    merges: list[dict] = field(default_factory=list)
    complete: bool = True
    decided: int = 0

    @property
    def named(self) -> list[DictionaryEntry]:
        return [e for e in self.entries if e.name is not None and not e.discarded]


def parse_command(line: str) -> tuple[str, str | None] | None:
    """``(action, name)`` for a valid command line, ``None`` otherwise."""
    text = line.strip()
    if not text:
        return None
    head, _, rest = text.partition(" ")
    head = head.lower()
    if head == "name":
        name = rest.strip()
        return ("name", name) if name else None
    if head in ("discard", "skip", "quit") and not rest.strip():
        return (head, None)
    return None


def sample_members(members: Sequence[str], k: int) -> list[str]:
    """``k`` evenly spaced members of the sorted member list."""
    ordered = sorted(members)
    if k <= 0 or not ordered:
        return []
    if k >= len(ordered):
        return ordered
    step = len(ordered) / k
    return [ordered[int(i * step)] for i in range(k)]


def read_journal(path, entries: Sequence[DictionaryEntry]) -> list[dict]:
    """Decisions recorded so far; they must follow the entry order exactly."""
    path = Path(path)
    if not path.exists():
        return []
    decisions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise IntegrityError(f"journal line {lineno}: not valid JSON") from None
            k = len(decisions)
            if not isinstance(rec, dict) or k >= len(entries):
                raise IntegrityError(f"journal line {lineno}: unexpected record")
            if rec.get("entry_id") != entries[k].entry_id:
                raise IntegrityError(
                    f"journal line {lineno}: expected entry {entries[k].entry_id}, found {rec.get('entry_id')!r}"
                )
            action, name = rec.get("action"), rec.get("name")
            if action not in ACTIONS or (action == "name") != isinstance(name, str) or (name is not None and not name.strip()):
                raise IntegrityError(f"journal line {lineno}: malformed decision {rec!r}")
            decisions.append({"entry_id": rec["entry_id"], "action": action, "name": name})
    return decisions


def merge_directives(entries: Iterable[DictionaryEntry]) -> list[dict]:
    """One directive per name shared by two or more named entries."""
    by_name: dict[str, list[str]] = {}
    for e in entries:
        if e.name is not None and not e.discarded:
            by_name.setdefault(e.name, []).append(e.entry_id)
    return [{"name": n, "entry_ids": ids} for n, ids in sorted(by_name.items()) if len(ids) > 1]


def apply_decisions(entries: Sequence[DictionaryEntry], decisions: Sequence[dict]) -> list[DictionaryEntry]:
    out = list(entries)
    for k, d in enumerate(decisions):
        if d["action"] == "name":
            out[k] = replace(out[k], name=d["name"], discarded=False)
        elif d["action"] == "discard":
            out[k] = replace(out[k], name=None, discarded=True)
    return out


def naming_session(
    entries: Sequence[DictionaryEntry],
    samples_per_entry: int = 5,
    members: Mapping[str, Sequence[str]] | None = None,
    answers: Iterable[str] | None = None,
    journal=None,
    out: TextIO | None = None,
    crop_dir=None,
) -> NamingOutcome:
    """Run (or resume) a naming session over ``entries``.

    Args:
        entries: dictionary entries in presentation order.
        samples_per_entry: member references shown next to the representative.
        members: cluster_id -> member proposal ids, for the samples.
        answers: command lines; defaults to standard input. Running out of
            answers stops the session, like ``quit``.
        journal: append-only decision log; decisions already in it are replayed.
        out: where prompts go (defaults to stdout).
        crop_dir: when set, sample references are shown as crop image paths.
    """
    out = out or sys.stdout
    members = members or {}
    decisions = read_journal(journal, entries) if journal is not None else []
    lines: Iterator[str] = iter(answers) if answers is not None else iter(sys.stdin.readline, "")
    fh = open(journal, "a", encoding="utf-8") if journal is not None else None
    stopped = False
    try:
        for k in range(len(decisions), len(entries)):
            e = entries[k]
            refs = sample_members(members.get(e.cluster_id, ()), samples_per_entry)
            if crop_dir is not None:
                refs = [str(Path(crop_dir) / f"{r}.png") for r in refs]
            rep = str(Path(crop_dir) / f"{e.representative}.png") if crop_dir is not None else e.representative
            print(f"[{k + 1}/{len(entries)}] entry {e.entry_id} (cluster {e.cluster_id})", file=out)
            print(f"  representative: {rep}", file=out)
            if refs:
                print(f"  samples: {', '.join(refs)}", file=out)
            while True:
                print("  command (name <text> | discard | skip | quit)> ", end="", file=out)
                line = next(lines, None)
                if line is None:
                    stopped = True
                    break
                cmd = parse_command(line)
                if cmd is None:
                    print(f"  invalid command: {line.strip()!r}", file=out)
                    continue
                break
            if stopped or cmd[0] == "quit":
                stopped = True
                break
            decision = {"entry_id": e.entry_id, "action": cmd[0], "name": cmd[1]}
            decisions.append(decision)
            if fh is not None:
                fh.write(dumps(decision) + "\n")
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    named = apply_decisions(entries, decisions)
    return NamingOutcome(named, merge_directives(named), complete=not stopped, decided=len(decisions))
