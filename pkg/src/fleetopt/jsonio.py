"""Canonical JSON, atomic file writes and trial-log (JSONL) persistence."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

from .core import HyperparameterSpace
from .mmo import TrialRecord


def canonical_json(obj) -> str:
    """Key-sorted, compact JSON; NaN and infinities are rejected."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def trial_line(record: TrialRecord, space: HyperparameterSpace, with_timing: bool = False) -> str:
    return canonical_json(record.to_json(space, with_timing)) + "\n"


class TrialLogWriter:
    """Appends one canonical JSON line per trial and flushes it immediately.

    Wall-clock timings are left out unless ``with_timing`` is set, so two
    runs with the same seeds produce byte-identical logs.
    """

    def __init__(self, path, spaces: Mapping[str, HyperparameterSpace], append: bool = False, with_timing=False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.spaces = spaces
        self.with_timing = with_timing
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8")

    def __call__(self, record: TrialRecord) -> None:
        self._fh.write(trial_line(record, self.spaces[record.technique_id], self.with_timing))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trial_log(path, records: Iterable[TrialRecord], spaces: Mapping[str, HyperparameterSpace]) -> None:
    atomic_write_text(path, "".join(trial_line(r, spaces[r.technique_id]) for r in records))


def read_trial_log(path, spaces: Mapping[str, HyperparameterSpace], tolerate_partial_tail: bool = True):
    """Parse a trial log.

    A final line without its newline (an interrupted write) is dropped when
    ``tolerate_partial_tail`` is set. Records of one technique must have
    strictly increasing ``t``.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    tail = lines.pop()
    if tail and not tolerate_partial_tail:
        raise ValueError(f"{path}: last line is not newline-terminated")
    records = []
    last_t: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
        tid = obj.get("technique_id")
        if tid not in spaces:
            raise ValueError(f"{path}:{lineno}: unknown technique {tid!r}")
        rec = TrialRecord.from_json(obj, spaces[tid])
        if rec.t <= last_t.get(tid, 0):
            raise ValueError(f"{path}:{lineno}: t={rec.t} does not increase for {tid}")
        last_t[tid] = rec.t
        records.append(rec)
    return records
