"""JSON-Lines streams, annotation files, snapshots and manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

from .core import LabeledExample
from .curation import AnnotationCorpus


class StreamFormatError(ValueError):
    pass


def example_record(ex: LabeledExample) -> dict:
    rec = {"id": ex.id, "features": [float(v) for v in ex.features], "labels": list(ex.labels)}
    if ex.task is not None:
        rec["task"] = ex.task
    return rec


def write_stream(path: str | Path, examples: Iterable[LabeledExample]) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(example_record(ex)) + "\n")


def read_stream(path: str | Path) -> list[LabeledExample]:
    """Load and validate a stream: unique ids, non-empty labels, one feature dimension."""
    out: list[LabeledExample] = []
    seen: set[int] = set()
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ex = LabeledExample(int(rec["id"]), rec["features"], tuple(rec["labels"]), rec.get("task"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise StreamFormatError(f"{path}:{lineno}: {err}") from None
            if not ex.labels:
                raise StreamFormatError(f"{path}:{lineno}: example {ex.id} has no labels")
            if ex.id in seen:
                raise StreamFormatError(f"{path}:{lineno}: duplicate id {ex.id}")
            if dim is None:
                dim = ex.features.size
            elif ex.features.size != dim:
                raise StreamFormatError(f"{path}:{lineno}: feature dimension {ex.features.size} != {dim}")
            seen.add(ex.id)
            out.append(ex)
    if not out:
        raise StreamFormatError(f"{path}: empty stream")
    return out


def read_annotations(path: str | Path) -> AnnotationCorpus:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append({"id": str(rec["id"]), "labels": [str(c) for c in rec["labels"]]})
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise StreamFormatError(f"{path}:{lineno}: {err}") from None
    return AnnotationCorpus.from_records(records)


def write_annotations(path: str | Path, corpus: AnnotationCorpus) -> None:
    order = {c: i for i, c in enumerate(corpus.class_vocab)}
    with open(path, "w") as fh:
        for image_id, labels in corpus.images:
            fh.write(json.dumps({"id": image_id, "labels": sorted(labels, key=order.__getitem__)}) + "\n")


def write_json(path: str | Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text(path: str | Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)

