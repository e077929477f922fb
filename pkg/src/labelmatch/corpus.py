"""Tokenization, the document/label data model, and corpus loading."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

# \w minus underscore: Unicode letters and digits only.
_SPLIT = re.compile(r"[\W_]+", re.UNICODE)

SPLITS = ("train", "dev", "test")


class CorpusError(ValueError):
    """Raised when a dataset or label vocabulary file cannot be ingested."""


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters.

    >>> tokenize("clip the aneurysm.")
    ['clip', 'the', 'aneurysm']
    """
    return [piece for piece in _SPLIT.split(text.lower()) if piece]


@dataclass(frozen=True)
class Label:
    id: str
    name_tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.name_tokens:
            raise CorpusError(f"label {self.id!r} has an empty name")

    def __len__(self) -> int:
        return len(self.name_tokens)


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple[str, ...]
    gold_labels: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Dataset:
    documents: tuple[Document, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id {doc.id!r} in {self.split} split")
            seen.add(doc.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def label_frequencies(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for doc in self.documents:
            for label_id in doc.gold_labels:
                counts[label_id] = counts.get(label_id, 0) + 1
        return counts


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered label collection; the order fixes baseline weight rows."""

    labels: tuple[Label, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, int] = {}
        for i, label in enumerate(self.labels):
            if label.id in index:
                raise CorpusError(f"duplicate label id {label.id!r}")
            index[label.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[Label]:
        return iter(self.labels)

    def __contains__(self, label_id: str) -> bool:
        return label_id in self._index

    def __getitem__(self, label_id: str) -> Label:
        return self.labels[self._index[label_id]]

    def position(self, label_id: str) -> int:
        return self._index[label_id]

    @property
    def ids(self) -> list[str]:
        return [label.id for label in self.labels]

    def name_tokens(self) -> set[str]:
        return {tok for label in self.labels for tok in label.name_tokens}


def _read_lines(path: Path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\r\n")


def parse_label_line(line: str, lineno: int = 0) -> Label | None:
    if not line.strip() or line.lstrip().startswith("#"):
        return None
    if "\t" not in line:
        raise CorpusError(f"line {lineno}: expected 'id<TAB>name'")
    label_id, name = line.split("\t", 1)
    label_id = label_id.strip()
    if not label_id:
        raise CorpusError(f"line {lineno}: empty label id")
    if any(ch.isspace() for ch in label_id):
        # ids key rows of the space-separated baseline weight file
        raise CorpusError(f"line {lineno}: label id {label_id!r} contains whitespace")
    tokens = tokenize(name)
    if not tokens:
        raise CorpusError(f"line {lineno}: label {label_id!r} has an empty name after tokenization")
    return Label(label_id, tuple(tokens))


def load_label_vocabulary(path: str | Path) -> LabelVocabulary:
    """Read a ``id<TAB>name`` file, preserving line order.

    Raises:
        CorpusError: on duplicate ids, missing tabs, or names that tokenize to nothing.
    """
    labels: list[Label] = []
    seen: set[str] = set()
    for lineno, line in _read_lines(Path(path)):
        label = parse_label_line(line, lineno)
        if label is None:
            continue
        if label.id in seen:
            raise CorpusError(f"line {lineno}: duplicate label id {label.id!r}")
        seen.add(label.id)
        labels.append(label)
    return LabelVocabulary(tuple(labels))


def save_label_vocabulary(vocab: LabelVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label in vocab:
            fh.write(f"{label.id}\t{' '.join(label.name_tokens)}\n")


def parse_record(line: str, lineno: int, vocab: LabelVocabulary | None) -> Document:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {lineno}: malformed record ({exc.msg})") from None
    if not isinstance(record, dict):
        raise CorpusError(f"line {lineno}: record must be an object")
    doc_id, text, labels = record.get("id"), record.get("text"), record.get("labels", [])
    if not isinstance(doc_id, str):
        raise CorpusError(f"line {lineno}: 'id' must be a string")
    if not isinstance(text, str):
        raise CorpusError(f"line {lineno}: 'text' must be a string")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise CorpusError(f"line {lineno}: 'labels' must be an array of strings")
    if vocab is not None:
        for label_id in labels:
            if label_id not in vocab:
                raise CorpusError(f"line {lineno}: unknown label id {label_id!r}")
    return Document(doc_id, tuple(tokenize(text)), frozenset(labels))


def load_dataset(path: str | Path, vocab: LabelVocabulary | None, split: str = "train") -> Dataset:
    """Load a line-delimited JSON dataset, validating gold labels against ``vocab``."""
    docs = []
    for lineno, line in _read_lines(Path(path)):
        if not line.strip():
            continue
        docs.append(parse_record(line, lineno, vocab))
    try:
        return Dataset(tuple(docs), split)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from None


def document_record(doc: Document) -> dict:
    return {"id": doc.id, "text": " ".join(doc.tokens), "labels": sorted(doc.gold_labels)}


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in dataset:
            fh.write(json.dumps(document_record(doc), ensure_ascii=False) + "\n")
