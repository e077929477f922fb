"""Word embedding table: loading, saving, random init, and token similarity."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

DEFAULT_DIM = 100


class EmbeddingError(ValueError):
    pass


class OovPolicy(str, enum.Enum):
    """How similarity is scored when a token has no embedding.

    ``binary`` falls back to exact surface matching (1 if equal, else 0);
    ``zero`` treats every out-of-vocabulary pair as unrelated.
    """

    BINARY = "binary"
    ZERO = "zero"


@dataclass
class EmbeddingTable:
    """Token -> row map over a float64 matrix. Mutated in place by the optimizer."""

    index: dict[str, int]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise EmbeddingError(f"embedding matrix must be 2-D with dim >= 1, got {self.matrix.shape}")
        if len(self.index) != self.matrix.shape[0]:
            raise EmbeddingError("index size does not match matrix rows")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def tokens(self) -> list[str]:
        out = [""] * len(self.index)
        for tok, row in self.index.items():
            out[row] = tok
        return out

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.index[token]]

    def rows(self, tokens: Iterable[str]) -> np.ndarray:
        """Row index per token, -1 where the token is out of vocabulary."""
        get = self.index.get
        return np.fromiter((get(t, -1) for t in tokens), dtype=np.int64)

    def copy(self) -> EmbeddingTable:
        return EmbeddingTable(dict(self.index), self.matrix.copy())

    @classmethod
    def empty(cls, dim: int) -> EmbeddingTable:
        return cls({}, np.zeros((0, dim)))


def load_embeddings(path: str | Path, return_duplicates: bool = False):
    """Parse the plain-text vector format (``<count> <dim>`` header, one token per line).

    Duplicate tokens keep their last occurrence. With ``return_duplicates`` the
    number of overwritten rows is returned alongside the table.
    """
    index: dict[str, int] = {}
    vectors: list[list[float]] = []
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError("line 1: expected '<count> <dim>' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError("line 1: header values must be integers") from None
        if dim < 1 or count < 0:
            raise EmbeddingError(f"line 1: invalid header {count} {dim}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\r\n").split(" ")
            if parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError:
                raise EmbeddingError(f"line {lineno}: unparseable value") from None
            if not all(math.isfinite(v) for v in values):
                raise EmbeddingError(f"line {lineno}: non-finite value")
            token = parts[0]
            if token in index:
                duplicates += 1
                vectors[index[token]] = values
            else:
                index[token] = len(vectors)
                vectors.append(values)
    matrix = np.array(vectors, dtype=np.float64).reshape(len(vectors), dim)
    table = EmbeddingTable(index, matrix)
    return (table, duplicates) if return_duplicates else table


def format_row(key: str, values: Iterable[float]) -> str:
    return key + " " + " ".join(f"{v:.9g}" for v in values)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write ``table`` in the text vector format, 9 significant digits per value."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for token, row in zip(table.tokens, table.matrix):
            fh.write(format_row(token, row) + "\n")


def random_init(tokens: Iterable[str], dim: int = DEFAULT_DIM, seed: int = 0) -> EmbeddingTable:
    """Uniform init in [-0.5/dim, 0.5/dim], deterministic in (token set, dim, seed).

    Tokens are sorted first, so insertion order of ``tokens`` does not matter.
    """
    if dim < 1:
        raise EmbeddingError("dim must be >= 1")
    ordered = sorted(set(tokens))
    rng = np.random.default_rng(seed)
    bound = 0.5 / dim
    matrix = rng.uniform(-bound, bound, size=(len(ordered), dim))
    return EmbeddingTable({tok: i for i, tok in enumerate(ordered)}, matrix)


def extend(table: EmbeddingTable, tokens: Iterable[str], seed: int = 0) -> EmbeddingTable:
    """Return a copy of ``table`` with random rows appended for unseen ``tokens``."""
    missing = sorted(set(tokens) - table.index.keys())
    if not missing:
        return table.copy()
    extra = random_init(missing, table.dim, seed)
    index = dict(table.index)
    for tok in missing:
        index[tok] = len(index)
    return EmbeddingTable(index, np.vstack([table.matrix, extra.matrix]))


def cosine(a, b) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    value = float(np.dot(a / na, b / nb))
    return min(1.0, max(-1.0, value))


def token_similarity(lt: str, dt: str, table: EmbeddingTable, policy: OovPolicy = OovPolicy.BINARY) -> float:
    if lt in table and dt in table:
        if lt == dt and np.any(table.vector(lt)):
            return 1.0
        return cosine(table.vector(lt), table.vector(dt))
    if OovPolicy(policy) is OovPolicy.BINARY:
        return 1.0 if lt == dt else 0.0
    return 0.0


def unit_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize ``matrix``; zero rows stay zero. Returns (units, norms)."""
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return matrix / safe[:, None], norms
