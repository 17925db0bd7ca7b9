"""Unit-norm class embeddings: one-hot, or rows realizing a similarity matrix.

Semantic embeddings are built so that the Gram matrix of the rows equals
the prescribed class-similarity matrix: row i is solved against rows j < i
over the first i-1 coordinates (forward substitution), then coordinate i
absorbs the remaining norm, sqrt(1 - sum of squares). This is a Cholesky
factorization with the rows as embeddings, so every row has unit norm
because the similarity diagonal is 1.

Only the Gram matrix is contractual: the coordinates themselves depend on
class order, but E @ E.T does not.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DimensionError, NotPsdError, ValidationError
from .hierarchy import SimilarityMatrix

PSD_SLACK = 1e-9
ROW_NORM_TOL = 1e-9


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n class embeddings of dimension d as rows, in label-index order."""

    class_names: tuple[str, ...]
    matrix: np.ndarray
    kind: str  # "onehot" | "semantic"

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def rows_for_labels(self, labels: np.ndarray) -> np.ndarray:
        """Target rows for 1-based integer labels."""
        return self.matrix[np.asarray(labels) - 1]


@dataclass(frozen=True)
class EmbeddingReport:
    """Deviation of an embedding matrix from its similarity contract."""

    max_gram_deviation: float
    max_row_norm_deviation: float


def onehot_embeddings(n: int, class_names=None) -> EmbeddingMatrix:
    if n < 2:
        raise ValidationError(f"need at least 2 classes, got {n}")
    names = tuple(class_names) if class_names is not None else tuple(
        f"class_{i + 1}" for i in range(n)
    )
    if len(names) != n:
        raise DimensionError(f"{len(names)} class names for {n} classes")
    return EmbeddingMatrix(class_names=names, matrix=np.eye(n), kind="onehot")


def semantic_embeddings(sim: SimilarityMatrix) -> EmbeddingMatrix:
    """Rows on the unit sphere whose dot products equal the similarities.

    Raises :class:`NotPsdError`, naming the offending class, when the
    residual norm for some row would be negative beyond the 1e-9 slack;
    residuals within the slack clamp to zero.
    """
    s = sim.matrix
    n = sim.n
    if s.shape != (n, n):
        raise DimensionError(f"similarity matrix shape {s.shape} is not ({n}, {n})")
    if not np.allclose(s, s.T, atol=0.0):
        raise NotPsdError("similarity matrix is not symmetric")
    if not np.allclose(np.diag(s), 1.0, atol=0.0):
        raise NotPsdError("similarity matrix diagonal is not all ones")
    e = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i):
            # <e_j, e_i> = s[j, i], solved in order of increasing j
            acc = s[j, i]
            for m in range(j):
                acc -= e[j, m] * e[i, m]
            pivot = e[j, j]
            if pivot == 0.0:
                if abs(acc) > PSD_SLACK:
                    raise NotPsdError(
                        f"class {sim.class_names[i]!r}: unsatisfiable similarity "
                        f"against degenerate row {sim.class_names[j]!r}"
                    )
                e[i, j] = 0.0
            else:
                e[i, j] = acc / pivot
        residual = 1.0 - float(e[i, :i] @ e[i, :i])
        if residual < -PSD_SLACK:
            raise NotPsdError(
                f"similarity matrix is not positive semidefinite at class "
                f"{sim.class_names[i]!r} (residual {residual:.3e})"
            )
        e[i, i] = math.sqrt(max(residual, 0.0))
    return EmbeddingMatrix(class_names=sim.class_names, matrix=e, kind="semantic")


def verify_embeddings(emb: EmbeddingMatrix, sim: SimilarityMatrix) -> EmbeddingReport:
    """Max absolute Gram deviation and row-norm deviation from 1."""
    if emb.num_classes != sim.n:
        raise DimensionError(
            f"{emb.num_classes} embeddings vs {sim.n}x{sim.n} similarity matrix"
        )
    gram = emb.matrix @ emb.matrix.T
    norms = np.linalg.norm(emb.matrix, axis=1)
    return EmbeddingReport(
        max_gram_deviation=float(np.abs(gram - sim.matrix).max()),
        max_row_norm_deviation=float(np.abs(norms - 1.0).max()),
    )


def save_embeddings_csv(path, emb: EmbeddingMatrix) -> None:
    """One row per class: name plus d coordinates; kind kept in a comment."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# kind: {emb.kind}\n")
        writer = csv.writer(fh)
        for name, row in zip(emb.class_names, emb.matrix):
            writer.writerow([name, *[repr(float(v)) for v in row]])


def load_embeddings_csv(path) -> EmbeddingMatrix:
    kind = "semantic"
    names: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "kind:" in line:
                    kind = line.split("kind:", 1)[1].strip()
                continue
            fields = line.split(",")
            if len(fields) < 2:
                raise DataFormatError(f"{path}: line {lineno}: expected name plus coordinates")
            names.append(fields[0])
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no embedding rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: ragged rows with widths {sorted(widths)}")
    matrix = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    worst = float(np.abs(norms - 1.0).max())
    if worst > ROW_NORM_TOL:
        raise DataFormatError(
            f"{path}: embedding rows are not unit-norm (worst deviation {worst:.3e})"
        )
    return EmbeddingMatrix(class_names=tuple(names), matrix=matrix, kind=kind)
