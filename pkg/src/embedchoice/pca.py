"""Principal components of embedding matrices."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingMatrix, Source, _fmt
from .errors import ParseError, ValidationError


class PCAWarning(UserWarning):
    """Raised for dropped columns and rank-deficient inputs."""


@dataclass(frozen=True, eq=False)
class PCStore:
    """Fitted principal components for one embedding source.

    ``scores`` are the centered data projected on the leading eigenvectors
    of the sample covariance; their sample variances are ``eigenvalues``.
    ``model_scores()`` rescales them to unit variance for the demand model.
    """

    source: Source
    rows: tuple
    scores: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    explained_ratio: np.ndarray
    center: np.ndarray
    scale: np.ndarray | None = None
    columns: tuple = ()

    @property
    def P(self) -> int:
        return self.scores.shape[1]

    @property
    def names(self) -> tuple:
        return tuple(f"PC{p + 1}" for p in range(self.P))

    def model_scores(self) -> np.ndarray:
        return self.scores / np.sqrt(self.eigenvalues)

    def covariates(self, prefix: str = "PC") -> dict:
        """Unit-variance scores keyed by candidate name, one value per product row."""
        z = self.model_scores()
        return {f"{prefix}{p + 1}": z[:, p].copy() for p in range(self.P)}

    def transform(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64) - self.center
        if self.scale is not None:
            x = x / self.scale
        return x @ self.loadings


def standardize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every column to sample mean 0 and sample variance 1.

    Constant columns are dropped and reported through a ``PCAWarning``.
    """
    x = matrix.values
    if x.shape[0] < 2:
        raise ValidationError("standardize needs at least two products")
    _, keep, _, _ = _standardize_arrays(x, matrix.columns)
    mean = x[:, keep].mean(axis=0)
    sd = x[:, keep].std(axis=0, ddof=1)
    values = (x[:, keep] - mean) / sd
    columns = tuple(c for c, k in zip(matrix.columns, keep) if k)
    return EmbeddingMatrix(matrix.source, matrix.rows, values, columns)


def _standardize_arrays(x: np.ndarray, columns):
    sd = x.std(axis=0, ddof=1)
    tol = 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    keep = sd > tol
    if not keep.any():
        raise ValidationError("every column has zero variance")
    dropped = [c for c, k in zip(columns, keep) if not k]
    if dropped:
        warnings.warn(f"dropped zero-variance columns: {dropped}", PCAWarning, stacklevel=3)
    return x, keep, x[:, keep].mean(axis=0), sd[keep]


def fit_pca(matrix: EmbeddingMatrix, P: int, standardize_columns: bool = False) -> PCStore:
    """Project an embedding matrix on its top-``P`` principal directions.

    Each loading column is signed so that its largest-magnitude entry is
    positive. If the centered data has rank below ``P``, only rank-many
    components are returned and a ``PCAWarning`` is issued.
    """
    x = matrix.values
    columns = matrix.columns
    scale = None
    if standardize_columns:
        x, keep, _, sd = _standardize_arrays(x, columns)
        x = x[:, keep]
        columns = tuple(c for c, k in zip(columns, keep) if k)
        scale = sd
    J, D = x.shape
    if J < 2:
        raise ValidationError("PCA needs at least two products")
    if not isinstance(P, (int, np.integer)) or P < 1 or P > min(J - 1, D):
        raise ValidationError(f"number of components must lie in 1..{min(J - 1, D)}, got {P}")
    center = x.mean(axis=0)
    xc = x - center
    if scale is not None:
        xc = xc / scale
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    eig = s**2 / (J - 1)
    total = float((xc**2).sum() / (J - 1))
    tol = max(J, D) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    if rank == 0:
        raise ValidationError("embedding matrix has no variance")
    if rank < P:
        warnings.warn(f"data has rank {rank} < {P}; returning {rank} components", PCAWarning, stacklevel=2)
        P = rank
    loadings = vt[:P].T.copy()
    for p in range(P):
        k = int(np.argmax(np.abs(loadings[:, p])))
        if loadings[k, p] < 0:
            loadings[:, p] *= -1.0
    scores = xc @ loadings
    return PCStore(
        source=matrix.source,
        rows=matrix.rows,
        scores=scores,
        loadings=loadings,
        eigenvalues=eig[:P].copy(),
        explained_ratio=eig[:P] / total,
        center=center,
        scale=scale,
        columns=columns,
    )


def write_pcstore(directory, store: PCStore) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pcs = directory / "pcs.csv"
    with open(pcs, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["product_id", *(f"pc{p + 1}" for p in range(store.P))])
        for pid, row in zip(store.rows, store.scores):
            w.writerow([pid, *(_fmt(v) for v in row)])
    meta = directory / "pca_meta.json"
    payload = {
        "source": store.source.descriptor,
        "P": store.P,
        "explained_ratio": store.explained_ratio.tolist(),
        "eigenvalues": store.eigenvalues.tolist(),
        "columns": list(store.columns),
        "center": store.center.tolist(),
        "scale": None if store.scale is None else store.scale.tolist(),
        "loadings": store.loadings.tolist(),
    }
    meta.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return [pcs, meta]


def load_pcstore(directory) -> PCStore:
    directory = Path(directory)
    meta_path = directory / "pca_meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    rows, scores = [], []
    with open(directory / "pcs.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "product_id" or len(header) != meta["P"] + 1:
            raise ParseError("pcs.csv header does not match pca_meta.json", str(directory / "pcs.csv"), 1)
        for row in reader:
            if row:
                rows.append(row[0])
                scores.append([float(v) for v in row[1:]])
    return PCStore(
        source=Source.parse(meta["source"]),
        rows=tuple(rows),
        scores=np.array(scores),
        loadings=np.array(meta["loadings"]),
        eigenvalues=np.array(meta["eigenvalues"]),
        explained_ratio=np.array(meta["explained_ratio"]),
        center=np.array(meta["center"]),
        scale=None if meta["scale"] is None else np.array(meta["scale"]),
        columns=tuple(meta["columns"]),
    )
