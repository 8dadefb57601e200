"""Gram-matrix summaries and everything exactly recoverable from them.

The released summary is the full cross-product matrix of
``[intercept | covariates | outcome]`` together with the sample size.
That matrix determines the least-squares coefficients, their classical
variance, and the empirical covariate moments exactly, with no access to
the underlying rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegreesOfFreedom, InputError, RankDeficient, SingularGram
from .fileio import json_text, read_json

# Hard relative tolerance for rank decisions: a pivot below
# RANK_RTOL * max(diagonal) means the column is linearly dependent.
RANK_RTOL = 1e-10

_SYMMETRY_RTOL = 1e-12


def pivoted_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, int]:
    """Numerical rank of a symmetric PSD matrix via pivoted Cholesky.

    Returns ``(rank, dependent)`` where `dependent` is the original index
    of the first column whose pivot fell below ``rtol * max(diag)``, or
    -1 when the matrix has full rank.
    """
    a = np.array(a, dtype=float)
    k = a.shape[0]
    order = np.arange(k)
    tol = rtol * max(a.diagonal().max(), 0.0)
    for step in range(k):
        d = a.diagonal()
        j = step + int(np.argmax(d[step:]))
        if a[j, j] <= tol:
            return step, int(order[j])
        if j != step:
            a[[step, j], :] = a[[j, step], :]
            a[:, [step, j]] = a[:, [j, step]]
            order[[step, j]] = order[[j, step]]
        pivot = np.sqrt(a[step, step])
        a[step, step] = pivot
        a[step + 1:, step] /= pivot
        col = a[step + 1:, step]
        a[step + 1:, step + 1:] -= np.outer(col, col)
    return k, -1


@dataclass(frozen=True)
class Dataset:
    """Raw rows: a design matrix with a leading all-ones column and the outcome.

    `labels` mirrors the summary layout: intercept label first, outcome
    label last. Construction validates shapes, the intercept column, and
    full column rank; arrays are treated as immutable afterwards.
    """

    design: np.ndarray
    outcome: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        design = np.ascontiguousarray(self.design, dtype=float)
        outcome = np.ascontiguousarray(self.outcome, dtype=float)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "labels", tuple(self.labels))
        if design.ndim != 2 or outcome.ndim != 1:
            raise InputError("design must be 2-d and outcome 1-d")
        n, p = design.shape
        if outcome.shape[0] != n:
            raise InputError("design and outcome row counts differ")
        if len(self.labels) != p + 1:
            raise InputError(f"expected {p + 1} labels, got {len(self.labels)}")
        if not (np.isfinite(design).all() and np.isfinite(outcome).all()):
            raise InputError("design and outcome must be finite")
        if n == 0:
            raise InputError("dataset has no rows")
        if not np.all(design[:, 0] == 1.0):
            raise InputError("first design column must be identically 1")
        rank, dependent = pivoted_rank(design.T @ design)
        if rank < p:
            name = self.labels[dependent]
            raise RankDeficient(
                f"design column {name!r} is linearly dependent on the others",
                column=name,
            )

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class GramSummary:
    """Cross-product summary of ``[intercept | covariates | outcome]``.

    `gram` is the (p+1) x (p+1) matrix whose leading p x p block is the
    design cross-product, whose last column holds the design/outcome
    cross-products, and whose last diagonal entry is the outcome sum of
    squares. ``gram[0, 0]`` equals the sample count exactly.
    """

    n: int
    labels: tuple[str, ...]
    gram: np.ndarray

    def __post_init__(self):
        gram = np.ascontiguousarray(self.gram, dtype=float)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "n", int(self.n))
        if self.n <= 0:
            raise InputError("sample count must be positive")
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise InputError("gram must be square")
        if len(self.labels) != gram.shape[0]:
            raise InputError("label count must match gram dimension")
        if len(self.labels) < 2:
            raise InputError("gram must cover at least intercept and outcome")
        scale = np.abs(gram).max()
        if np.abs(gram - gram.T).max() > _SYMMETRY_RTOL * max(scale, 1.0):
            raise InputError("gram matrix is not symmetric")
        if gram[0, 0] != self.n:
            raise InputError("gram[0, 0] must equal the sample count")

    @property
    def p(self) -> int:
        """Number of design columns (intercept included)."""
        return len(self.labels) - 1

    @property
    def xtx(self) -> np.ndarray:
        return self.gram[: self.p, : self.p]

    @property
    def xty(self) -> np.ndarray:
        return self.gram[: self.p, self.p]

    @property
    def yty(self) -> float:
        return float(self.gram[self.p, self.p])


@dataclass(frozen=True)
class OlsEstimate:
    """Least-squares coefficients with residual variance and coefficient covariance."""

    theta: np.ndarray
    sigma2: float
    cov_theta: np.ndarray


def build_gram(data: Dataset) -> GramSummary:
    """Assemble the released cross-product summary from raw rows."""
    block = np.column_stack([data.design, data.outcome])
    gram = block.T @ block
    gram = 0.5 * (gram + gram.T)
    gram[0, 0] = float(data.n)
    return GramSummary(n=data.n, labels=data.labels, gram=gram)


def _chol_lower(a: np.ndarray, error: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularGram(error)


def ols_from_gram(gram: GramSummary) -> OlsEstimate:
    """Exact least-squares fit from the summary alone.

    Solves the normal equations through a Cholesky factor of the design
    cross-product; the residual variance comes from the quadratic
    identity in the summary entries, with an n - p divisor.
    """
    p = gram.p
    if gram.n <= p:
        raise DegreesOfFreedom(
            f"need n > p for a residual variance (n={gram.n}, p={p})"
        )
    lower = _chol_lower(gram.xtx, "design cross-product block is not positive definite")
    theta = np.linalg.solve(lower.T, np.linalg.solve(lower, gram.xty))
    rss = gram.yty - 2.0 * theta @ gram.xty + theta @ gram.xtx @ theta
    sigma2 = max(rss, 0.0) / (gram.n - p)
    identity = np.eye(p)
    xtx_inv = np.linalg.solve(lower.T, np.linalg.solve(lower, identity))
    cov_theta = sigma2 * 0.5 * (xtx_inv + xtx_inv.T)
    return OlsEstimate(theta=theta, sigma2=float(sigma2), cov_theta=cov_theta)


def mean_cov_from_gram(gram: GramSummary) -> tuple[np.ndarray, np.ndarray]:
    """Empirical covariate mean and (1/n-normalized) covariance from the summary.

    The outcome row/column is excluded; the intercept column turns the
    scaled cross-product block into raw moments.
    """
    scaled = gram.xtx / gram.n
    xbar = scaled[1:, 0].copy()
    cov = scaled[1:, 1:] - np.outer(xbar, xbar)
    return xbar, 0.5 * (cov + cov.T)


def gram_to_json(gram: GramSummary) -> str:
    return json_text({"n": gram.n, "labels": list(gram.labels), "gram": gram.gram})


def save_gram(gram: GramSummary, path: str | Path) -> None:
    Path(path).write_text(gram_to_json(gram), encoding="utf-8")


def load_gram(path: str | Path) -> GramSummary:
    raw = read_json(path)
    for key in ("n", "labels", "gram"):
        if key not in raw:
            raise InputError(f"{path}: missing key {key!r}")
    return GramSummary(
        n=int(raw["n"]),
        labels=tuple(str(lab) for lab in raw["labels"]),
        gram=np.asarray(raw["gram"], dtype=float),
    )


def read_table_csv(path: str | Path) -> tuple[tuple[str, ...], np.ndarray]:
    """Read an RFC-4180 CSV with a header row into (column names, matrix).

    Every cell must be numeric; parse errors carry 1-based line numbers
    and the offending column name.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty file")
            rows = list(reader)
    except FileNotFoundError:
        raise InputError(f"file not found: {path}")
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    data = np.empty((len(rows), len(header)), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(
                f"{path}: line {i + 2}: expected {len(header)} fields, got {len(row)}"
            )
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: line {i + 2}: column {header[j]!r} "
                    f"has non-numeric value {cell.strip()!r}"
                )
    return tuple(header), data


def load_dataset_csv(path: str | Path, outcome: str,
                     intercept_label: str = "intercept") -> Dataset:
    """Read a CSV into a Dataset with the named column as the outcome.

    Every other column becomes a covariate, in file order, after an
    injected all-ones intercept column.
    """
    header, data = read_table_csv(path)
    if outcome not in header:
        raise InputError(
            f"{path}: outcome column {outcome!r} not found; "
            f"available columns: {', '.join(header)}"
        )
    y_idx = header.index(outcome)
    covariate_idx = [j for j in range(len(header)) if j != y_idx]
    design = np.column_stack([np.ones(data.shape[0]), data[:, covariate_idx]])
    labels = (intercept_label, *[header[j] for j in covariate_idx], outcome)
    return Dataset(design=design, outcome=data[:, y_idx], labels=labels)
