"""Deterministic random streams and reference synthetic-data generators.

Streams are derived from a root seed plus a path of integer labels via
numpy's SeedSequence spawn keys, so any (seed, path) pair reproduces the
same sequence and disjoint paths are statistically independent. The two
generator families stand in for external synthetic-data tools: a Gaussian
copula (good generator) and a smoothed bootstrap (rough generator), plus
an exact-resample stub used by diagnostics.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import InputError
from .summary import Dataset

log = logging.getLogger(__name__)

GENERATOR_KINDS = ("gaussian_copula", "smoothed_bootstrap", "exact_resample")

# Eigenvalues below -_PSD_WARN_RTOL * max(eig) get logged before clipping;
# smaller negatives are ordinary rounding noise.
_PSD_WARN_RTOL = 1e-8


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by (root seed, label path)."""

    root_seed: int
    path: tuple[int, ...] = ()

    def child(self, *labels: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + tuple(int(v) for v in labels))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


def psd_factor(cov: np.ndarray, context: str = "covariance") -> np.ndarray:
    """Matrix square root L with L @ L.T == cov, repairing indefiniteness.

    Tries a Cholesky factor first; when the matrix is semidefinite or has
    small negative eigenvalues, falls back to a symmetric eigenvalue
    decomposition with negatives clipped to zero (clipping only ever
    raises eigenvalues to zero, never lowers one). Genuine violations are
    logged.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = -_PSD_WARN_RTOL * max(eigvals.max(), 0.0)
    if eigvals.min() < floor:
        log.warning(
            "%s repaired: clipped eigenvalues in [%.3e, 0)", context, eigvals.min()
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def mvn_sample(mean: np.ndarray, cov: np.ndarray,
               rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Multivariate normal draw(s) as mean + L z with standard-normal z.

    z comes from the generator's ziggurat `standard_normal`; L is the
    PSD-repaired factor of `cov`, so a zero covariance returns the mean
    exactly.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise InputError(
            f"covariance shape {cov.shape} does not match mean length {mean.size}"
        )
    factor = psd_factor(cov)
    if size is None:
        return mean + factor @ rng.standard_normal(mean.size)
    z = rng.standard_normal((size, mean.size))
    return mean + z @ factor.T


def _silverman_bandwidths(data: np.ndarray) -> np.ndarray:
    n = data.shape[0]
    sd = data.std(axis=0, ddof=1)
    q75, q25 = np.percentile(data, [75, 25], axis=0)
    spread = np.minimum(sd, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, sd)
    return 0.9 * spread * n ** (-0.2)


@dataclass(frozen=True)
class GeneratorModel:
    """A fitted joint model of [covariates, outcome].

    gaussian_copula stores a latent normal correlation (dependence
    already attenuated by `bias_knob`) plus per-column sorted value
    tables for inverse-ECDF marginals. smoothed_bootstrap stores the
    rows and per-column kernel bandwidths. exact_resample keeps the rows
    verbatim and replays them in order -- a diagnostic stub whose sampled
    distribution equals the empirical one exactly.
    """

    kind: str
    columns: tuple[str, ...]
    bias_knob: float
    correlation: np.ndarray | None = field(default=None, repr=False)
    marginals: np.ndarray | None = field(default=None, repr=False)
    data: np.ndarray | None = field(default=None, repr=False)
    bandwidths: np.ndarray | None = field(default=None, repr=False)


def _latent_correlation(data: np.ndarray, columns: tuple[str, ...]) -> np.ndarray:
    k = data.shape[1]
    constant = data.std(axis=0) == 0
    for j in np.flatnonzero(constant):
        warnings.warn(
            f"column {columns[j]!r} is constant; using a degenerate marginal",
            stacklevel=3,
        )
    ranks = rankdata(data, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        spearman = np.corrcoef(ranks, rowvar=False)
    spearman = np.where(np.isfinite(spearman), spearman, 0.0)
    np.fill_diagonal(spearman, 1.0)
    latent = 2.0 * np.sin(np.pi * spearman / 6.0)
    eigvals, eigvecs = np.linalg.eigh(0.5 * (latent + latent.T))
    if eigvals.min() <= 1e-10:
        latent = (eigvecs * np.clip(eigvals, 1e-10, None)) @ eigvecs.T
        scale = np.sqrt(np.diag(latent))
        latent = latent / np.outer(scale, scale)
    np.fill_diagonal(latent, 1.0)
    assert k == latent.shape[0]
    return latent


def fit_generator(data: Dataset, kind: str, bias_knob: float = 1.0,
                  bandwidth: float | None = None) -> GeneratorModel:
    """Train a reference generator on the joint [covariates, outcome] rows.

    `bias_knob` in [0, 1] attenuates the fitted dependence structure
    toward full column independence (1 keeps the fit, 0 severs all
    dependence), emulating a generator of tunable quality. `bandwidth`
    overrides the Silverman per-column default for the smoothed
    bootstrap; zero degenerates to plain resampling of the rows.
    """
    if kind not in GENERATOR_KINDS:
        raise InputError(f"unknown generator kind {kind!r}; expected {GENERATOR_KINDS}")
    if not 0.0 <= bias_knob <= 1.0:
        raise InputError("bias_knob must lie in [0, 1]")
    if data.n <= data.p:
        raise InputError("need more rows than columns to fit a generator")
    joint = np.column_stack([data.design[:, 1:], data.outcome])
    columns = data.labels[1:]
    if kind == "gaussian_copula":
        latent = _latent_correlation(joint, columns)
        k = latent.shape[0]
        latent = bias_knob * (latent - np.eye(k)) + np.eye(k)
        return GeneratorModel(
            kind=kind, columns=columns, bias_knob=bias_knob,
            correlation=latent, marginals=np.sort(joint, axis=0),
        )
    if kind == "smoothed_bootstrap":
        if bandwidth is not None:
            if bandwidth < 0:
                raise InputError("bandwidth must be nonnegative")
            widths = np.full(joint.shape[1], float(bandwidth))
        else:
            widths = _silverman_bandwidths(joint)
        return GeneratorModel(
            kind=kind, columns=columns, bias_knob=bias_knob,
            data=joint, bandwidths=widths,
        )
    return GeneratorModel(kind=kind, columns=columns, bias_knob=1.0, data=joint)


def _sample_copula(model: GeneratorModel, m: int,
                   rng: np.random.Generator) -> np.ndarray:
    k = model.correlation.shape[0]
    latent = mvn_sample(np.zeros(k), model.correlation, rng, size=m)
    uniforms = ndtr(latent)
    table = model.marginals
    n = table.shape[0]
    idx = np.minimum(np.ceil(uniforms * n).astype(int) - 1, n - 1)
    idx = np.maximum(idx, 0)
    return np.take_along_axis(table, idx, axis=0)


def _sample_smoothed(model: GeneratorModel, m: int,
                     rng: np.random.Generator) -> np.ndarray:
    data, widths = model.data, model.bandwidths
    n, k = data.shape
    rows = rng.integers(n, size=m)
    sample = data[rows].copy()
    if model.bias_knob < 1.0:
        # Severed columns are redrawn from independently chosen rows,
        # breaking cross-column dependence while keeping every marginal.
        sever = rng.random((m, k)) >= model.bias_knob
        alt = rng.integers(n, size=(m, k))
        sample = np.where(sever, data[alt, np.arange(k)], sample)
    noise = rng.standard_normal((m, k)) * widths
    return sample + noise


def sample_synthetic(model: GeneratorModel, m: int,
                     stream: RngStream | np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw m synthetic rows; returns (design with leading ones column, outcome)."""
    if m < 0:
        raise InputError("synthetic sample size must be nonnegative")
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    k = len(model.columns)
    if m == 0:
        joint = np.empty((0, k))
    elif model.kind == "gaussian_copula":
        joint = _sample_copula(model, m, rng)
    elif model.kind == "smoothed_bootstrap":
        joint = _sample_smoothed(model, m, rng)
    else:
        n = model.data.shape[0]
        if m % n != 0:
            raise InputError(
                f"exact_resample needs a sample size that is a multiple of {n}"
            )
        joint = np.tile(model.data, (m // n, 1))
    design = np.column_stack([np.ones(m), joint[:, :-1]])
    return design, joint[:, -1]
