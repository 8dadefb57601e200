"""Variance estimation for the corrected estimator.

The sampling variance of the corrected coefficients decomposes into the
classical information term plus a contribution from the synthetic stage.
The latter is estimated by a parametric bootstrap of the estimating
function: each replicate redraws the coefficient pair from its joint
normal approximation, perturbs the summary cross-product with a Wishart
draw around the empirical covariate covariance, resamples the synthetic
rows, re-aligns them to the perturbed target, and re-evaluates the
estimating function. The empirical variance of those replicates feeds
the final assembly; a robust (sandwich) mode covers non-canonical or
mean-only models.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .errors import (
    BootstrapUnstable,
    DomainViolation,
    InputError,
    InvalidDf,
    MissingOutcome,
    NotPositiveDefinite,
    Overflow,
    SingularInformation,
)
from .estimator import AlignedSynthetic, FitResult, cholesky_upper
from .genrand import RngStream, mvn_sample
from .links import LinkFamily
from .summary import GramSummary, mean_cov_from_gram, ols_from_gram

log = logging.getLogger(__name__)

VARIANCE_MODES = ("canonical", "sandwich")

# A replicate is dropped when its perturbed target cannot be factored or
# its domain is violated; more than this share of drops aborts the run.
_MAX_DROP_FRACTION = 0.05


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate count, seed, and variance mode for the bootstrap."""

    b: int = 1000
    seed: int = 0
    mode: str = "canonical"

    def __post_init__(self):
        if self.b < 2:
            raise InputError("bootstrap needs at least 2 replicates")
        if self.mode not in VARIANCE_MODES:
            raise InputError(f"mode must be one of {VARIANCE_MODES}")


@dataclass(frozen=True)
class BootstrapReport:
    """Empirical variance of the estimating-function replicates.

    `draws` (replicates x p) is retained for auditing; `dropped` counts
    replicates that failed numerically and were excluded.
    """

    psi_var: np.ndarray
    draws: np.ndarray | None
    dropped: int


@dataclass(frozen=True)
class SandwichComponents:
    """Residual-weighted moment matrices and the joint covariance blocks.

    The k_* matrices are synthetic-data moment estimates of the robust
    variance kernels; the v_* blocks combine them with the inverse
    information and inverse covariate second moment into the joint
    normal approximation used by the bootstrap's coefficient redraw.
    """

    k_bb: np.ndarray
    k_tt: np.ndarray
    k_bt: np.ndarray
    v_bb: np.ndarray
    v_tt: np.ndarray
    v_bt: np.ndarray


def _inverse_spd(matrix: np.ndarray, context: str) -> np.ndarray:
    try:
        upper = cholesky_upper(matrix)
    except NotPositiveDefinite as exc:
        raise SingularInformation(f"{context} is not positive definite") from exc
    identity = np.eye(matrix.shape[0])
    inv = solve_triangular(upper, solve_triangular(upper.T, identity, lower=True),
                           lower=False)
    return 0.5 * (inv + inv.T)


def wishart_sample(df: int, scale: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """One Wishart draw with `df` degrees of freedom and the given scale.

    Uses the Bartlett construction: W = L A A' L' where L is the lower
    Cholesky factor of the scale, A is lower triangular with chi-square
    square roots on the diagonal and standard normals below it.
    """
    scale = np.asarray(scale, dtype=float)
    dim = scale.shape[0]
    if df < dim:
        raise InvalidDf(f"degrees of freedom {df} below dimension {dim}")
    lower = cholesky_upper(scale).T
    bartlett = np.zeros((dim, dim))
    chis = rng.chisquare(df - np.arange(dim))
    bartlett[np.diag_indices(dim)] = np.sqrt(chis)
    if dim > 1:
        idx = np.tril_indices(dim, k=-1)
        bartlett[idx] = rng.standard_normal(len(idx[0]))
    half = lower @ bartlett
    return half @ half.T


def sample_joint_beta_theta(fit: FitResult, gram: GramSummary,
                            rng: np.random.Generator,
                            components: SandwichComponents | None = None
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Redraw the coefficient pair from its joint normal approximation.

    In canonical mode the covariance blocks are the inverse information
    and summary-derived cross-product forms; with `components` supplied
    the sandwich blocks are used instead. Either way the asymptotic
    blocks are scaled by 1/n to the sampling scale of the estimators,
    and the assembled covariance (singular by construction) is factored
    with eigenvalue clipping.
    """
    p = fit.beta.size
    cov = np.empty((2 * p, 2 * p))
    if components is None:
        info_inv = _inverse_spd(fit.info, "observed information")
        xtx_inv = _inverse_spd(gram.xtx, "design cross-product")
        cov[:p, :p] = info_inv / gram.n
        cov[:p, p:] = xtx_inv
        cov[p:, :p] = xtx_inv
        cov[p:, p:] = gram.n * xtx_inv @ fit.info @ xtx_inv
    else:
        cov[:p, :p] = components.v_bb / gram.n
        cov[:p, p:] = components.v_bt / gram.n
        cov[p:, :p] = components.v_bt.T / gram.n
        cov[p:, p:] = components.v_tt / gram.n
    theta = ols_from_gram(gram).theta
    mean = np.concatenate([fit.beta, theta])
    draw = mvn_sample(mean, 0.5 * (cov + cov.T), rng)
    return draw[:p], draw[p:]



def sandwich_components(aligned: AlignedSynthetic, fit: FitResult,
                        theta: np.ndarray, link: LinkFamily) -> SandwichComponents:
    """Residual-weighted moment matrices from outcome-inclusive aligned rows.

    Requires the aligned synthetic outcome: the kernels weight each
    cross-product by squared (or paired) residuals of the mean model and
    of the linear model.
    """
    if aligned.outcome is None:
        raise MissingOutcome(
            "sandwich components need outcome-inclusive alignment"
        )
    x = aligned.design
    y = aligned.outcome
    m = x.shape[0]
    mean_resid = y - link.mu(x @ fit.beta)
    lin_resid = y - x @ theta
    k_bb = (x * (mean_resid ** 2)[:, None]).T @ x / m
    k_tt = (x * (lin_resid ** 2)[:, None]).T @ x / m
    k_bt = (x * (mean_resid * lin_resid)[:, None]).T @ x / m
    info_inv = _inverse_spd(fit.info, "observed information")
    second = x.T @ x / m
    second_inv = _inverse_spd(second, "synthetic second-moment matrix")
    return SandwichComponents(
        k_bb=0.5 * (k_bb + k_bb.T),
        k_tt=0.5 * (k_tt + k_tt.T),
        k_bt=0.5 * (k_bt + k_bt.T),
        v_bb=info_inv @ k_bb @ info_inv,
        v_tt=second_inv @ k_tt @ second_inv,
        v_bt=info_inv @ k_bt @ second_inv,
    )


def _perturbed_target(gram: GramSummary, xbar: np.ndarray, cov: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw a perturbed covariate cross-product with the bordered layout.

    The mean row is redrawn at the sample-mean scale (covariance / n) and
    the centered block from a Wishart with n degrees of freedom, so the
    perturbed matrix fluctuates like the cross-product of a fresh sample
    of the original size.
    """
    n = gram.n
    d = xbar.size
    mean_draw = mvn_sample(xbar, cov / n, rng)
    centered = wishart_sample(n, cov, rng)
    target = np.empty((d + 1, d + 1))
    target[0, 0] = n
    target[0, 1:] = n * mean_draw
    target[1:, 0] = n * mean_draw
    target[1:, 1:] = centered + n * np.outer(mean_draw, mean_draw)
    return target


def _bootstrap_replicate(rng: np.random.Generator, fit: FitResult,
                         gram: GramSummary, aligned: AlignedSynthetic,
                         link: LinkFamily, xbar: np.ndarray, cov: np.ndarray,
                         components: SandwichComponents | None) -> np.ndarray:
    beta_draw, theta_draw = sample_joint_beta_theta(fit, gram, rng, components)
    target = _perturbed_target(gram, xbar, cov, rng)
    design = aligned.design
    m = design.shape[0]
    rows = rng.integers(m, size=m)
    resampled = design[rows]
    r_syn = cholesky_upper(resampled.T @ resampled)
    r_target = cholesky_upper((m / gram.n) * target)
    recolored = resampled @ solve_triangular(r_syn, r_target, lower=False)
    resid = recolored @ theta_draw - link.mu(recolored @ beta_draw)
    return recolored.T @ resid / m


def bootstrap_psi_variance(fit: FitResult, gram: GramSummary,
                           aligned: AlignedSynthetic, link: LinkFamily,
                           cfg: BootstrapConfig,
                           components: SandwichComponents | None = None,
                           threads: int = 1, keep_draws: bool = True,
                           rng_factory=None) -> BootstrapReport:
    """Estimate the variance of the estimating function by resampling.

    Replicate b draws all of its randomness from the stream
    (cfg.seed, b), so the result is identical for any `threads` value
    and any scheduling. Replicates whose perturbed target cannot be
    factored are dropped; more than 5% drops raises BootstrapUnstable.
    Sandwich mode requires `components`.
    """
    if cfg.mode == "sandwich" and components is None:
        raise InputError("sandwich mode requires sandwich components")
    xbar, cov = mean_cov_from_gram(gram)
    if rng_factory is None:
        root = RngStream(cfg.seed)
        rng_factory = lambda b: root.child(b).generator()
    comps = components if cfg.mode == "sandwich" else None
    draws = np.full((cfg.b, fit.beta.size), np.nan)

    def run(b: int) -> None:
        rng = rng_factory(b)
        try:
            draws[b] = _bootstrap_replicate(
                rng, fit, gram, aligned, link, xbar, cov, comps
            )
        except (NotPositiveDefinite, DomainViolation, Overflow,
                np.linalg.LinAlgError, ValueError):
            # ValueError covers NaN/inf rejections inside the triangular
            # solves when a perturbed target degenerates.
            pass

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(cfg.b)))
    else:
        for b in range(cfg.b):
            run(b)

    ok = np.isfinite(draws).all(axis=1)
    dropped = int(cfg.b - ok.sum())
    if dropped > _MAX_DROP_FRACTION * cfg.b:
        raise BootstrapUnstable(
            f"{dropped} of {cfg.b} bootstrap replicates failed"
        )
    if dropped:
        log.warning("dropped %d of %d bootstrap replicates", dropped, cfg.b)
    kept = draws[ok]
    centered = kept - kept.mean(axis=0)
    psi_var = centered.T @ centered / (kept.shape[0] - 1)
    return BootstrapReport(
        psi_var=0.5 * (psi_var + psi_var.T),
        draws=kept if keep_draws else None,
        dropped=dropped,
    )


def assemble_variance(fit: FitResult, report: BootstrapReport, n: int,
                      mode: str = "canonical",
                      components: SandwichComponents | None = None) -> np.ndarray:
    """Combine the bootstrap variance with the information term.

    Canonical mode adds the plain inverse information; sandwich mode
    replaces that addend with the robust kernel sandwiched between
    inverse informations. The result is on the per-n scale.
    """
    if mode not in VARIANCE_MODES:
        raise InputError(f"mode must be one of {VARIANCE_MODES}")
    info_inv = _inverse_spd(fit.info, "observed information")
    middle = info_inv @ (n * report.psi_var) @ info_inv
    if mode == "sandwich":
        if components is None:
            raise InputError("sandwich mode requires sandwich components")
        tail = info_inv @ components.k_bb @ info_inv
    else:
        tail = info_inv
    variance = middle + tail
    return 0.5 * (variance + variance.T)


def wald_ci(beta: np.ndarray, variance: np.ndarray, n: int,
            level: float = 0.95) -> np.ndarray:
    """Symmetric normal-quantile intervals from a per-n variance matrix."""
    if not 0.0 < level < 1.0:
        raise InputError("confidence level must lie in (0, 1)")
    beta = np.asarray(beta, dtype=float)
    z = float(ndtri(0.5 + level / 2.0))
    se = np.sqrt(np.clip(np.diag(variance), 0.0, None) / n)
    return np.column_stack([beta - z * se, beta + z * se])


def attach_variance(fit: FitResult, gram: GramSummary,
                    aligned: AlignedSynthetic, link: LinkFamily,
                    cfg: BootstrapConfig, level: float = 0.95,
                    threads: int = 1, keep_draws: bool = False
                    ) -> tuple[FitResult, BootstrapReport]:
    """Run the full variance pipeline and return the completed fit.

    Sandwich mode derives its components from the aligned rows (which
    must then carry the synthetic outcome); the Wald intervals use the
    assembled per-n variance.
    """
    components = None
    if cfg.mode == "sandwich":
        theta = ols_from_gram(gram).theta
        components = sandwich_components(aligned, fit, theta, link)
    report = bootstrap_psi_variance(
        fit, gram, aligned, link, cfg,
        components=components, threads=threads, keep_draws=keep_draws,
    )
    variance = assemble_variance(fit, report, gram.n, cfg.mode, components)
    se = np.sqrt(np.clip(np.diag(variance), 0.0, None) / gram.n)
    ci = wald_ci(fit.beta, variance, gram.n, level)
    return fit.with_variance(variance, se, ci, level), report
