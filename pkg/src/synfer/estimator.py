"""Synthetic-data alignment and bias-corrected coefficient estimation.

The corrected estimating equation averages
``{x'theta_ols - mu(x'beta)} x`` over synthetic covariate rows: it
combines synthetic covariates with the exact least-squares coefficients
recovered from the released summary, and never touches synthetic
outcomes. Before solving, the synthetic rows are aligned to the summary
by a whiten-recolor transform so their second moments match the original
data's exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import (
    DomainViolation,
    InputError,
    NonConvergence,
    NotPositiveDefinite,
    Overflow,
    RankDeficient,
    Separation,
    SingularInformation,
)
from .links import LinkFamily
from .summary import Dataset, GramSummary, ols_from_gram

_ALIGN_RTOL = 1e-10
_MAX_HALVINGS = 30
_SEPARATION_NORM = 1e3


def cholesky_upper(a: np.ndarray) -> np.ndarray:
    """Upper-triangular R with R'R = a for symmetric positive definite a."""
    a = np.asarray(a, dtype=float)
    r, info = lapack.dpotrf(a, lower=0, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1
        )
    if info < 0:
        raise ValueError(f"invalid argument {-info} to Cholesky factorization")
    return r


@dataclass(frozen=True)
class AlignedSynthetic:
    """Synthetic rows after second-moment alignment.

    `design` holds the transformed covariate rows (the intercept column
    is transformed with everything else and is intentionally no longer
    exactly ones). `outcome` is present only under outcome-inclusive
    alignment. `transform` is the matrix that was applied on the right.
    """

    design: np.ndarray
    outcome: np.ndarray | None
    transform: np.ndarray

    @property
    def m(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @classmethod
    def unaligned(cls, design: np.ndarray,
                  outcome: np.ndarray | None = None) -> "AlignedSynthetic":
        """Wrap raw synthetic rows without any transformation."""
        design = np.ascontiguousarray(design, dtype=float)
        if outcome is not None:
            outcome = np.ascontiguousarray(outcome, dtype=float)
        return cls(design=design, outcome=outcome,
                   transform=np.eye(design.shape[1] + (outcome is not None)))


def whiten_recolor(syn: np.ndarray, gram: GramSummary,
                   include_outcome: bool = False) -> AlignedSynthetic:
    """Align synthetic rows so their scaled Gram matrix matches the summary.

    `syn` carries the raw synthetic design (intercept column first); with
    `include_outcome` it must carry the synthetic outcome as its last
    column and the full summary matrix becomes the target. The rows are
    multiplied on the right by R_syn^{-1} R_target, where the R factors
    are upper-triangular Cholesky factors of the synthetic cross-product
    and of (m/n) times the target block.
    """
    syn = np.ascontiguousarray(syn, dtype=float)
    if syn.ndim != 2:
        raise InputError("synthetic matrix must be 2-d")
    m, k = syn.shape
    width = gram.p + 1 if include_outcome else gram.p
    if k != width:
        raise InputError(
            f"synthetic matrix has {k} columns; alignment target expects {width}"
        )
    if m <= k:
        raise RankDeficient(
            f"need more synthetic rows than columns (m={m}, columns={k})"
        )
    target = gram.gram if include_outcome else gram.xtx
    syn_gram = syn.T @ syn
    try:
        r_syn = cholesky_upper(syn_gram)
    except NotPositiveDefinite as exc:
        raise RankDeficient(
            f"synthetic matrix is rank deficient (column {exc.pivot})"
        ) from exc
    r_target = cholesky_upper((m / gram.n) * target)
    transform = solve_triangular(r_syn, r_target, lower=False)
    aligned = syn @ transform
    achieved = aligned.T @ aligned / m
    wanted = target / gram.n
    err = np.abs(achieved - wanted).max()
    if err > _ALIGN_RTOL * max(np.abs(wanted).max(), 1.0):
        raise RankDeficient(
            f"alignment failed to reproduce the target Gram matrix (error {err:.3e})"
        )
    if include_outcome:
        return AlignedSynthetic(design=aligned[:, :-1], outcome=aligned[:, -1],
                                transform=transform)
    return AlignedSynthetic(design=aligned, outcome=None, transform=transform)


def psi(beta: np.ndarray, aligned: AlignedSynthetic, theta: np.ndarray,
        link: LinkFamily) -> np.ndarray:
    """Corrected estimating function: mean of {x'theta - mu(x'beta)} x."""
    x = aligned.design
    resid = x @ theta - link.mu(x @ beta)
    return x.T @ resid / x.shape[0]


def observed_information(beta: np.ndarray, design: np.ndarray, link: LinkFamily,
                         scale: float | None = None) -> np.ndarray:
    """Weighted cross-product ``scale * X' diag(mu'(X beta)) X``.

    Defaults to averaging over rows. Positive definite whenever the mean
    function is increasing and the design has full column rank; negative
    definite for decreasing mean functions.
    """
    design = np.asarray(design, dtype=float)
    if scale is None:
        scale = 1.0 / design.shape[0]
    weights = link.mu_prime(design @ beta)
    info = (design * weights[:, None]).T @ design * scale
    return 0.5 * (info + info.T)


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 100
    tol: float = 1e-10
    init: np.ndarray | None = None


@dataclass(frozen=True)
class FitResult:
    """A solved fit: coefficients, information, and (once attached) variance.

    `variance` is on the per-n scale, i.e. Var(beta) is approximately
    variance / n; `se` and `ci` are filled together with it by the
    variance machinery.
    """

    beta: np.ndarray
    info: np.ndarray
    n: int
    m: int
    link_name: str
    trace: tuple[float, ...]
    variance: np.ndarray | None = None
    se: np.ndarray | None = None
    ci: np.ndarray | None = None
    ci_level: float | None = None

    def with_variance(self, variance: np.ndarray, se: np.ndarray,
                      ci: np.ndarray, level: float) -> "FitResult":
        return replace(self, variance=variance, se=se, ci=ci, ci_level=level)


def _newton(score_fn, jacobian_fn, beta0: np.ndarray, opts: SolveOptions,
            norm_guard: float | None = None) -> tuple[np.ndarray, tuple[float, ...]]:
    """Damped Newton root finder on the sup norm of the score.

    Backtracks on the score norm itself (the score is not a gradient
    field for non-canonical links, so a merit function is not
    available); a trial step that leaves the mean function's domain
    counts as a failed step.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    value = score_fn(beta)
    norm = float(np.abs(value).max())
    trace = [norm]
    for _ in range(opts.max_iter):
        if norm <= opts.tol:
            return beta, tuple(trace)
        jac = jacobian_fn(beta)
        try:
            delta = np.linalg.solve(jac, -value)
        except np.linalg.LinAlgError:
            raise SingularInformation("information matrix is singular at an iterate")
        if not np.isfinite(delta).all():
            raise SingularInformation("Newton step is not finite")
        step = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            candidate = beta + step * delta
            try:
                trial = score_fn(candidate)
                trial_norm = float(np.abs(trial).max())
            except (DomainViolation, Overflow):
                trial_norm = np.inf
            if trial_norm < norm:
                break
            step *= 0.5
        else:
            raise NonConvergence(
                "step halving failed to reduce the score norm", trace=tuple(trace)
            )
        beta, value, norm = candidate, trial, trial_norm
        trace.append(norm)
        if norm_guard is not None and np.linalg.norm(beta) > norm_guard:
            raise Separation(
                "coefficients diverged, indicating complete separation"
            )
    if norm <= opts.tol:
        return beta, tuple(trace)
    raise NonConvergence(
        f"no convergence after {opts.max_iter} iterations", trace=tuple(trace)
    )


def _intercept_start(link: LinkFamily, ybar: float, p: int) -> np.ndarray:
    beta = np.zeros(p)
    try:
        beta[0] = link.mu_inverse(ybar)
    except DomainViolation:
        pass
    if not np.isfinite(beta[0]):
        beta[0] = 0.0
    return beta


def _feasible_start(link: LinkFamily, design: np.ndarray, theta: np.ndarray,
                    ybar: float) -> np.ndarray:
    """Pick a starting point inside the mean function's domain.

    For bounded-below links the least-squares coefficients are rescaled
    until every linear predictor clears the bound; unconstrained links
    start from the intercept-only fit.
    """
    p = design.shape[1]
    if link.lower_bound is None:
        return _intercept_start(link, ybar, p)
    bound = link.lower_bound
    low = float((design @ theta).min())
    if low > bound:
        return theta.copy()
    for factor in (2.0, 4.0, 8.0, 16.0):
        candidate = theta * factor
        if float((design @ candidate).min()) > bound:
            return candidate
    start = _intercept_start(link, ybar, p)
    if float((design @ start).min()) > bound:
        return start
    raise DomainViolation(
        f"could not find a starting point with all linear predictors > {bound}"
    )


def solve_corrected(aligned: AlignedSynthetic, gram: GramSummary, link: LinkFamily,
                    opts: SolveOptions = SolveOptions()) -> FitResult:
    """Solve the corrected estimating equation on aligned synthetic rows.

    Returns the root together with the observed information evaluated
    there; the variance slots stay empty until the variance machinery
    fills them.
    """
    theta = ols_from_gram(gram).theta
    design = aligned.design
    ybar = float(gram.xty[0] / gram.n)
    if opts.init is not None:
        start = np.asarray(opts.init, dtype=float)
    else:
        start = _feasible_start(link, design, theta, ybar)
    inv_m = 1.0 / design.shape[0]

    def score(beta):
        return psi(beta, aligned, theta, link)

    def jacobian(beta):
        return -observed_information(beta, design, link, inv_m)

    beta, trace = _newton(score, jacobian, start, opts)
    return FitResult(
        beta=beta,
        info=observed_information(beta, design, link, inv_m),
        n=gram.n,
        m=design.shape[0],
        link_name=link.name,
        trace=trace,
    )


def fit_glm_mle(data: Dataset, link: LinkFamily,
                opts: SolveOptions = SolveOptions()) -> np.ndarray:
    """Solve the raw-data score equation ``mean{(y - mu(x'beta)) x} = 0``.

    For canonical links this is the maximum-likelihood fit; it doubles as
    the naive baseline when handed synthetic rows. Logistic fits guard
    against complete separation by monitoring the coefficient norm.
    """
    design, outcome = data.design, data.outcome
    inv_n = 1.0 / data.n
    ybar = float(outcome.mean())
    if opts.init is not None:
        start = np.asarray(opts.init, dtype=float)
    elif link.lower_bound is not None:
        theta, *_ = np.linalg.lstsq(design, outcome, rcond=None)
        start = _feasible_start(link, design, theta, ybar)
    else:
        start = _intercept_start(link, ybar, data.p)

    def score(beta):
        return design.T @ (outcome - link.mu(design @ beta)) * inv_n

    def jacobian(beta):
        return -observed_information(beta, design, link, inv_n)

    guard = _SEPARATION_NORM if link.name == "logistic" else None
    beta, _ = _newton(score, jacobian, start, opts, norm_guard=guard)
    return beta



def solve_moment_alternative(aligned: AlignedSynthetic, xty_over_n: np.ndarray,
                             link: LinkFamily,
                             opts: SolveOptions = SolveOptions()) -> np.ndarray:
    """Solve ``mean{mu(x'beta) x} = X'y / n`` on the synthetic rows.

    A cross-moment variant that needs only the design/outcome column of
    the summary; less efficient than the corrected equation because it
    drops the outcome correlation, but useful when only X'y can be
    shared.
    """
    design = aligned.design
    target = np.asarray(xty_over_n, dtype=float)
    inv_m = 1.0 / design.shape[0]
    ybar = float(target[0])
    if opts.init is not None:
        start = np.asarray(opts.init, dtype=float)
    else:
        start = _intercept_start(link, ybar, design.shape[1])
        if link.lower_bound is not None and \
                float((design @ start).min()) <= link.lower_bound:
            raise DomainViolation("intercept-only start violates the domain bound")

    def score(beta):
        return design.T @ link.mu(design @ beta) * inv_m - target

    def jacobian(beta):
        return observed_information(beta, design, link, inv_m)

    beta, _ = _newton(score, jacobian, start, opts)
    return beta
