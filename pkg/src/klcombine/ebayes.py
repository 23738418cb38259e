"""Empirical Bayes estimates of local false discovery rates and their combination.

Per gene, a one-sample t-test gives a p-value. Three estimates of the
posterior null probability are formed from those p-values:

* ``theoretical-null`` -- histogram density of z-scores against N(0, 1);
* ``empirical-null`` -- same, against a normal fitted to the central z-scores
  by truncated maximum likelihood;
* ``q-value`` -- step-up adjusted p-values.

A likelihood-based lower bound on each posterior null probability defines
which estimates are plausible, and the plausible ones are combined with
:func:`klcombine.combiner.combine_independent`.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .centroid import DEFAULT_MAX_ITER, DEFAULT_TOL
from .combiner import BOX_TOL, CombinationResult, PlausibleBox, combine_binary, combine_independent
from .distributions import BernoulliProduct

log = logging.getLogger(__name__)

METHODS = ("theoretical-null", "empirical-null", "q-value")
DEFAULT_PI0_LOWER = 0.8
DEFAULT_BINS = 20
DEFAULT_LAMBDA = 0.5
MIN_GENES = 50
# largest noncentrality handed to scipy's noncentral t density
SCIPY_NCP_MAX = 1000.0


class DegenerateGeneError(ValueError):
    """Genes with zero variance but nonzero mean have no finite t statistic."""

    def __init__(self, gene_ids):
        self.gene_ids = list(gene_ids)
        shown = ", ".join(map(str, self.gene_ids[:10]))
        more = "" if len(self.gene_ids) <= 10 else f" and {len(self.gene_ids) - 10} more"
        super().__init__(f"zero variance with nonzero mean for genes: {shown}{more}")


class QuadratureError(RuntimeError):
    pass


class FitError(RuntimeError):
    def __init__(self, message, grad_norm):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ExpressionMatrix:
    """``values[j]`` holds the n replicate log-ratios of gene ``gene_ids[j]``."""

    values: np.ndarray
    gene_ids: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("expression values must be a genes x replicates matrix")
        if v.shape[1] < 2:
            raise ValueError("need at least two replicates per gene")
        if not np.all(np.isfinite(v)):
            raise ValueError("expression matrix has missing or non-finite entries")
        ids = tuple(self.gene_ids) if len(self.gene_ids) else tuple(f"g{j + 1}" for j in range(len(v)))
        if len(ids) != len(v):
            raise ValueError(f"{len(ids)} gene ids for {len(v)} rows")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gene_ids", ids)

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_replicates(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this

    t_stat: np.ndarray
    p_value: np.ndarray
    df: int


@dataclass(frozen=True)
class LfdrVector:
    values: np.ndarray
    method: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError(f"{self.method}: values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _clamp_unit(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    off = np.count_nonzero((x < -1e-6) | (x > 1 + 1e-6))
    if off:
        log.debug("%s: clamped %d values lying outside [0, 1] by more than 1e-6", what, off)
    return np.clip(np.nan_to_num(x, nan=1.0, posinf=1.0), 0.0, 1.0)


# ---------------------------------------------------------------- t-tests


def t_test(x: ExpressionMatrix) -> TestResult:
    """Two-sided one-sample t-test of zero mean, gene by gene."""
    v = x.values
    n = v.shape[1]
    mean = v.mean(axis=1)
    sd = v.std(axis=1, ddof=1)
    flat = sd == 0
    bad = flat & (mean != 0)
    if bad.any():
        raise DegenerateGeneError(np.asarray(x.gene_ids, dtype=object)[bad])
    t = np.zeros_like(mean)
    ok = ~flat
    t[ok] = mean[ok] / (sd[ok] / math.sqrt(n))
    p = np.ones_like(mean)
    p[ok] = 2.0 * stats.t.sf(np.abs(t[ok]), n - 1)
    return TestResult(t, np.clip(p, 0.0, 1.0), n - 1)


# ------------------------------------------------------ histogram LFDRs


def z_scores(p, signs=None) -> np.ndarray:
    """Signed normal scores ``sign * Phi^{-1}(1 - p/2)``."""
    p = np.asarray(p, dtype=float)
    z = stats.norm.isf(p / 2.0)
    if signs is not None:
        z = np.where(np.asarray(signs) < 0, -z, z)
    return z


def storey_pi0(p, lam: float = DEFAULT_LAMBDA) -> float:
    p = np.asarray(p, dtype=float)
    if not 0 <= lam < 1:
        raise ValueError("lambda must be in [0, 1)")
    return min(1.0, np.count_nonzero(p > lam) / ((1.0 - lam) * p.size))


def histogram_density(sample: np.ndarray, at: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Histogram density of ``sample``, linearly interpolated between bin centers."""
    counts, edges = np.histogram(sample, bins=bins)
    width = np.diff(edges)
    dens = counts / (sample.size * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return np.interp(at, centers, dens)


def lfdr_from_densities(null_density, mixture_density, pi0: float) -> np.ndarray:
    """``pi0 * f0 / f`` clamped to [0, 1]; an empty density gives 1."""
    f0 = np.asarray(null_density, dtype=float)
    f = np.asarray(mixture_density, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(f > 0, pi0 * f0 / np.where(f > 0, f, 1.0), 1.0)
    return _clamp_unit(ratio, "lfdr")


def _symmetrized(z: np.ndarray, signed: bool) -> np.ndarray:
    # unsigned scores are reflected so that the density estimate is symmetric
    return z if signed else np.concatenate([z, -z])


def _check_size(p):
    if np.asarray(p).size < MIN_GENES:
        raise ValueError(f"need at least {MIN_GENES} p-values to estimate a density")


def lfdr_theoretical(p, signs=None, bins: int = DEFAULT_BINS, lam: float = DEFAULT_LAMBDA) -> LfdrVector:
    """LFDR under a standard normal null for the z-scores."""
    _check_size(p)
    z = z_scores(p, signs)
    sample = _symmetrized(z, signs is not None)
    f = histogram_density(sample, z, bins)
    values = lfdr_from_densities(stats.norm.pdf(z), f, storey_pi0(p, lam))
    return LfdrVector(values, "theoretical-null")


@dataclass(frozen=True)
class TruncatedNormalFit:
    mu: float
    sigma: float
    lower: float
    upper: float
    n_inside: int
    pi0: float


def fit_truncated_normal(z, lower_q: float = 0.25, upper_q: float = 0.75) -> TruncatedNormalFit:
    """Maximum likelihood normal fit to the z-scores inside a central quantile window.

    The null proportion is the count inside the window divided by the fitted
    normal's probability of the window, clamped to [0, 1].
    """
    z = np.asarray(z, dtype=float)
    a, b = np.quantile(z, [lower_q, upper_q])
    inside = z[(z >= a) & (z <= b)]
    m = inside.size
    if m < 3 or b <= a:
        raise FitError("too few z-scores in the truncation window", float("nan"))

    def nll(params):
        mu, log_s = params
        s = math.exp(log_s)
        mass = stats.norm.cdf((b - mu) / s) - stats.norm.cdf((a - mu) / s)
        if mass <= 0:
            return 1e300
        r = (inside - mu) / s
        return 0.5 * np.dot(r, r) + m * log_s + m * math.log(mass)

    start = np.array([np.median(inside), math.log(max((b - a) / 1.349, 1e-6))])
    res = optimize.minimize(nll, start, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    grad = optimize.approx_fprime(res.x, nll, 1e-7) / m
    grad_norm = float(np.linalg.norm(grad))
    # Nelder-Mead may stop on its evaluation budget at a flat optimum; judge by the gradient
    if not np.all(np.isfinite(res.x)) or grad_norm > 1e-3:
        raise FitError("truncated normal fit did not converge", grad_norm)
    mu, sigma = float(res.x[0]), float(math.exp(res.x[1]))
    mass = stats.norm.cdf((b - mu) / sigma) - stats.norm.cdf((a - mu) / sigma)
    pi0 = min(1.0, m / (z.size * mass))
    return TruncatedNormalFit(mu, sigma, float(a), float(b), m, pi0)


def lfdr_empirical(p, signs=None, bins: int = DEFAULT_BINS, window=(0.25, 0.75)) -> LfdrVector:
    """LFDR against a null normal estimated from the central z-scores."""
    _check_size(p)
    z = z_scores(p, signs)
    sample = _symmetrized(z, signs is not None)
    fit = fit_truncated_normal(sample, *window)
    f = histogram_density(sample, z, bins)
    f0 = stats.norm.pdf(z, loc=fit.mu, scale=fit.sigma)
    return LfdrVector(lfdr_from_densities(f0, f, fit.pi0), "empirical-null")


def q_values(p, pi0: float = 1.0) -> LfdrVector:
    """Step-up adjusted p-values ``min_{m >= k} pi0 * N * p_(m) / m``, capped at 1."""
    p = np.asarray(p, dtype=float)
    n = p.size
    order = np.argsort(p, kind="stable")
    ranked = pi0 * n * p[order] / np.arange(1, n + 1)
    q = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(q, 1.0)
    return LfdrVector(out, "q-value")


# --------------------------------------------- likelihood lower bound


def noncentral_t_pdf(t: float, df: int, ncp: float, epsabs: float = 1e-13, epsrel: float = 1e-11) -> float:
    """Density of ``|T|`` at ``t >= 0`` for ``T`` noncentral t.

    Evaluated by adaptive quadrature over the chi-square variable in
    ``T = (Z + ncp) / sqrt(V / df)``.
    """
    if df < 1:
        raise ValueError("df must be at least 1")
    t = abs(float(t))
    log_norm = -0.5 * df * math.log(2.0) - math.lgamma(0.5 * df)

    def integrand(v, x):
        if v <= 0:
            return 0.0
        s = math.sqrt(v / df)
        u = x * s - ncp
        return math.exp(log_norm + (0.5 * df - 1) * math.log(v) - 0.5 * v - 0.5 * u * u) * s / math.sqrt(2 * math.pi)

    bulk = df + 60 * math.sqrt(2 * df) + 200  # chi-square mass is negligible beyond

    def one_side(x):
        # the normal factor peaks at v = df (ncp/x)^2 when x and ncp share a sign
        cuts = [0.0, float(df), bulk]
        if x != 0:
            # for large |x| the mass sits near v ~ df / x^2
            scale = df / (x * x)
            cuts += [c * scale for c in (0.1, 1.0, 10.0, 100.0) if c * scale < df]
        if x * ncp > 0:
            peak = df * (ncp / x) ** 2
            cuts += [0.5 * peak, peak, 2.0 * peak]
        cuts = sorted(set(cuts)) + [np.inf]
        total = attained = 0.0
        with warnings.catch_warnings():
            # convergence is judged by the error estimate below
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for a, b in zip(cuts[:-1], cuts[1:]):
                val, err = integrate.quad(integrand, a, b, args=(x,), epsabs=epsabs, epsrel=epsrel, limit=400)
                total += val
                attained += err
        if attained > max(100 * epsabs, 100 * epsrel * abs(total)):
            raise QuadratureError(f"quadrature error {attained:.3e} at t={x}, df={df}, ncp={ncp}")
        return total

    return one_side(t) + one_side(-t)


def _folded_nct(t, df, ncp):
    with warnings.catch_warnings(), np.errstate(all="ignore"):
        # boost's series warns far in the tails; such genes are retried by quadrature
        warnings.simplefilter("ignore", RuntimeWarning)
        return stats.nct.pdf(t, df, ncp) + stats.nct.pdf(-t, df, ncp)


def _golden_max(fun, lo, hi, tol):
    """Vectorized golden-section maximization on per-element brackets."""
    g = (math.sqrt(5) - 1) / 2
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc, fd = fun(c), fun(d)
    while np.max(hi - lo) > tol:
        left = fc >= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new_c = hi - g * (hi - lo)
        new_d = lo + g * (hi - lo)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_eval = fun(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_eval, fd), np.where(left, fc, f_eval)
        c, d = c_next, d_next
    x = 0.5 * (lo + hi)
    return x, fun(x)


@dataclass(frozen=True)
class BayesFactorBound:
    bayes_factor: np.ndarray
    theta_hat: np.ndarray
    flagged: np.ndarray = field(repr=False)


def bayes_factor_lower_bound(t, n: int, grid_points: int = 65, theta_tol: float = 1e-8) -> BayesFactorBound:
    """``L(0) / max_theta L(theta)`` with ``L`` the density of ``|t|`` at noncentrality ``sqrt(n) theta``.

    The search covers ``0 <= theta <= 10 |t| / sqrt(n) + 5`` (the likelihood is
    even in theta): a coarse grid locates the peak, golden section refines it.
    """
    t = np.abs(np.asarray(t, dtype=float))
    df = n - 1
    root_n = math.sqrt(n)
    delta_max = 10.0 * t + 5.0 * root_n
    # scipy's series slows down quadratically in the noncentrality; leave huge ones to quadrature
    direct = delta_max > SCIPY_NCP_MAX
    frac = np.linspace(0.0, 1.0, grid_points)
    deltas = np.where(direct, 0.0, delta_max)[:, None] * frac[None, :]
    with np.errstate(all="ignore"):
        grid_l = _folded_nct(t[:, None], df, deltas)
    grid_l = np.nan_to_num(grid_l, nan=0.0)
    k = np.argmax(grid_l, axis=1)
    spacing = delta_max / (grid_points - 1)
    lo = np.maximum(deltas[np.arange(t.size), k] - spacing, 0.0)
    hi = np.minimum(deltas[np.arange(t.size), k] + spacing, delta_max)
    with np.errstate(all="ignore"):
        d_hat, l_hat = _golden_max(lambda d: np.nan_to_num(_folded_nct(t, df, d), nan=0.0),
                                   lo, hi, theta_tol * root_n)
    grid_best = grid_l[np.arange(t.size), k]
    use_grid = grid_best > l_hat
    d_hat = np.where(use_grid, deltas[np.arange(t.size), k], d_hat)
    l_max = np.maximum(l_hat, grid_best)
    l_zero = grid_l[:, 0]

    bf = np.ones_like(t)
    flagged = np.zeros(t.size, dtype=bool)
    for j in np.flatnonzero(direct | ~(l_max > 0) | ~np.isfinite(l_max) | ~(l_zero > 0)):
        # scipy's noncentral t underflows far in the tails; retry with quadrature
        try:
            bf[j], d_hat[j] = _bayes_factor_quadrature(t[j], n, delta_max[j])
        except (QuadratureError, FloatingPointError, ValueError, OverflowError):
            flagged[j] = True
            bf[j] = 0.0
    ok = ~flagged & ~direct & (l_max > 0) & (l_zero > 0)
    bf[ok] = np.minimum(l_zero[ok] / l_max[ok], 1.0)
    if flagged.any():
        warnings.warn(f"Bayes factor maximization failed for {flagged.sum()} genes; bound set to 0",
                      RuntimeWarning, stacklevel=2)
    return BayesFactorBound(bf, d_hat / root_n, flagged)


def _bayes_factor_quadrature(t: float, n: int, delta_max: float, grid_points: int = 65):
    df = n - 1
    deltas = np.linspace(0.0, delta_max, grid_points)
    grid_l = np.array([noncentral_t_pdf(t, df, d) for d in deltas])
    k = int(np.argmax(grid_l))
    lo, hi = deltas[max(k - 1, 0)], deltas[min(k + 1, grid_points - 1)]
    res = optimize.minimize_scalar(lambda d: -noncentral_t_pdf(t, df, d), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-8})
    l0 = grid_l[0]
    l_max, d_hat = (-res.fun, float(res.x)) if -res.fun >= grid_l[k] else (grid_l[k], float(deltas[k]))
    if not l_max > 0:
        raise ValueError("likelihood vanished")
    return min(l0 / l_max, 1.0), d_hat


def lfdr_lower_bound_from_t(t, n: int, pi0_lower: float = DEFAULT_PI0_LOWER) -> LfdrVector:
    """Lower bound on each posterior null probability from t statistics on n replicates."""
    if not 0 < pi0_lower < 1:
        raise ValueError("pi0_lower must lie strictly between 0 and 1")
    bf = bayes_factor_lower_bound(t, n).bayes_factor
    odds = pi0_lower / (1.0 - pi0_lower) * bf
    return LfdrVector(_clamp_unit(odds / (1.0 + odds), "lower bound"), "lower-bound")


def lfdr_lower_bound(x: ExpressionMatrix, pi0_lower: float = DEFAULT_PI0_LOWER) -> LfdrVector:
    """Likelihood-based lower bound on the LFDR of every gene."""
    return lfdr_lower_bound_from_t(t_test(x).t_stat, x.n_replicates, pi0_lower)


# ------------------------------------------------------ p-value pairs


def pvalue_plausible_lower_bound(p: float, pi_prior_lower: float) -> float:
    """Lowest plausible posterior null probability given a two-sided p-value.

    Valid for ``0 < p <= 1/e``, where ``e p log(1/p)`` bounds the Bayes factor.
    """
    if not 0 < p <= math.exp(-1) * (1 + 1e-12):
        raise ValueError(f"p-value {p} outside (0, 1/e]")
    if not 0 < pi_prior_lower < 1:
        raise ValueError("prior lower bound must lie strictly between 0 and 1")
    bf = math.e * p * math.log(1.0 / p)
    first = 1.0 / (1.0 + (1.0 - pi_prior_lower) / (pi_prior_lower * bf))
    return min(first, pi_prior_lower)


def combine_p_pair(p1: float, p2: float, bound: float) -> float:
    """Combine two p-values of one hypothesis given a plausibility lower bound.

    Both implausible gives the bound itself, one plausible gives that one,
    and two plausible p-values are mixed with the game-optimal weight.
    """
    if not 0 <= p1 <= p2 <= 1:
        raise ValueError("need 0 <= p1 <= p2 <= 1")
    if not 0 <= bound <= 1:
        raise ValueError("bound must lie in [0, 1]")
    if p2 < bound:
        return bound
    if p1 < bound:
        return p2
    return combine_binary([p1, p2], lower=bound, upper=1.0).p_plus


# ------------------------------------------------------------ pipeline


@dataclass(frozen=True)
class SimulatedData:
    matrix: ExpressionMatrix
    alternative: np.ndarray
    seed: int


def simulate_dataset(N: int, n: int, pi0: float, effect_sd: float, noise_sd: float, seed: int) -> SimulatedData:
    """Synthetic log-ratio matrix with a fraction ``1 - pi0`` of shifted genes."""
    if N < 1 or n < 2:
        raise ValueError("need N >= 1 genes and n >= 2 replicates")
    if not 0 <= pi0 <= 1 or effect_sd < 0 or noise_sd <= 0:
        raise ValueError("invalid simulation parameters")
    rng = np.random.default_rng(seed)
    alternative = rng.random(N) < 1.0 - pi0
    means = np.where(alternative, rng.normal(0.0, effect_sd, N), 0.0)
    values = means[:, None] + rng.normal(0.0, noise_sd, (N, n))
    ids = tuple(f"gene{j + 1:05d}" for j in range(N))
    return SimulatedData(ExpressionMatrix(values, ids), alternative, seed)


@dataclass(frozen=True)
class LfdrCombination:
    combination: CombinationResult
    combined: LfdrVector
    methods: tuple
    weights: dict
    excluded: tuple


def combine_lfdr(estimates: Sequence[LfdrVector], bound: LfdrVector,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> LfdrCombination:
    """Combine LFDR estimates that respect ``bound`` at every gene.

    An estimate below the bound at even one gene is dropped entirely. The
    upper bound is 1.
    """
    sizes = {len(e) for e in estimates} | {len(bound)}
    if len(sizes) != 1:
        raise ValueError(f"estimate lengths differ: {sorted(sizes)}")
    box = PlausibleBox(bound.values, np.ones(len(bound)))
    result = combine_independent([BernoulliProduct(e.values) for e in estimates], box, tol=tol, max_iter=max_iter)
    names = tuple(e.method for e in estimates)
    weights = {names[i]: result.weight_of(i) for i in result.surviving}
    combined = LfdrVector(_clamp_unit(result.combined.null_probs, "combined"), "combined")
    return LfdrCombination(result, combined, names, weights, tuple(names[i] for i in result.excluded))


@dataclass(frozen=True)
class PipelineResult:
    tests: TestResult
    estimates: tuple
    bound: LfdrVector
    combination: LfdrCombination
    gene_ids: tuple

    def binding_counts(self) -> dict:
        """Per surviving method, genes at which it is the per-gene minimum / maximum."""
        surv = [self.estimates[i] for i in self.combination.combination.surviving]
        stacked = np.stack([e.values for e in surv])
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        return {
            e.method: {"min": int(np.count_nonzero(e.values == lo)), "max": int(np.count_nonzero(e.values == hi))}
            for e in surv
        }


def run_pipeline(x: ExpressionMatrix, pi0_lower: float = DEFAULT_PI0_LOWER, bins: int = DEFAULT_BINS,
                 lam: float = DEFAULT_LAMBDA, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> PipelineResult:
    """t-tests, the three LFDR estimates, the lower bound and their combination."""
    tests = t_test(x)
    signs = np.sign(tests.t_stat)
    estimates = (
        lfdr_theoretical(tests.p_value, signs, bins, lam),
        lfdr_empirical(tests.p_value, signs, bins),
        q_values(tests.p_value),
    )
    bound = lfdr_lower_bound_from_t(tests.t_stat, x.n_replicates, pi0_lower)
    combination = combine_lfdr(estimates, bound, tol=tol, max_iter=max_iter)
    return PipelineResult(tests, estimates, bound, combination, x.gene_ids)


def excluded_by_bound(estimates: Sequence[LfdrVector], bound: LfdrVector) -> list:
    """Methods with at least one gene strictly below the bound (the exclusion rule, stated directly)."""
    return [e.method for e in estimates if np.any(e.values < bound.values - BOX_TOL)]
