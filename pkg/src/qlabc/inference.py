"""Likelihood-free inference kernels.

The proposal density pushes a normal kernel in statistic space through
the fitted forward map: a draw comes from N(f(theta_from),
Sigma(theta_from)) in statistic space and is mapped back by the fitted
inverse, and its density at theta is that normal evaluated at f(theta)
times |J(theta)|. The module wires this proposal into ABC-MCMC, plus
the rejection and importance-sampling baselines, tolerance selection,
distances, chain diagnostics, and a quadrature check that the scalar
constant-variance proposal really is the normal kernel its closed form
claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import solve_triangular

from .errors import (
    AllWeightsZero,
    DimensionMismatch,
    InitFailed,
    NotPositiveDefinite,
    OutsideImage,
)
from .numerics import RandomStream, as_generator, as_vector, cholesky_factor, sample_mvn
from .smoothers import RESIDUAL_FLOOR
from .surrogate import SurrogateModel

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "Diagnostics",
    "DistanceSpec",
    "ProposalQL",
    "abc_importance_sampling",
    "abc_mcmc",
    "abc_rejection",
    "diagnostics",
    "distance",
    "effective_sample_size",
    "epsilon_for_acceptance_rate",
    "log_bayes_factor",
    "proposal_logdensity",
    "propose",
    "select_epsilon",
    "verify_proposition1",
]

# Stream-id namespace: pilot nodes use ids 0..N-1, everything else gets
# ids far above any lattice size so streams never collide per master seed.
CHAIN_STREAM = 1 << 48
REJECTION_STREAM = CHAIN_STREAM + 1
IS_STREAM = CHAIN_STREAM + 2
EPSILON_STREAM = CHAIN_STREAM + 3

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DistanceSpec:
    """Observed statistic plus the distance used against simulations."""

    s_obs: np.ndarray
    kind: str = "euclidean"
    observed_genotypes: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "s_obs", as_vector(self.s_obs))
        if self.kind not in ("euclidean", "pedigree-weighted"):
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.kind == "pedigree-weighted":
            if self.observed_genotypes is None:
                raise ValueError("pedigree-weighted distance needs observed genotypes")
            object.__setattr__(
                self, "observed_genotypes", np.asarray(self.observed_genotypes, dtype=np.int64)
            )


def distance(spec: DistanceSpec, s_sim, aux=None) -> float:
    """Euclidean gap, optionally down-weighted by genotype matches."""
    s = as_vector(s_sim, dim=spec.s_obs.size)
    base = float(np.linalg.norm(s - spec.s_obs))
    if spec.kind == "euclidean":
        return base
    if aux is None:
        raise DimensionMismatch("pedigree-weighted distance needs simulated genotypes")
    g = np.asarray(aux, dtype=np.int64)
    if g.shape != spec.observed_genotypes.shape:
        raise DimensionMismatch("genotype vectors disagree in length")
    match = np.count_nonzero(g == spec.observed_genotypes) / g.size
    return base * (1.0 - match)


class ProposalQL:
    """Quasi-likelihood proposal built on a fitted surrogate.

    Densities are used unnormalized in the MH ratio: the normal kernel
    loses some mass where the bounded forward map truncates it, and no
    correction is applied for that loss.
    """

    def __init__(self, surrogate: SurrogateModel):
        self.surrogate = surrogate
        self.param_dim = surrogate.param_dim
        self._const_chol = None
        self._const_chol_inv = None
        self._const_chol_logdet = 0.0
        if surrogate.variance_matrix is not None:
            L = _safe_cholesky(surrogate.variance_matrix)
            self._const_chol = L
            self._const_chol_inv = solve_triangular(L, np.eye(self.param_dim), lower=True)
            self._const_chol_logdet = float(np.sum(np.log(np.diagonal(L))))

    def chol_at(self, theta) -> np.ndarray:
        """Lower Cholesky factor of the proposal covariance at theta."""
        if self._const_chol is not None:
            return self._const_chol
        sd = self.surrogate._sd_fast(as_vector(theta, dim=self.param_dim))
        # smooth-mode covariances are diagonal by construction
        return np.diag(sd)

    def _log_normal(self, x: np.ndarray, mu: np.ndarray, sd: np.ndarray | None) -> float:
        """log N(x; mu, Sigma) with Sigma = diag(sd^2) or the constant matrix."""
        if sd is not None:
            z = (x - mu) / sd
            return (
                -0.5 * self.param_dim * _LOG_2PI
                - float(np.sum(np.log(sd)))
                - 0.5 * float(z @ z)
            )
        z = self._const_chol_inv @ (x - mu)
        return -0.5 * self.param_dim * _LOG_2PI - self._const_chol_logdet - 0.5 * float(z @ z)

    def logq(self, theta_to, theta_from) -> float:
        """log q(theta_to | theta_from); -inf encodes impossibility."""
        s = self.surrogate
        to = as_vector(theta_to, dim=self.param_dim)
        fr = as_vector(theta_from, dim=self.param_dim)
        if not s.contains(to) or not s.contains(fr):
            return -np.inf
        logdet_J = s._logdetJ_fast(to)
        if logdet_J == -np.inf:
            return -np.inf
        return self._log_normal(s._forward_fast(to), s._forward_fast(fr), s._sd_fast(fr)) + logdet_J

    def propose(self, theta_from, rng) -> np.ndarray | None:
        """Draw in statistic space, invert; None marks a dead proposal.

        A draw whose statistic vector has no preimage in the pilot box
        counts as an immediate rejection (the chain stays put).
        """
        s = self.surrogate
        fr = as_vector(theta_from, dim=self.param_dim)
        gen = as_generator(rng)
        mu = s._forward_fast(fr)
        sd = s._sd_fast(fr)
        z = gen.standard_normal(self.param_dim)
        f_star = mu + (sd * z if sd is not None else self._const_chol @ z)
        return s._inverse_fast(f_star)


def _safe_cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return cholesky_factor(cov)
    except NotPositiveDefinite:
        # noiseless pilots give singular residual covariances; floor them
        return cholesky_factor(cov + RESIDUAL_FLOOR * np.eye(cov.shape[0]))


def proposal_logdensity(prop: ProposalQL, theta_to, theta_from) -> float:
    return prop.logq(theta_to, theta_from)


def propose(prop: ProposalQL, theta_from, rng) -> np.ndarray | None:
    return prop.propose(theta_from, rng)


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run parameters."""

    iterations: int
    epsilon: float
    master_seed: int
    init: object = "from-observation"  # or an explicit starting point
    thinning: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive (may be inf)")
        if self.thinning < 1:
            raise ValueError("thinning must be a positive integer")


@dataclass(frozen=True)
class ChainOutput:
    """Recorded trace: one row per kept iteration."""

    states: np.ndarray
    accepted: np.ndarray
    distances: np.ndarray
    logq_fwd: np.ndarray
    logq_rev: np.ndarray
    acceptance_rate: float
    iterations: int
    thinning: int

    @property
    def param_dim(self) -> int:
        return self.states.shape[1]


def abc_mcmc(model, prior, prop: ProposalQL, dist: DistanceSpec, cfg: ChainConfig) -> ChainOutput:
    """Metropolis-Hastings ABC with the quasi-likelihood proposal.

    Each step proposes through the surrogate, simulates the model at
    the proposal, and accepts with probability
    min{1, pi(theta*) q(theta|theta*) / (pi(theta) q(theta*|theta))}
    gated by the distance falling under epsilon. Initialisation is the
    fitted inverse of the observed statistic unless an explicit start
    is configured.
    """
    p = prop.param_dim
    s = prop.surrogate
    rng = RandomStream(cfg.master_seed, CHAIN_STREAM).generator
    if isinstance(cfg.init, str) and cfg.init == "from-observation":
        try:
            theta = s.inverse(dist.s_obs)
        except OutsideImage as exc:
            raise InitFailed(
                f"observed statistic has no preimage ({exc}); pass an explicit starting point"
            ) from exc
    else:
        theta = as_vector(cfg.init, dim=p)
        if not s.contains(theta):
            raise InitFailed(f"starting point {theta.tolist()} lies outside the pilot box")
    log_prior = prior.logpdf(theta)

    # per-state cache: the current state's evaluations survive rejections
    f_cur = s._forward_fast(theta)
    sd_cur = s._sd_fast(theta)
    ldJ_cur = s._logdetJ_fast(theta)
    use_diag = sd_cur is not None
    const_L = prop._const_chol

    n_kept = cfg.iterations // cfg.thinning
    states = np.empty((n_kept, p))
    accepted = np.zeros(n_kept, dtype=bool)
    distances = np.full(n_kept, np.nan)
    logq_fwd = np.full(n_kept, np.nan)
    logq_rev = np.full(n_kept, np.nan)
    n_accepted = 0
    epsilon = cfg.epsilon
    simulate = model.simulate
    log_normal = prop._log_normal
    prior_logpdf = prior.logpdf

    for t in range(1, cfg.iterations + 1):
        z = rng.standard_normal(p)
        f_star = f_cur + (sd_cur * z if use_diag else const_L @ z)
        theta_star = s._inverse_fast(f_star)
        acc = False
        rho = np.nan
        lqf = np.nan
        lqr = np.nan
        if theta_star is not None:
            stats, aux = simulate(theta_star, rng)
            rho = distance(dist, stats, aux)
            f_prop = s._forward_fast(theta_star)
            sd_prop = s._sd_fast(theta_star)
            ldJ_prop = s._logdetJ_fast(theta_star)
            lqf = log_normal(f_prop, f_cur, sd_cur) + ldJ_prop
            lqr = log_normal(f_cur, f_prop, sd_prop) + ldJ_cur
            if rho < epsilon:
                lp_star = prior_logpdf(theta_star)
                numer = lp_star + lqr
                denom = log_prior + lqf
                if math.isnan(numer) or numer == -math.inf:
                    acc = False
                elif math.isnan(denom) or denom == -math.inf:
                    acc = True
                else:
                    log_ratio = numer - denom
                    acc = log_ratio >= 0.0 or math.log(rng.random()) < log_ratio
                if acc:
                    theta = theta_star
                    log_prior = lp_star
                    f_cur, sd_cur, ldJ_cur = f_prop, sd_prop, ldJ_prop
        if acc:
            n_accepted += 1
        if t % cfg.thinning == 0:
            k = t // cfg.thinning - 1
            states[k] = theta
            accepted[k] = acc
            distances[k] = rho
            logq_fwd[k] = lqf
            logq_rev[k] = lqr

    return ChainOutput(
        states=states,
        accepted=accepted,
        distances=distances,
        logq_fwd=logq_fwd,
        logq_rev=logq_rev,
        acceptance_rate=n_accepted / cfg.iterations,
        iterations=cfg.iterations,
        thinning=cfg.thinning,
    )


def abc_rejection(model, prior, epsilon: float, n_draws: int, dist: DistanceSpec, rng):
    """Plain rejection ABC from the prior.

    Returns (accepted parameter draws, their distances).
    """
    gen = as_generator(rng)
    kept_theta = []
    kept_rho = []
    for _ in range(n_draws):
        theta = prior.sample(gen)
        stats, aux = model.simulate(theta, gen)
        rho = distance(dist, stats, aux)
        if rho < epsilon:
            kept_theta.append(theta)
            kept_rho.append(rho)
    p = prior.dim
    thetas = np.array(kept_theta).reshape(-1, p)
    return thetas, np.array(kept_rho)


@dataclass(frozen=True)
class ImportanceSample:
    thetas: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    n_draws: int

    def mean(self) -> np.ndarray:
        return self.weights @ self.thetas

    def effective_draws(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


def _observation_anchor(prop: ProposalQL, s_obs) -> tuple[np.ndarray, np.ndarray]:
    center = prop.surrogate.inverse(s_obs)
    return center, prop.chol_at(center)


def abc_importance_sampling(
    prop: ProposalQL, model, epsilon: float, n_draws: int, dist: DistanceSpec, rng
) -> ImportanceSample:
    """Importance sampling with the observation-centred proposal.

    Draws invert normal perturbations of the observed statistic; each
    kept draw carries weight prior(theta) / q(theta) with q the density
    of the draw mechanism (the model supplies the prior), and draws
    failing the tolerance or lacking a preimage get weight zero.
    Raises AllWeightsZero when nothing passes.
    """
    gen = as_generator(rng)
    s = prop.surrogate
    s_obs = dist.s_obs
    _, L = _observation_anchor(prop, s_obs)
    log_norm = -0.5 * prop.param_dim * _LOG_2PI - float(np.sum(np.log(np.diagonal(L))))

    thetas, logw, rhos = [], [], []
    for _ in range(n_draws):
        f_star = sample_mvn(s_obs, L, gen)
        try:
            theta = s.inverse(f_star)
        except OutsideImage:
            continue
        stats, aux = model.simulate(theta, gen)
        rho = distance(dist, stats, aux)
        if not rho < epsilon:
            continue
        log_prior = model.prior.logpdf(theta)
        if log_prior == -np.inf:
            continue
        z = solve_triangular(L, s.forward(theta) - s_obs, lower=True)
        log_q = log_norm - 0.5 * float(z @ z) + s.jacobian_logdet(theta)
        thetas.append(theta)
        logw.append(log_prior - log_q)
        rhos.append(rho)
    if not thetas:
        raise AllWeightsZero(f"no draw of {n_draws} passed epsilon={epsilon}")
    logw_arr = np.array(logw)
    w = np.exp(logw_arr - logw_arr.max())
    w /= w.sum()
    return ImportanceSample(
        thetas=np.array(thetas), weights=w, distances=np.array(rhos), n_draws=n_draws
    )


def select_epsilon(
    prop: ProposalQL, model, quantile: float, n_draws: int, dist: DistanceSpec, rng
) -> float:
    """Tolerance as a quantile of proposal-predictive distances.

    Simulates parameters through the observation-centred proposal,
    simulates statistics at each, and returns the requested empirical
    quantile of their distances to the observation.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must be in (0, 1)")
    gen = as_generator(rng)
    s = prop.surrogate
    s_obs = dist.s_obs
    _, L = _observation_anchor(prop, s_obs)
    rhos = []
    for _ in range(n_draws):
        f_star = sample_mvn(s_obs, L, gen)
        try:
            theta = s.inverse(f_star)
        except OutsideImage:
            continue
        stats, aux = model.simulate(theta, gen)
        rhos.append(distance(dist, stats, aux))
    if not rhos:
        raise OutsideImage("no proposal draw had a preimage; widen the pilot box")
    eps = float(np.quantile(rhos, quantile))
    if eps <= 0.0:
        # discrete statistics make exact matches common; any tolerance
        # below the smallest positive distance accepts exact matches only
        positive = [r for r in rhos if r > 0]
        eps = 0.5 * min(positive) if positive else RESIDUAL_FLOOR
    return eps


def epsilon_for_acceptance_rate(
    model,
    prior,
    prop: ProposalQL,
    dist: DistanceSpec,
    master_seed: int,
    target: tuple[float, float] = (0.2, 0.4),
    probe_iterations: int = 2000,
    n_calibration: int = 500,
    max_bisect: int = 20,
    init="from-observation",
) -> float:
    """Bisect the tolerance until a probe chain's acceptance rate lands in `target`.

    The bracket comes from the proposal-predictive distance range; rate
    is monotone in epsilon, so plain bisection on the bracket works.
    """
    cal_rng = RandomStream(master_seed, EPSILON_STREAM).generator
    s_obs = dist.s_obs
    _, L = _observation_anchor(prop, s_obs)
    rhos = []
    while len(rhos) < n_calibration:
        f_star = sample_mvn(s_obs, L, cal_rng)
        try:
            theta = prop.surrogate.inverse(f_star)
        except OutsideImage:
            continue
        stats, aux = model.simulate(theta, cal_rng)
        rhos.append(distance(dist, stats, aux))
    rhos = np.array(rhos)
    lo = float(np.quantile(rhos, 0.01))
    hi = float(rhos.max()) * 2.0

    def rate(eps: float) -> float:
        cfg = ChainConfig(
            iterations=probe_iterations, epsilon=eps, master_seed=master_seed, init=init
        )
        return abc_mcmc(model, prior, prop, dist, cfg).acceptance_rate

    # rate is capped by the MH ratio: if even a huge tolerance cannot
    # reach the band, return that tolerance instead of bisecting in vain
    rate_hi = rate(hi)
    if rate_hi < target[0]:
        return hi
    best_eps, best_gap = hi, np.inf
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if target[0] <= r <= target[1]:
            return mid
        gap = min(abs(r - target[0]), abs(r - target[1]))
        if gap < best_gap:
            best_eps, best_gap = mid, gap
        if r < target[0]:
            lo = mid
        else:
            hi = mid
    return best_eps


def log_bayes_factor(chain: ChainOutput, coordinate: int, burn_in: float = 0.1) -> float:
    """log of posterior odds that the coordinate is positive vs negative.

    Counts post-burn-in states; exact zeros land in neither side.
    Returns +-inf when one side is empty, 0 when both are.
    """
    states = chain.states[_burn_start(chain.states.shape[0], burn_in) :, coordinate]
    n_pos = int(np.count_nonzero(states > 0))
    n_neg = int(np.count_nonzero(states < 0))
    if n_pos == 0 and n_neg == 0:
        return 0.0
    if n_neg == 0:
        return np.inf
    if n_pos == 0:
        return -np.inf
    return float(np.log(n_pos / n_neg))


def _burn_start(n: int, burn_in: float) -> int:
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must be in [0, 1)")
    return int(n * burn_in)


def effective_sample_size(x: np.ndarray) -> float:
    """ESS by the initial-positive-sequence truncation of autocorrelations."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        return 1.0
    centered = x - x.mean()
    var0 = float(centered @ centered) / n
    if var0 <= 0.0:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < n else 0.0)
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    tau = max(tau, 1.0)
    return float(n / tau)


@dataclass(frozen=True)
class Diagnostics:
    """Chain summary: rate, moments, quantiles, mixing measures."""

    acceptance_rate: float
    n_states: int
    n_summarized: int
    burn_in: float
    means: np.ndarray
    quantiles: np.ndarray  # rows: 2.5 / 50 / 97.5 percent
    lag1_autocorr: np.ndarray
    ess: np.ndarray

    def as_text(self) -> str:
        lines = [
            f"acceptance_rate: {float(self.acceptance_rate)!r}",
            f"states: {self.n_states}",
            f"summarized_states: {self.n_summarized}",
            f"burn_in_fraction: {float(self.burn_in)!r}",
        ]
        for j in range(self.means.size):
            name = f"theta_{j + 1}"
            lines.append(f"{name}.mean: {float(self.means[j])!r}")
            lines.append(f"{name}.q2.5: {float(self.quantiles[0, j])!r}")
            lines.append(f"{name}.q50: {float(self.quantiles[1, j])!r}")
            lines.append(f"{name}.q97.5: {float(self.quantiles[2, j])!r}")
            lines.append(f"{name}.lag1_autocorr: {float(self.lag1_autocorr[j])!r}")
            lines.append(f"{name}.ess: {float(self.ess[j])!r}")
        return "\n".join(lines) + "\n"


def diagnostics(chain: ChainOutput, burn_in: float = 0.1) -> Diagnostics:
    """Acceptance rate, per-coordinate summaries, autocorrelation and ESS."""
    start = _burn_start(chain.states.shape[0], burn_in)
    kept = chain.states[start:]
    p = chain.param_dim
    means = kept.mean(axis=0)
    quantiles = np.quantile(kept, [0.025, 0.5, 0.975], axis=0)
    lag1 = np.empty(p)
    ess = np.empty(p)
    for j in range(p):
        col = kept[:, j]
        centered = col - col.mean()
        denom = float(centered @ centered)
        if denom <= 0.0 or col.size < 2:
            lag1[j] = 0.0
            ess[j] = 1.0
        else:
            lag1[j] = float(centered[:-1] @ centered[1:]) / denom
            ess[j] = effective_sample_size(col)
    return Diagnostics(
        acceptance_rate=chain.acceptance_rate,
        n_states=chain.states.shape[0],
        n_summarized=kept.shape[0],
        burn_in=burn_in,
        means=means,
        quantiles=quantiles,
        lag1_autocorr=lag1,
        ess=ess,
    )


def verify_proposition1(surrogate: SurrogateModel, s_obs: float, grid=None, panels: int = 10**4) -> float:
    """Quadrature check of the closed-form scalar proposal kernel.

    For a scalar constant-variance surrogate, the cumulative integral
    of f'(t) (s_obs - f(t)) / sigma^2 from the grid start must equal
    -(f(theta) - s_obs)^2 / (2 sigma^2) up to the additive constant
    fixed at the first grid point. Returns the max abs discrepancy over
    the grid.
    """
    if surrogate.param_dim != 1:
        raise ValueError("the closed form exists for scalar surrogates only")
    if surrogate.variance_matrix is not None:
        sigma2 = float(surrogate.variance_matrix[0, 0])
    else:
        vs = surrogate.variance_surfaces[0]
        if vs.kind != "constant":
            raise ValueError("needs a constant-variance surrogate")
        sigma2 = float(vs.constant_value)
    if grid is None:
        lo, hi = surrogate.domain[0]
        grid = np.linspace(lo, hi, panels + 1)
    grid = np.asarray(grid, dtype=np.float64)
    spline = surrogate.forward_spline
    f = spline.value(grid)
    fp = spline.derivative(grid)
    s0 = float(s_obs)
    integrand = fp * (s0 - f) / sigma2
    lhs = cumulative_simpson(integrand, x=grid, initial=0.0)
    rhs = -((f - s0) ** 2) / (2.0 * sigma2)
    rhs = rhs - rhs[0]
    return float(np.abs(lhs - rhs).max())
