"""Desk-scale benchmark studies for the four built-in models.

Each benchmark wires the full pipeline (pilot, fit, tolerance, chain)
and writes plot-ready CSV bundles; the functions also return their
results so the acceptance tests can assert on them directly. Scales
are chosen to finish in minutes on one core while keeping the
comparisons meaningful:

- coalescent: relative posterior-quantile differences against a
  tree-marginalised reference posterior, with a matched-budget
  rejection baseline.
- gamma: posterior means and density grid against a quadrature of the
  tractable likelihood on a fixed reference sample.
- gk: credible-interval coverage over prior-drawn replicate datasets.
- pedigree: sign Bayes factors for the bundled toy tree's two SNPs.
"""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .inference import (
    ChainConfig,
    DistanceSpec,
    ProposalQL,
    abc_mcmc,
    abc_rejection,
    diagnostics,
    epsilon_for_acceptance_rate,
    log_bayes_factor,
    select_epsilon,
)
from .errors import OutsideImage
from .models import (
    coalescent_parametric_posterior,
    get_model,
    gk_sample,
    gk_statistics,
    load_genotypes,
    load_pedigree,
    pedigree_statistics,
)
from .numerics import RandomStream
from .surrogate import PilotDesign, fit_surrogate, run_pilot

__all__ = [
    "benchmark_coalescent",
    "benchmark_gamma",
    "benchmark_gk",
    "benchmark_pedigree",
    "gamma_posterior_quadrature",
    "gamma_reference_sample",
    "run_benchmark",
    "toy_pedigree_files",
]

DEFAULT_SEED = 20240601

# stream-id blocks: far above lattice ids and the sampler streams
_DATA_STREAM = 1 << 52
_ORACLE_STREAM = (1 << 52) + 1000


def toy_pedigree_files() -> tuple[Path, Path]:
    """Paths of the bundled toy pedigree and genotype tables."""
    data = resources.files("qlabc") / "data"
    return Path(str(data / "toy_pedigree.tsv")), Path(str(data / "toy_genotypes.tsv"))


def _write_csv(path: Path, header: list[str], rows) -> None:
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    tmp.replace(path)


def _observation_init(surrogate, s_obs) -> np.ndarray | str:
    """Starting point: the fitted inverse when it exists, else the
    lattice node with the nearest fitted statistic.

    Strong-signal observations can exceed the fitted mean surface's
    reach (the image is bounded even when the box is wide); the
    fallback is data-driven and never touches the generating truth.
    """
    try:
        return surrogate.inverse(s_obs)
    except OutsideImage:
        _, idx = surrogate._kdtree.query(np.asarray(s_obs, dtype=np.float64))
        return surrogate.lattice[int(idx)]


def _chain_with_fallback_init(model, prop, dist, iterations, epsilon, master_seed):
    cfg = ChainConfig(
        iterations=iterations,
        epsilon=epsilon,
        master_seed=master_seed,
        init=_observation_init(prop.surrogate, dist.s_obs),
    )
    return abc_mcmc(model, model.prior, prop, dist, cfg)


def _density_quantiles(grid: np.ndarray, density: np.ndarray, probs) -> np.ndarray:
    steps = np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * steps)])
    cdf /= cdf[-1]
    return np.interp(probs, cdf, grid)


# -- coalescent --------------------------------------------------------------


def benchmark_coalescent(
    output_dir,
    theta_primes=(2.0, 4.0, 6.0, 8.0, 10.0),
    iterations: int = 50000,
    pilot_points: int = 1000,
    oracle_draws: int = 10**5,
    quantile_rule: float = 0.10,
    seed: int = DEFAULT_SEED,
) -> dict:
    """Relative quantile differences vs the tree-marginalised posterior.

    For each generating rate, one observed segregating-site count is
    simulated, the reference posterior is computed by marginalising the
    Poisson likelihood over simulated tree lengths, and both the
    quasi-likelihood chain and a rejection baseline (same simulation
    budget, same quantile rule on its own prior-predictive distances)
    are compared to it on the rate scale at the 2.5/50/97.5% quantiles.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_seq = 100
    model = get_model("coalescent", sample_size=n_seq)
    design = PilotDesign(model.spec.param_box, pilot_points)
    surrogate = fit_surrogate(run_pilot(design, model, seed), "smooth")
    prop = ProposalQL(surrogate)
    probs = (0.025, 0.5, 0.975)

    rows = []
    results = []
    for i, tp in enumerate(theta_primes):
        theta = np.log(tp)
        data_rng = RandomStream(seed, _DATA_STREAM + i).generator
        s_log = model.simulate(np.array([theta]), data_rng)[0][0]
        s_count = int(round(np.exp(s_log) - 1.0))
        s_obs = np.array([np.log(s_count + 1.0)])
        dist = DistanceSpec(s_obs)

        grid, density = coalescent_parametric_posterior(
            s_count,
            n_seq,
            lambda r: np.exp(-r),
            oracle_draws,
            RandomStream(seed, _ORACLE_STREAM + i).generator,
        )
        q_oracle = _density_quantiles(grid, density, probs)

        eps = select_epsilon(
            prop, model, quantile_rule, 1000, dist, RandomStream(seed, _DATA_STREAM + 100 + i)
        )
        cfg = ChainConfig(iterations=iterations, epsilon=eps, master_seed=seed + i)
        chain = abc_mcmc(model, model.prior, prop, dist, cfg)
        burn = chain.states.shape[0] // 10
        rates_ql = np.exp(chain.states[burn:, 0])
        q_ql = np.quantile(rates_ql, probs)

        rej_thetas, rej_rhos = abc_rejection(
            model,
            model.prior,
            np.inf,
            iterations,
            dist,
            RandomStream(seed, _DATA_STREAM + 200 + i),
        )
        keep = rej_rhos <= np.quantile(rej_rhos, quantile_rule)
        q_rej = np.quantile(np.exp(rej_thetas[keep, 0]), probs)

        entry = {
            "theta_prime": tp,
            "s_count": s_count,
            "epsilon": eps,
            "acceptance": chain.acceptance_rate,
            "oracle_quantiles": q_oracle,
            "ql_quantiles": q_ql,
            "rejection_quantiles": q_rej,
            "ql_rel_diff": (q_ql - q_oracle) / q_oracle,
            "rejection_rel_diff": (q_rej - q_oracle) / q_oracle,
        }
        results.append(entry)
        for method, quants in (("abc-ql", q_ql), ("abc-rejection", q_rej)):
            for p, q, q0 in zip(probs, quants, q_oracle):
                rows.append([method, float(tp), float(p), float(q), float(q0), float((q - q0) / q0)])

    _write_csv(
        out / "relative_differences.csv",
        ["method", "theta_prime", "quantile", "Q", "Q0", "rel_diff"],
        rows,
    )
    return {"results": results, "bundle": out}


# -- gamma -------------------------------------------------------------------


def gamma_reference_sample() -> np.ndarray:
    """Fixed positive sample of 10 with log mean -0.12 and log sd -0.26.

    The quadrature oracle needs a full dataset behind the two observed
    statistics. To keep it representative of the generating process
    (unit exponential), draw many unit-exponential samples with a fixed
    stream, keep the one whose statistics come closest, and apply the
    tiny affine correction that makes both statistics exact. The
    correction is a few percent, so the sample stays typical in the
    features the statistics do not pin down (e.g. its log-moments).
    """
    target_mean = np.exp(-0.12)
    target_sd = np.exp(-0.26)
    rng = RandomStream(424242, 0).generator
    best, best_gap = None, np.inf
    for _ in range(20000):
        y = rng.exponential(1.0, 10)
        gap = np.hypot(np.log(y.mean()) + 0.12, np.log(y.std(ddof=1)) + 0.26)
        if gap < best_gap:
            best, best_gap = y, gap
    z = (best - best.mean()) / best.std(ddof=1)
    y = target_mean + target_sd * z
    if y.min() <= 0:
        raise AssertionError("reference sample must be positive")
    return y


def gamma_posterior_quadrature(y: np.ndarray, grid_size: int = 400, box=(-2.0, 2.0)) -> dict:
    """Midpoint-rule posterior of the gamma model on a square grid.

    Standard-normal priors on both coordinates; returns cell-centre
    axes, the normalised density and its marginal means.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    lo, hi = box
    step = (hi - lo) / grid_size
    centers = lo + step * (np.arange(grid_size) + 0.5)
    t1 = centers[:, None]
    t2 = centers[None, :]
    shape = np.exp(t1)
    sum_log_y = float(np.log(y).sum())
    sum_y = float(y.sum())
    loglik = (
        (shape - 1.0) * sum_log_y
        - sum_y * np.exp(t2) * np.ones_like(shape)
        - n * gammaln(shape) * np.ones_like(t2)
        + n * shape * t2
    )
    logprior = -0.5 * (t1**2 + t2**2)
    logpost = loglik + logprior
    logpost -= logpost.max()
    density = np.exp(logpost)
    mass = density.sum() * step * step
    density /= mass
    marg1 = density.sum(axis=1) * step
    marg2 = density.sum(axis=0) * step
    mean1 = float((centers * marg1).sum() * step)
    mean2 = float((centers * marg2).sum() * step)
    return {"centers": centers, "density": density, "means": np.array([mean1, mean2])}


def benchmark_gamma(
    output_dir,
    iterations: int = 10**5,
    pilot_points: int = 100,
    quantile_rule: float = 0.10,
    seed: int = DEFAULT_SEED,
    grid_size: int = 400,
) -> dict:
    """Posterior means and density grid vs the quadrature oracle."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_model("gamma", sample_size=10)
    design = PilotDesign(model.spec.param_box, pilot_points)
    surrogate = fit_surrogate(run_pilot(design, model, seed), "smooth")
    prop = ProposalQL(surrogate)
    s_obs = np.array([-0.12, -0.26])
    dist = DistanceSpec(s_obs)
    eps = select_epsilon(prop, model, quantile_rule, 2000, dist, RandomStream(seed, _DATA_STREAM))
    cfg = ChainConfig(iterations=iterations, epsilon=eps, master_seed=seed)
    chain = abc_mcmc(model, model.prior, prop, dist, cfg)
    diag = diagnostics(chain)

    oracle = gamma_posterior_quadrature(gamma_reference_sample(), grid_size=grid_size)
    burn = chain.states.shape[0] // 10
    kept = chain.states[burn:]
    edges = np.linspace(-2.0, 2.0, grid_size + 1)
    hist, _, _ = np.histogram2d(kept[:, 0], kept[:, 1], bins=[edges, edges], density=True)

    centers = oracle["centers"]
    rows = []
    for i in range(grid_size):
        for j in range(grid_size):
            rows.append(
                [
                    float(centers[i]),
                    float(centers[j]),
                    float(oracle["density"][i, j]),
                    float(hist[i, j]),
                ]
            )
    _write_csv(out / "contour_grid.csv", ["theta_1", "theta_2", "oracle_density", "abcql_density"], rows)
    _write_csv(
        out / "means.csv",
        ["estimate", "theta_1", "theta_2"],
        [
            ["abc-ql", float(diag.means[0]), float(diag.means[1])],
            ["oracle", float(oracle["means"][0]), float(oracle["means"][1])],
        ],
    )
    return {
        "chain_means": diag.means,
        "oracle_means": oracle["means"],
        "epsilon": eps,
        "acceptance": chain.acceptance_rate,
        "diag": diag,
        "chain": chain,
        "surrogate": surrogate,
        "model": model,
        "prop": prop,
        "dist": dist,
        "bundle": out,
    }


# -- g-and-k -----------------------------------------------------------------


def benchmark_gk(
    output_dir,
    replicates: int = 10,
    sample_size: int = 1000,
    iterations: int = 50000,
    pilot_points: int = 10,
    quantile_rule: float = 0.30,
    seed: int = DEFAULT_SEED,
) -> dict:
    """Credible-interval coverage over prior-drawn replicate datasets.

    One pilot serves every replicate (it never sees the data). Each
    replicate draws a true parameter from the prior, simulates a
    dataset, runs the chain, and records coverage of the marginal 95%
    intervals plus squared errors of the posterior means.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_model("gk", sample_size=sample_size)
    design = PilotDesign(model.spec.param_box, pilot_points)
    surrogate = fit_surrogate(run_pilot(design, model, seed), "smooth")
    prop = ProposalQL(surrogate)

    rows = []
    covered = np.zeros((replicates, 4), dtype=bool)
    sq_err = np.zeros((replicates, 4))
    for r in range(replicates):
        rng = RandomStream(seed, _DATA_STREAM + r).generator
        theta_true = model.prior.sample(rng)
        s_obs = gk_statistics(gk_sample(theta_true, sample_size, rng))
        dist = DistanceSpec(s_obs)
        eps = select_epsilon(
            prop, model, quantile_rule, 500, dist, RandomStream(seed, _DATA_STREAM + 500 + r)
        )
        chain = _chain_with_fallback_init(model, prop, dist, iterations, eps, seed + r)
        diag = diagnostics(chain)
        for j in range(4):
            covered[r, j] = diag.quantiles[0, j] <= theta_true[j] <= diag.quantiles[2, j]
            sq_err[r, j] = (diag.means[j] - theta_true[j]) ** 2
            rows.append(
                [
                    r,
                    f"theta_{j + 1}",
                    float(theta_true[j]),
                    float(diag.means[j]),
                    float(diag.quantiles[0, j]),
                    float(diag.quantiles[2, j]),
                    int(covered[r, j]),
                    float(sq_err[r, j]),
                ]
            )
    _write_csv(
        out / "coverage_mse.csv",
        ["replicate", "coordinate", "theta_true", "post_mean", "q2.5", "q97.5", "covered", "sq_error"],
        rows,
    )
    coverage_counts = covered.sum(axis=0)
    _write_csv(
        out / "summary.csv",
        ["coordinate", "covered_of_replicates", "mse"],
        [
            [f"theta_{j + 1}", int(coverage_counts[j]), float(sq_err[:, j].mean())]
            for j in range(4)
        ],
    )
    return {
        "covered": covered,
        "coverage_counts": coverage_counts,
        "mse": sq_err.mean(axis=0),
        "bundle": out,
    }


# -- pedigree ----------------------------------------------------------------


def benchmark_pedigree(
    output_dir,
    repetitions: int = 10,
    iterations: int = 20000,
    pilot_points: int = 30,
    box=((-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0)),
    seed: int = DEFAULT_SEED,
) -> dict:
    """Sign Bayes factors for the toy tree's SNPs over repeated chains.

    The tolerance targets a 20-40% acceptance band per SNP; the
    constant covariance mode is used (the log-odds statistics'
    residual spread is stable across the box). Coefficient order is
    (het, aa, AA).
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ped_path, geno_path = toy_pedigree_files()
    ped = load_pedigree(ped_path)
    model = get_model("pedigree", pedigree=ped, box=box)
    genotypes = load_genotypes(geno_path, ped)
    design = PilotDesign(model.spec.param_box, pilot_points)
    surrogate = fit_surrogate(run_pilot(design, model, seed), "constant")
    prop = ProposalQL(surrogate)

    coef_names = ("het", "aa", "AA")
    rows = []
    log_bfs = {}
    acceptance = {}
    for snp, g_obs in sorted(genotypes.items()):
        s_obs = pedigree_statistics(ped.phenotypes, g_obs)
        dist = DistanceSpec(s_obs=s_obs, kind="pedigree-weighted", observed_genotypes=g_obs)
        theta0 = _observation_init(surrogate, s_obs)
        eps = epsilon_for_acceptance_rate(
            model, model.prior, prop, dist, master_seed=seed, target=(0.2, 0.4), init=theta0
        )
        bfs = np.empty((repetitions, 3))
        rates = np.empty(repetitions)
        for rep in range(repetitions):
            chain = _chain_with_fallback_init(
                model, prop, dist, iterations, eps, seed + 101 + rep
            )
            rates[rep] = chain.acceptance_rate
            for j in range(3):
                bfs[rep, j] = log_bayes_factor(chain, j)
                rows.append([snp, rep, coef_names[j], float(bfs[rep, j])])
        log_bfs[snp] = bfs
        acceptance[snp] = rates
    _write_csv(out / "log_bf.csv", ["snp", "repetition", "coefficient", "log_bf"], rows)
    return {"log_bfs": log_bfs, "acceptance": acceptance, "bundle": out}


_BENCHMARKS = {
    "coalescent": benchmark_coalescent,
    "gamma": benchmark_gamma,
    "gk": benchmark_gk,
    "pedigree": benchmark_pedigree,
}


def run_benchmark(name: str, output_dir, seed: int | None = None) -> dict:
    if name not in _BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(_BENCHMARKS)}")
    kwargs = {} if seed is None else {"seed": int(seed)}
    result = _BENCHMARKS[name](output_dir, **kwargs)
    print(f"benchmark {name}: bundle written to {result['bundle']}")
    return result
