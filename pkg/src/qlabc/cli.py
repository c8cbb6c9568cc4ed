"""Command-line front end: pilot -> fit -> epsilon -> sample, plus baselines.

Subcommands: pilot, fit, epsilon, sample, reject, is, benchmark,
verify. One JSON config file drives a run; only seed, iterations,
epsilon and output dir can be overridden on the command line, so a
config file plus the package version pins a run completely. All file
writes go through a temp-file-and-rename so partial outputs never
appear under the final name.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import (
    AllWeightsZero,
    ConfigError,
    InitFailed,
    NonConverged,
    OutsideImage,
    QlabcError,
    SchemaMismatch,
)
from .inference import (
    EPSILON_STREAM,
    IS_STREAM,
    REJECTION_STREAM,
    ChainConfig,
    ChainOutput,
    DistanceSpec,
    ProposalQL,
    abc_importance_sampling,
    abc_mcmc,
    abc_rejection,
    diagnostics,
    epsilon_for_acceptance_rate,
    select_epsilon,
    verify_proposition1,
)
from .numerics import RandomStream
from .surrogate import (
    check_image_coverage,
    fit_surrogate,
    load_pilot_csv,
    load_surrogate,
    run_pilot,
    save_pilot_csv,
    save_surrogate,
)

__all__ = ["main", "run_pipeline"]

PROPOSITION1_TOLERANCE = 1e-6


def _write_text(path: Path, text: str) -> None:
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _prepare_output_dir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    if not out.exists():
        out.mkdir(parents=True)
        print(f"created output directory {out}")
    cfg.dump(out / "config_resolved.json")
    return out


def write_trace_csv(chain: ChainOutput, path) -> None:
    p = chain.param_dim
    header = (
        ["iter"]
        + [f"theta_{j + 1}" for j in range(p)]
        + ["accepted", "rho", "logq_fwd", "logq_rev"]
    )
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(chain.states.shape[0]):
            row = [(k + 1) * chain.thinning]
            row += [repr(float(v)) for v in chain.states[k]]
            row.append(int(chain.accepted[k]))
            row += [
                repr(float(chain.distances[k])),
                repr(float(chain.logq_fwd[k])),
                repr(float(chain.logq_rev[k])),
            ]
            writer.writerow(row)
    tmp.replace(path)


def _quantile_csv(diag, path) -> None:
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coordinate", "q2.5", "q50", "q97.5"])
        for j in range(diag.means.size):
            writer.writerow(
                [f"theta_{j + 1}"]
                + [repr(float(diag.quantiles[i, j])) for i in range(3)]
            )
    tmp.replace(path)


# -- command implementations -------------------------------------------------


def cmd_pilot(cfg: RunConfig) -> Path:
    out = _prepare_output_dir(cfg)
    model = cfg.build_model()
    design = cfg.pilot_design(model)
    seed = int(cfg["pilot"]["seed"])
    data = run_pilot(design, model, seed)
    path = out / "pilot.csv"
    save_pilot_csv(data, path)
    print(f"pilot: {data.thetas.shape[0]} rows (seed {seed}) -> {path}")
    return path


def cmd_fit(cfg: RunConfig, pilot_path=None) -> Path:
    out = _prepare_output_dir(cfg)
    model = cfg.build_model()
    design = cfg.pilot_design(model)
    pilot_path = Path(pilot_path) if pilot_path else out / "pilot.csv"
    data = load_pilot_csv(
        pilot_path, design, master_seed=int(cfg["pilot"]["seed"]), model_name=model.name
    )
    surrogate = fit_surrogate(data, cfg["fit"]["variance_mode"])

    lines = [f"model: {model.name}", f"variance_mode: {cfg['fit']['variance_mode']}"]
    for j, r2 in enumerate(surrogate.fit_report.get("r_squared", [])):
        lines.append(f"r_squared.s_{j + 1}: {r2!r}")
    if surrogate.param_dim == 1:
        mono = surrogate.fit_report.get("monotone")
        lines.append(f"monotone: {mono}")
        flat = surrogate.fit_report.get("flat_region")
        if flat:
            lines.append(f"flat_region: [{flat[0]!r}, {flat[1]!r}]")
        near_zero = _near_zero_derivative_region(surrogate)
        if near_zero:
            lines.append(f"near_zero_derivative_region: [{near_zero[0]!r}, {near_zero[1]!r}]")
    try:
        s_obs, _ = cfg.observed_statistic(model)
    except ConfigError:
        s_obs = None
    if s_obs is not None:
        covered = check_image_coverage(surrogate, s_obs)
        lines.append(f"observed_in_image: {covered}")
        if not covered:
            lines.append("warning: observed statistic outside fitted image; widen the pilot box")
    path = out / "surrogate.json"
    save_surrogate(surrogate, path)
    _write_text(out / "fit_report.txt", "\n".join(lines) + "\n")
    print(f"fit: surrogate -> {path}")
    return path


def _near_zero_derivative_region(surrogate) -> tuple[float, float] | None:
    """Flag where the scalar forward map is flat (statistic uninformative)."""
    lo, hi = surrogate.domain[0]
    grid = np.linspace(lo, hi, 1001)
    deriv = np.array([surrogate._jac_fast(np.array([t]))[0, 0] for t in grid])
    scale = float(np.abs(deriv).max())
    if scale <= 0:
        return (float(lo), float(hi))
    flat = np.abs(deriv) < 0.01 * scale
    if not flat.any():
        return None
    return (float(grid[flat].min()), float(grid[flat].max()))


def resolve_epsilon(cfg: RunConfig, model, prop: ProposalQL, dist: DistanceSpec) -> float:
    section = cfg["epsilon"]
    rule = section["rule"]
    seed = int(cfg["chain"]["seed"])
    if rule == "fixed":
        if section["value"] is None:
            raise ConfigError("epsilon.rule = fixed needs epsilon.value")
        return float(section["value"])
    if rule == "quantile":
        return select_epsilon(
            prop,
            model,
            float(section["quantile"]),
            int(section["calibration_draws"]),
            dist,
            RandomStream(seed, EPSILON_STREAM),
        )
    if rule == "acceptance-rate":
        target = float(section["target_rate"])
        band = (max(target - 0.1, 0.01), min(target + 0.1, 0.99))
        return epsilon_for_acceptance_rate(
            model, model.prior, prop, dist, master_seed=seed, target=band
        )
    raise ConfigError(f"unknown epsilon.rule {rule!r}")


def _build_inference_objects(cfg: RunConfig, surrogate_path, s_obs_arg=None):
    model = cfg.build_model()
    out = cfg.output_dir
    surrogate_path = Path(surrogate_path) if surrogate_path else out / "surrogate.json"
    surrogate = load_surrogate(surrogate_path)
    if surrogate.param_dim != model.spec.param_dim:
        raise ConfigError(
            f"surrogate dimension {surrogate.param_dim} does not match model {model.spec.param_dim}"
        )
    if s_obs_arg is not None:
        s_obs = np.asarray([float(v) for v in s_obs_arg.split(",")])
        genotypes = None
        if cfg.model_name == "pedigree":
            _, genotypes = cfg.observed_statistic(model)
    else:
        s_obs, genotypes = cfg.observed_statistic(model)
    kind = "pedigree-weighted" if cfg.model_name == "pedigree" else "euclidean"
    dist = DistanceSpec(s_obs=s_obs, kind=kind, observed_genotypes=genotypes)
    return model, surrogate, ProposalQL(surrogate), dist


def cmd_epsilon(cfg: RunConfig, surrogate_path=None, s_obs_arg=None) -> float:
    out = _prepare_output_dir(cfg)
    model, _, prop, dist = _build_inference_objects(cfg, surrogate_path, s_obs_arg)
    eps = resolve_epsilon(cfg, model, prop, dist)
    _write_text(out / "epsilon.txt", f"epsilon: {eps!r}\nrule: {cfg['epsilon']['rule']}\n")
    print(f"epsilon: {eps!r} (rule {cfg['epsilon']['rule']})")
    return eps


def cmd_sample(cfg: RunConfig, surrogate_path=None, s_obs_arg=None) -> ChainOutput:
    out = _prepare_output_dir(cfg)
    model, _, prop, dist = _build_inference_objects(cfg, surrogate_path, s_obs_arg)
    eps = resolve_epsilon(cfg, model, prop, dist)
    section = cfg["chain"]
    init = section["init"]
    if not isinstance(init, str):
        init = np.asarray(init, dtype=np.float64)
    chain_cfg = ChainConfig(
        iterations=int(section["iterations"]),
        epsilon=eps,
        master_seed=int(section["seed"]),
        init=init,
        thinning=int(section["thinning"]),
    )
    chain = abc_mcmc(model, model.prior, prop, dist, chain_cfg)
    write_trace_csv(chain, out / "trace.csv")
    diag = diagnostics(chain)
    _write_text(out / "diagnostics.txt", f"epsilon: {eps!r}\n" + diag.as_text())
    _quantile_csv(diag, out / "diagnostics_quantiles.csv")
    print(
        f"sample: {chain.iterations} iterations, acceptance {chain.acceptance_rate:.4f} "
        f"-> {out / 'trace.csv'}"
    )
    return chain


def cmd_reject(cfg: RunConfig, draws: int | None = None, s_obs_arg=None) -> Path:
    out = _prepare_output_dir(cfg)
    model = cfg.build_model()
    if s_obs_arg is not None:
        s_obs = np.asarray([float(v) for v in s_obs_arg.split(",")])
        genotypes = cfg.observed_statistic(model)[1] if cfg.model_name == "pedigree" else None
    else:
        s_obs, genotypes = cfg.observed_statistic(model)
    kind = "pedigree-weighted" if cfg.model_name == "pedigree" else "euclidean"
    dist = DistanceSpec(s_obs=s_obs, kind=kind, observed_genotypes=genotypes)
    section = cfg["epsilon"]
    if section["rule"] != "fixed" or section["value"] is None:
        raise ConfigError("reject needs epsilon.rule = fixed with epsilon.value set")
    n = int(draws) if draws else int(cfg["chain"]["iterations"])
    thetas, rhos = abc_rejection(
        model,
        model.prior,
        float(section["value"]),
        n,
        dist,
        RandomStream(int(cfg["chain"]["seed"]), REJECTION_STREAM),
    )
    path = out / "rejection_samples.csv"
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"theta_{j + 1}" for j in range(thetas.shape[1])] + ["rho"])
        for row, rho in zip(thetas, rhos):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(rho))])
    tmp.replace(path)
    print(f"reject: {thetas.shape[0]} of {n} draws accepted -> {path}")
    return path


def cmd_importance(cfg: RunConfig, surrogate_path=None, draws: int | None = None, s_obs_arg=None) -> Path:
    out = _prepare_output_dir(cfg)
    model, _, prop, dist = _build_inference_objects(cfg, surrogate_path, s_obs_arg)
    eps = resolve_epsilon(cfg, model, prop, dist)
    n = int(draws) if draws else int(cfg["chain"]["iterations"])
    sample = abc_importance_sampling(
        prop, model, eps, n, dist, RandomStream(int(cfg["chain"]["seed"]), IS_STREAM)
    )
    path = out / "importance_samples.csv"
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"theta_{j + 1}" for j in range(sample.thetas.shape[1])] + ["weight", "rho"]
        )
        for row, w, rho in zip(sample.thetas, sample.weights, sample.distances):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(w)), repr(float(rho))])
    tmp.replace(path)
    print(
        f"is: kept {sample.thetas.shape[0]} of {n} draws "
        f"(effective draws {sample.effective_draws():.1f}) -> {path}"
    )
    return path


def cmd_verify(cfg: RunConfig, surrogate_path=None, panels: int = 10**4) -> float:
    out = _prepare_output_dir(cfg)
    model = cfg.build_model()
    if model.spec.param_dim != 1:
        raise ConfigError("the closed-form check needs a one-parameter model")
    if surrogate_path:
        surrogate = load_surrogate(surrogate_path)
    else:
        design = cfg.pilot_design(model)
        data = run_pilot(design, model, int(cfg["pilot"]["seed"]))
        surrogate = fit_surrogate(data, "constant")
    s_obs, _ = cfg.observed_statistic(model)
    err = verify_proposition1(surrogate, float(s_obs[0]), panels=panels)
    ok = err < PROPOSITION1_TOLERANCE
    text = (
        f"max_abs_discrepancy: {err!r}\n"
        f"tolerance: {PROPOSITION1_TOLERANCE!r}\n"
        f"status: {'PASS' if ok else 'FAIL'}\n"
    )
    _write_text(out / "proposition1.txt", text)
    print(f"verify: quadrature vs closed form discrepancy {err:.3e} ({'PASS' if ok else 'FAIL'})")
    if not ok:
        raise NonConverged("quadrature check exceeded tolerance", residual=err)
    return err


def run_pipeline(cfg: RunConfig) -> ChainOutput:
    """Fused pilot -> fit -> sample with the same artifacts as the steps."""
    cmd_pilot(cfg)
    cmd_fit(cfg)
    return cmd_sample(cfg)


def cmd_benchmark(name: str, output_dir: str, seed: int | None = None) -> None:
    from . import benchmarks

    benchmarks.run_benchmark(name, output_dir, seed=seed)


# -- argument parsing --------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", required=True, help="JSON run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override chain seed")
    sub.add_argument("--iterations", type=int, default=None, help="override chain length")
    sub.add_argument("--epsilon", type=float, default=None, help="override tolerance (fixes the rule)")
    sub.add_argument("--output-dir", default=None, help="override output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlabc",
        description="Likelihood-free MCMC with pilot-run quasi-likelihood proposals",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("pilot", "simulate the pilot lattice and write pilot.csv"),
        ("fit", "fit the surrogate from a pilot CSV"),
        ("epsilon", "compute the tolerance per the configured rule"),
        ("sample", "run the ABC-MCMC chain"),
        ("reject", "plain rejection-ABC baseline"),
        ("is", "importance sampling through the proposal"),
        ("verify", "quadrature check of the closed-form scalar proposal"),
    ]:
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        if name in ("fit",):
            sub.add_argument("--pilot", default=None, help="pilot CSV (default <out>/pilot.csv)")
        if name in ("epsilon", "sample", "is", "verify"):
            sub.add_argument("--surrogate", default=None, help="surrogate file (default <out>/surrogate.json)")
        if name in ("epsilon", "sample", "reject", "is"):
            sub.add_argument("--s-obs", default=None, help="observed statistic, comma separated")
        if name in ("reject", "is"):
            sub.add_argument("--draws", type=int, default=None, help="number of simulator draws")
        if name == "verify":
            sub.add_argument("--panels", type=int, default=10**4, help="quadrature panels")

    bench = subs.add_parser("benchmark", help="run a bundled benchmark study")
    bench.add_argument("name", choices=["coalescent", "gamma", "gk", "pedigree"])
    bench.add_argument("--output-dir", default=None, help="bundle directory")
    bench.add_argument("--seed", type=int, default=None, help="master seed override")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        if args.command == "benchmark":
            cmd_benchmark(args.name, args.output_dir or f"benchmark-{args.name}", seed=args.seed)
            return 0
        cfg = load_config(args.config).override(
            seed=args.seed,
            iterations=args.iterations,
            epsilon=args.epsilon,
            output_dir=args.output_dir,
        )
        if args.command == "pilot":
            cmd_pilot(cfg)
        elif args.command == "fit":
            cmd_fit(cfg, pilot_path=args.pilot)
        elif args.command == "epsilon":
            cmd_epsilon(cfg, surrogate_path=args.surrogate, s_obs_arg=args.s_obs)
        elif args.command == "sample":
            cmd_sample(cfg, surrogate_path=args.surrogate, s_obs_arg=args.s_obs)
        elif args.command == "reject":
            cmd_reject(cfg, draws=args.draws, s_obs_arg=args.s_obs)
        elif args.command == "is":
            cmd_importance(
                cfg, surrogate_path=args.surrogate, draws=args.draws, s_obs_arg=args.s_obs
            )
        elif args.command == "verify":
            cmd_verify(cfg, surrogate_path=args.surrogate, panels=args.panels)
        return 0
    except (ConfigError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InitFailed, NonConverged, OutsideImage, AllWeightsZero) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, InitFailed):
            print("hint: pass an explicit chain.init or widen the pilot box", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except QlabcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
