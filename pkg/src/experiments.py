"""
Experiment drivers behind the bench-* commands.

Each driver takes an ExperimentConfig, returns a pandas DataFrame (one CSV) and
a summary DataFrame with the fitted slopes or rates, and prints progress the
same way the other scripts do.
"""
import logging
import os
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.config import TIMING_REPS
from src.coupling import (
    build_coupling_system, complexity_eta, coupling_ratio, decentralized_jacobian, solve_coupling_central,
    time_pipelines,
)
from src.distnet import distributed_total_jacobian, fitted_rate, rate_bound, run, setup
from src.errors import SensitivityError
from src.localdiff import compute_local_jacobians
from src.model import generate_chain, generate_random
from src.schemas import ExperimentConfig
from src.solver import solve

logger = logging.getLogger(__name__)

CHAIN_STIFFNESS = (0.2, 0.6, 0.9)


def write_csv(df: pd.DataFrame, path: str, config: ExperimentConfig):
    """CSV with a leading '# config-hash:' provenance line."""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config-hash: {config.config_hash()}\n")
        df.to_csv(fh, index=False)


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def fit_slope(x, y) -> Optional[float]:
    """Least-squares slope of log(y) against log(x) over the positive points."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return None
    return float(stats.linregress(np.log(x[keep]), np.log(y[keep])).slope)


def _setting(config: ExperimentConfig, name: str, default):
    return type(default)(config.settings.get(name, default))


# ---------------------------------------------------------------------------
# Timing sweeps
# ---------------------------------------------------------------------------

def experiment_scaling_N(config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Central vs decentralized wall-clock for growing N at a fixed number of coupling rows."""
    n = _setting(config, "n", 5)
    l = _setting(config, "l", 2)
    n_lambda = _setting(config, "lambda", 2)
    parallel = bool(config.settings.get("parallel_local", False))
    threads = config.settings.get("threads")
    rows = []
    for N in (int(v) for v in config.sweep):
        lam = n_lambda if N >= 2 else 0
        for seed in config.seeds:
            print(f"🔍 scaling-N: N={N}, lambda={lam}, seed={seed}")
            try:
                problem = generate_random(N, n, l=l, n_eq=lam, seed=seed)
                solution = solve(problem, tol=config.tol)
                timings = time_pipelines(problem, solution, config.repetitions, parallel, threads)
            except SensitivityError as e:
                print(f"⚠️ skipped N={N} seed={seed}: {e}")
                continue
            rho = coupling_ratio(problem)
            row = {"N": N, "n": n, "l": l, "lambda": lam, "seed": seed, "rho": rho, **timings,
                   "speedup": timings["t_central_s"] / timings["t_decentralized_s"],
                   "eta_model": complexity_eta(rho, N)}
            rows.append(row)
    df = pd.DataFrame(rows)
    summary = pd.DataFrame([{"quantity": "log-log slope of speedup vs N",
                             "value": fit_slope(df["N"], df["speedup"]) if len(df) else None}])
    print(f"✅ scaling-N: {len(df)} rows")
    return df, summary


def experiment_scaling_rho(config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Speedup against the coupling ratio ρ at fixed N and n + l. The number of
    coupling rows is Λ = round(ρ N (n + l)); both speedup and 1/η are
    normalized by their value at the first sweep point (ρ = 0.02 by default).
    """
    N = _setting(config, "N", 20)
    n = _setting(config, "n", 4)
    l = _setting(config, "l", 1)
    rows = []
    for rho_target in config.sweep:
        n_lambda = max(1, int(round(rho_target * N * (n + l))))
        for seed in config.seeds:
            print(f"🔍 scaling-rho: rho={rho_target:g}, lambda={n_lambda}, seed={seed}")
            try:
                problem = generate_random(N, n, l=l, n_ineq=n_lambda, seed=seed)
                solution = solve(problem, tol=config.tol)
                timings = time_pipelines(problem, solution, config.repetitions)
            except SensitivityError as e:
                print(f"⚠️ skipped rho={rho_target:g} seed={seed}: {e}")
                continue
            rho = coupling_ratio(problem)
            rows.append({"rho_target": rho_target, "rho": rho, "N": N, "n": n, "l": l, "lambda": n_lambda,
                         "seed": seed, **timings,
                         "speedup": timings["t_central_s"] / timings["t_decentralized_s"],
                         "eta_model": complexity_eta(rho, N)})
    df = pd.DataFrame(rows)
    if len(df):
        reference = df[df["rho_target"] == config.sweep[0]]
        base_speedup = reference["speedup"].mean() if len(reference) else df["speedup"].iloc[0]
        base_eta = reference["eta_model"].mean() if len(reference) else df["eta_model"].iloc[0]
        df["speedup_normalized"] = df["speedup"] / base_speedup
        df["eta_inverse_normalized"] = base_eta / df["eta_model"]
    summary = pd.DataFrame([
        {"quantity": "log-log slope of speedup vs rho",
         "value": fit_slope(df["rho"], df["speedup"]) if len(df) else None},
        {"quantity": "log-log slope of 1/eta vs rho",
         "value": fit_slope(df["rho"], 1.0 / df["eta_model"]) if len(df) else None},
    ])
    print(f"✅ scaling-rho: {len(df)} rows")
    return df, summary


# ---------------------------------------------------------------------------
# Distributed convergence
# ---------------------------------------------------------------------------

def convergence_problem(seed: int, N: int = 50, n: int = 5):
    """N subproblems with l = 2, k = 2, each in two chained equality coupling rows."""
    return generate_random(N, n, l=2, k=2, n_eq=N - 1, structure="chain", seed=seed)


def experiment_convergence(config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-round relative errors of the distributed scheme for every ω in the
    sweep. Rows with node = -1 hold the global error; the others hold the
    error over the constraints each node owns.
    """
    N = _setting(config, "N", 50)
    n = _setting(config, "n", 5)
    rounds = _setting(config, "rounds", 50)
    rows, fits = [], []
    for seed in config.seeds:
        print(f"🔍 convergence: seed={seed}")
        try:
            problem = convergence_problem(seed, N, n)
            solution = solve(problem, tol=config.tol)
            local = compute_local_jacobians(problem, solution)
            y_star = solve_coupling_central(build_coupling_system(problem, solution, local))
        except SensitivityError as e:
            print(f"⚠️ skipped seed={seed}: {e}")
            continue
        for omega in (int(v) for v in config.sweep):
            try:
                network = setup(problem, solution, local, omega, seed=seed)
            except SensitivityError as e:
                print(f"⚠️ skipped seed={seed} omega={omega}: {e}")
                continue
            alpha = rate_bound(network).alpha
            err0 = float(np.abs(network.y - y_star).max())
            errors = [err0]
            rows += _error_rows(network, y_star, err0, seed, omega, 0, alpha)
            for t in range(1, rounds + 1):
                log = network.round()
                err = float(np.abs(network.y - y_star).max())
                errors.append(err)
                rows += _error_rows(network, y_star, err0, seed, omega, t, alpha)
                if log.change_inf <= config.tol:
                    break
            fits.append({"seed": seed, "omega": omega, "alpha": alpha, "fitted_rate": fitted_rate(errors)})
    df = pd.DataFrame(rows)
    fit_df = pd.DataFrame(fits)
    summary = pd.DataFrame()
    if len(fit_df):
        summary = fit_df.groupby("omega").agg(
            fitted_rate_median=("fitted_rate", "median"),
            alpha_median=("alpha", "median"),
        ).reset_index()
        summary["monotone_fraction"] = _monotone_fraction(fit_df)
    print(f"✅ convergence: {len(fit_df)} runs")
    return df, summary


def _error_rows(network, y_star, err0, seed, omega, t, alpha):
    scale = err0 if err0 > 0 else 1.0
    y = network.y
    out = [{"seed": seed, "omega": omega, "t": t, "node": -1,
            "err_rel": float(np.abs(y - y_star).max()) / scale,
            "alpha_bound_t": float(np.power(alpha, t))}]
    for node in network.nodes:
        if not node.owned:
            continue
        err = float(np.abs(y[node.owned] - y_star[node.owned]).max()) / scale
        out.append({"seed": seed, "omega": omega, "t": t, "node": node.node, "err_rel": err,
                    "alpha_bound_t": float(np.power(alpha, t))})
    return out


def _monotone_fraction(fit_df: pd.DataFrame) -> float:
    """Share of seeds whose fitted rate is non-increasing in ω."""
    ok = total = 0
    for _, group in fit_df.groupby("seed"):
        rates = group.sort_values("omega")["fitted_rate"].fillna(0.0).to_numpy()
        total += 1
        ok += bool(np.all(np.diff(rates) <= 1e-12))
    return ok / total if total else float("nan")


def experiment_chain_decay(config: ExperimentConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    One aggregation round from a zero start on time-coupled chains, per ω and
    coupling stiffness; reports percentiles of the per-node total-Jacobian
    error against the central result.
    """
    T = _setting(config, "T", 40)
    n = _setting(config, "n", 2)
    stiffness = config.settings.get("stiffness", list(CHAIN_STIFFNESS))
    rows = []
    for buffer in stiffness:
        for seed in config.seeds:
            print(f"🔍 chain-decay: stiffness={buffer}, seed={seed}")
            try:
                problem = generate_chain(T, n, buffer=float(buffer), seed=seed)
                solution = solve(problem, tol=config.tol)
                reference, _, _, local = decentralized_jacobian(problem, solution)
            except SensitivityError as e:
                print(f"⚠️ skipped stiffness={buffer} seed={seed}: {e}")
                continue
            zero = np.zeros((problem.n_coupling, problem.params.total))
            for omega in (int(v) for v in config.sweep):
                network = setup(problem, solution, local, omega, y0=zero)
                run(network, max_rounds=1)
                approx = distributed_total_jacobian(network, local)
                errors = []
                for exact, estimate in zip(reference.blocks, approx.blocks):
                    scale = max(float(np.abs(exact).max()), 1e-300)
                    errors.append(float(np.abs(estimate - exact).max()) / scale)
                rows.append({"stiffness": float(buffer), "seed": seed, "omega": omega,
                             "err_median": float(np.median(errors)),
                             "err_p10": float(np.percentile(errors, 10)),
                             "err_p90": float(np.percentile(errors, 90))})
    df = pd.DataFrame(rows)
    fits = []
    for buffer, group in (df.groupby("stiffness") if len(df) else []):
        med = group.groupby("omega")["err_median"].median()
        keep = med > 1e-14
        slope = None
        if keep.sum() >= 2:
            slope = float(stats.linregress(med.index[keep], np.log(med[keep])).slope)
        fits.append({"stiffness": buffer, "log_linear_slope": slope})
    summary = pd.DataFrame(fits)
    print(f"✅ chain-decay: {len(df)} rows")
    return df, summary


EXPERIMENTS = {
    "scaling-N": experiment_scaling_N,
    "scaling-rho": experiment_scaling_rho,
    "convergence": experiment_convergence,
    "chain-decay": experiment_chain_decay,
}


def run_experiment(config: ExperimentConfig, output: Optional[str] = None):
    df, summary = EXPERIMENTS[config.kind](config)
    logger.info("experiment %s finished with %d rows (config %s)", config.kind, len(df), config.config_hash()[:12])
    path = output or config.output
    if path:
        write_csv(df, path, config)
        print(f"📄 wrote {path}")
    if len(summary):
        print(summary.to_markdown(index=False))
    return df, summary


def default_config(kind: str, **overrides) -> ExperimentConfig:
    sweeps = {
        "scaling-N": [2, 5, 10, 20, 50, 100, 200],
        "scaling-rho": [0.02, 0.04, 0.08, 0.16, 0.32],
        "convergence": [0, 1, 2, 3],
        "chain-decay": [0, 1, 2, 3, 4, 5, 6],
    }
    values = {"kind": kind, "sweep": sweeps[kind], "repetitions": TIMING_REPS}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)
