"""Simulation studies: hyperparameter recovery, flexibility sweep, contraction.

All three studies share one pattern: simulate Poisson counts on an areal
graph from a (possibly non-stationary) latent field, fit one or more
candidate models per replicate, and aggregate tau-recovery and
model-comparison metrics into CSV tables.

Seeding uses ``numpy.random.SeedSequence`` spawn keys so that every
replicate is an independent stream derived from the single base seed;
results are identical whatever the worker count.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import AdjacencyGraph, Partition
from .inference import ModelFit, ModelSpec, NonConvergenceError, fit
from .pcprior import PcPriorConfig
from .precision import build_precision, sample_field

# spawn-key prefixes: shared gamma draw, per-replicate data, per-replicate fit
_GAMMA_KEY = 1
_DATA_KEY = 2
_FIT_KEY = 3


@dataclass(frozen=True)
class StudyConfig:
    """One simulation-study setup: generator, candidate models, bookkeeping.

    ``partitions`` are the candidate models as (name, partition) pairs; the
    generator draws its field on ``generator_partition`` with per-sub-region
    log precisions log_tau + gamma, gamma iid N(0, sigma_gamma^2).  If
    ``theta_true`` is given it overrides the log_tau/sigma_gamma draw.
    The generator's gamma is drawn once and shared across replicates unless
    ``redraw_gamma`` is set (each replicate then gets its own gamma).
    """

    graph: AdjacencyGraph
    partitions: tuple
    generator_partition: Partition
    log_tau: float = 0.69
    sigma_gamma: float = 0.2
    theta_true: tuple | None = None
    replicates: int = 10
    intercept: float = 2.0
    base_seed: int = 1
    redraw_gamma: bool = False
    prior_sigma_gamma: float = 0.2
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma_gamma < 0:
            raise ValueError("sigma_gamma must be nonnegative")
        if not self.partitions:
            raise ValueError("at least one candidate partition is required")
        if self.theta_true is not None and (
            len(self.theta_true) != self.generator_partition.n_subregions
        ):
            raise ValueError("theta_true length must match the generator partition")


@dataclass
class StudyResult:
    """Per-replicate rows plus aggregate/table rows, CSV-writable."""

    kind: str
    replicate_rows: list = field(default_factory=list)
    aggregate_rows: list = field(default_factory=list)
    table_rows: list = field(default_factory=list)
    table_name: str = ""

    def write(self, outdir: str) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        written = []
        for name, rows in [("replicates.csv", self.replicate_rows),
                           ("aggregate.csv", self.aggregate_rows),
                           (self.table_name, self.table_rows)]:
            if not name or rows is self.table_rows and not rows:
                continue
            path = os.path.join(outdir, name)
            write_rows_csv(path, rows)
            written.append(path)
        return written


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_rows_csv(path: str, rows: list[dict]) -> None:
    """Write dict rows with floats at 17 significant digits (round-trip safe)."""
    fields: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in fields])


def simulate_dataset(graph: AdjacencyGraph, partition: Partition, log_tau: float,
                     sigma_gamma: float, intercept: float, seed,
                     gamma: np.ndarray | None = None):
    """Simulate counts from the non-stationary generator.

    theta_true = log_tau + gamma with gamma iid N(0, sigma_gamma^2),
    deliberately unconstrained (no centering).  The field is drawn from the
    intrinsic prior with per-component sum-to-zero constraints and counts are
    Poisson(exp(intercept + field)) with unit offsets.

    Returns (counts, theta_true).  gamma/field/count randomness use three
    independent child streams of ``seed``, so the field realization for a
    matched seed does not depend on the partition size (the sigma_gamma = 0
    generator and the stationary one coincide draw-for-draw).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_gamma, rng_field, rng_counts = map(np.random.default_rng, ss.spawn(3))
    p = partition.n_subregions
    if gamma is None:
        gamma = rng_gamma.normal(0.0, sigma_gamma, size=p) if sigma_gamma > 0 else np.zeros(p)
    theta_true = log_tau + np.asarray(gamma, dtype=float)
    prec = build_precision(graph, partition, np.exp(theta_true))
    alpha = sample_field(prec, None, rng_seed=rng_field)
    counts = rng_counts.poisson(np.exp(intercept + alpha))
    return counts.astype(float), theta_true


def _fit_model(config: StudyConfig, counts, partition: Partition, rep: int) -> ModelFit:
    prior = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=config.prior_sigma_gamma,
                          p=partition.n_subregions)
    spec = ModelSpec(graph=config.graph, partition=partition, counts=counts,
                     offsets=np.ones(config.graph.n_areas),
                     area_idx=np.arange(config.graph.n_areas), spatial_prior=prior)
    fit_seed = int(np.random.SeedSequence(
        config.base_seed, spawn_key=(_FIT_KEY, rep)).generate_state(1)[0])
    return fit(spec, seed=fit_seed)


def _model_rows(rep: int, name: str, res: ModelFit | None,
                theta_true=None, extra=None) -> list[dict]:
    """Long-format rows, one per sub-region; fit failure gives a single row."""
    if res is None:
        row = {"replicate": rep, "model": name, "subregion": None,
               "converged": 0}
        row.update(extra or {})
        return [row]
    rows = []
    for k, th in enumerate(res.theta_mode):
        lo = float(np.log(res.tau_lower[k]))
        hi = float(np.log(res.tau_upper[k]))
        row = {
            "replicate": rep, "model": name, "subregion": k, "converged": 1,
            "theta_hat": float(th), "theta_lo": lo, "theta_hi": hi,
            "dic": res.dic, "log_ml": res.log_ml,
        }
        if theta_true is not None:
            row["theta_true"] = float(theta_true[k])
            row["covered"] = int(lo <= theta_true[k] <= hi)
        row.update(extra or {})
        rows.append(row)
    return rows


def _shared_gamma(config: StudyConfig) -> np.ndarray | None:
    if config.redraw_gamma or config.theta_true is not None:
        return None
    if config.sigma_gamma == 0:
        return np.zeros(config.generator_partition.n_subregions)
    rng = np.random.default_rng(
        np.random.SeedSequence(config.base_seed, spawn_key=(_GAMMA_KEY,)))
    return rng.normal(0.0, config.sigma_gamma,
                      size=config.generator_partition.n_subregions)


def _generator_theta(config: StudyConfig):
    """(log_tau, gamma override) consistent with theta_true when given."""
    if config.theta_true is not None:
        return 0.0, np.asarray(config.theta_true, dtype=float)
    return config.log_tau, _shared_gamma(config)


def _replicate_seed(config: StudyConfig, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.base_seed, spawn_key=(_DATA_KEY, rep))


def _map_replicates(worker, config: StudyConfig, payloads):
    """Run replicates possibly in parallel, always aggregated in index order."""
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(worker, payloads))
    return [worker(p) for p in payloads]


# ---- recovery study ----------------------------------------------------


def _recovery_replicate(payload):
    config, rep = payload
    log_tau, gamma = _generator_theta(config)
    counts, theta_true = simulate_dataset(
        config.graph, config.generator_partition, log_tau, config.sigma_gamma,
        config.intercept, _replicate_seed(config, rep), gamma=gamma)
    rows = []
    for name, part in config.partitions:
        truth = theta_true if part.n_subregions == theta_true.size else None
        try:
            res = _fit_model(config, counts, part, rep)
        except NonConvergenceError:
            res = None
        rows.extend(_model_rows(rep, name, res, theta_true=truth))
    return rows


def recovery_study(config: StudyConfig) -> StudyResult:
    """Fit every candidate model to data from the non-stationary generator.

    Aggregates per model: mean estimates, interval coverage of the true
    per-sub-region log precisions (only for models matching the generator's
    partition size), and DIC / log marginal likelihood preference rates
    against the single-precision candidate when one is present.
    """
    payloads = [(config, rep) for rep in range(config.replicates)]
    rep_rows = [r for rows in _map_replicates(_recovery_replicate, config, payloads)
                for r in rows]
    result = StudyResult(kind="recovery", replicate_rows=rep_rows,
                         table_name="table1.csv")

    stationary_names = [n for n, p in config.partitions if p.n_subregions == 1]
    base_name = stationary_names[0] if stationary_names else None
    by_rep_model: dict = {}
    for r in rep_rows:
        by_rep_model.setdefault((r["replicate"], r["model"]), []).append(r)

    for name, part in config.partitions:
        ok_reps, theta_bars, dics, logmls, covers = [], [], [], [], []
        dic_better, logml_better = [], []
        for rep in range(config.replicates):
            rows = by_rep_model.get((rep, name), [])
            if not rows or not rows[0]["converged"]:
                continue
            ok_reps.append(rep)
            theta_bars.append(np.mean([r["theta_hat"] for r in rows]))
            dics.append(rows[0]["dic"])
            logmls.append(rows[0]["log_ml"])
            covers.extend(r["covered"] for r in rows if "covered" in r)
            if base_name is not None and name != base_name:
                base = by_rep_model.get((rep, base_name), [])
                if base and base[0]["converged"]:
                    dic_better.append(int(rows[0]["dic"] < base[0]["dic"]))
                    logml_better.append(int(rows[0]["log_ml"] > base[0]["log_ml"]))
        agg = {
            "model": name,
            "n_subregions": part.n_subregions,
            "n_converged": len(ok_reps),
            "mean_theta_bar": float(np.mean(theta_bars)) if theta_bars else None,
            "mean_dic": float(np.mean(dics)) if dics else None,
            "mean_log_ml": float(np.mean(logmls)) if logmls else None,
            "coverage": float(np.mean(covers)) if covers else None,
            "dic_pref": float(np.mean(dic_better)) if dic_better else None,
            "logml_pref": float(np.mean(logml_better)) if logml_better else None,
        }
        result.aggregate_rows.append(agg)
        result.table_rows.append({k: agg[k] for k in
                                  ("model", "n_subregions", "mean_dic",
                                   "mean_log_ml", "dic_pref", "logml_pref")})
    return result


# ---- flexibility (sigma_gamma) sweep ------------------------------------


def _sweep_replicate(payload):
    config, rep, sigma_values = payload
    log_tau, gamma = _generator_theta(config)
    counts, theta_true = simulate_dataset(
        config.graph, config.generator_partition, log_tau, config.sigma_gamma,
        config.intercept, _replicate_seed(config, rep), gamma=gamma)
    name, part = config.partitions[0]
    rows = []
    for sigma in sigma_values:
        cfg = StudyConfig(graph=config.graph, partitions=config.partitions,
                          generator_partition=config.generator_partition,
                          log_tau=config.log_tau, sigma_gamma=config.sigma_gamma,
                          theta_true=config.theta_true,
                          replicates=config.replicates, intercept=config.intercept,
                          base_seed=config.base_seed,
                          redraw_gamma=config.redraw_gamma,
                          prior_sigma_gamma=float(sigma), threads=1)
        try:
            res = _fit_model(cfg, counts, part, rep)
        except NonConvergenceError:
            res = None
        truth = theta_true if part.n_subregions == theta_true.size else None
        extra = {"sigma_gamma": float(sigma)}
        model_rows = _model_rows(rep, name, res, theta_true=truth, extra=extra)
        if res is not None:
            spread = float(np.max(res.theta_mode) - np.min(res.theta_mode))
            for r in model_rows:
                r["theta_spread"] = spread
        rows.extend(model_rows)
    return rows


def sigma_sweep(config: StudyConfig, sigma_values) -> StudyResult:
    """Refit each simulated dataset under a grid of prior flexibility values.

    Uses the first candidate partition as the fitted model.  The per-sigma
    aggregate reports the mean estimate and coverage per sub-region plus the
    mean spread max_i theta_hat_i - min_i theta_hat_i, which shrinks to zero
    as sigma_gamma drives the prior to the single-precision model.
    """
    sigma_values = [float(s) for s in sigma_values]
    if not sigma_values or any(s <= 0 for s in sigma_values):
        raise ValueError("sigma_values must be a nonempty list of positive reals")
    payloads = [(config, rep, sigma_values) for rep in range(config.replicates)]
    rep_rows = [r for rows in _map_replicates(_sweep_replicate, config, payloads)
                for r in rows]
    result = StudyResult(kind="sweep", replicate_rows=rep_rows)
    for sigma in sigma_values:
        rows = [r for r in rep_rows
                if r.get("sigma_gamma") == sigma and r["converged"]]
        by_sub: dict = {}
        for r in rows:
            by_sub.setdefault(r["subregion"], []).append(r)
        spreads = [r["theta_spread"] for r in rows if r["subregion"] == 0]
        for k in sorted(by_sub):
            sub = by_sub[k]
            covers = [r["covered"] for r in sub if "covered" in r]
            result.aggregate_rows.append({
                "sigma_gamma": sigma,
                "subregion": k,
                "mean_theta": float(np.mean([r["theta_hat"] for r in sub])),
                "coverage": float(np.mean(covers)) if covers else None,
                "mean_spread": float(np.mean(spreads)) if spreads else None,
                "n_converged": len(sub),
            })
    return result


# ---- contraction study ---------------------------------------------------


def _contraction_replicate(payload):
    config, rep = payload
    counts, theta_true = simulate_dataset(
        config.graph, config.generator_partition, config.log_tau, 0.0,
        config.intercept, _replicate_seed(config, rep))
    rows = []
    fits = {}
    for name, part in config.partitions:
        try:
            res = _fit_model(config, counts, part, rep)
        except NonConvergenceError:
            res = None
        fits[name] = res
        truth = theta_true if part.n_subregions == theta_true.size else None
        rows.extend(_model_rows(rep, name, res, theta_true=truth))
    stat = next((fits[n] for n, p in config.partitions
                 if p.n_subregions == 1 and fits[n] is not None), None)
    if stat is not None:
        th_stat = float(stat.theta_mode[0])
        for r in rows:
            if r["converged"]:
                r["max_dev"] = abs(th_stat - r["theta_hat"])
    return rows


def contraction_study(config: StudyConfig) -> StudyResult:
    """Stationary data, candidate partitions of increasing size.

    For each replicate the deviations of every candidate's per-sub-region
    estimates from that replicate's single-precision estimate are summarized
    as max_i |dev_i| and |mean_i dev_i|; under the joint prior both should
    stay near zero however fine the partition.
    """
    if config.generator_partition.n_subregions != 1:
        raise ValueError("contraction study needs a single-sub-region generator")
    payloads = [(config, rep) for rep in range(config.replicates)]
    rep_rows = [r for rows in _map_replicates(_contraction_replicate, config, payloads)
                for r in rows]
    result = StudyResult(kind="contraction", replicate_rows=rep_rows,
                         table_name="table3.csv")

    by_rep_model: dict = {}
    for r in rep_rows:
        by_rep_model.setdefault((r["replicate"], r["model"]), []).append(r)
    stationary_names = [n for n, p in config.partitions if p.n_subregions == 1]
    base_name = stationary_names[0] if stationary_names else None

    for name, part in config.partitions:
        maxdevs, meandevs, theta_bars, n_ok = [], [], [], 0
        for rep in range(config.replicates):
            rows = by_rep_model.get((rep, name), [])
            if not rows or not rows[0]["converged"]:
                continue
            n_ok += 1
            ths = np.array([r["theta_hat"] for r in rows])
            theta_bars.append(float(np.mean(ths)))
            base = by_rep_model.get((rep, base_name), []) if base_name else []
            if base and base[0]["converged"]:
                th_stat = base[0]["theta_hat"]
                maxdevs.append(float(np.max(np.abs(th_stat - ths))))
                meandevs.append(abs(th_stat - float(np.mean(ths))))
        agg = {
            "model": name,
            "n_subregions": part.n_subregions,
            "n_converged": n_ok,
            "mean_theta_bar": float(np.mean(theta_bars)) if theta_bars else None,
            "mean_max_dev": float(np.mean(maxdevs)) if maxdevs else None,
            "mean_mean_dev": float(np.mean(meandevs)) if meandevs else None,
        }
        result.aggregate_rows.append(agg)
        result.table_rows.append({k: agg[k] for k in
                                  ("model", "n_subregions", "mean_theta_bar",
                                   "mean_max_dev", "mean_mean_dev")})
    return result
