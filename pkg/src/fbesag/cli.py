"""Command-line interface: model fitting, simulation studies, prior curves.

All inputs are files (adjacency graph, partition CSV, observation CSV,
flat key-value config); every run writes a JSON manifest recording the
command, the resolved configuration, sha256 digests of the inputs and the
seed, so any output directory is self-describing and reproducible.

Exit codes: 0 success, 1 input error, 2 numerical non-convergence
(diagnostic outputs are still written).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .graph import (
    GraphParseError,
    build_partition,
    grid_graph,
    parse_graph,
    parse_partition_csv,
    quadrant_partition,
)
from .inference import ModelSpec, NonConvergenceError, fit
from .pcprior import PcPriorConfig, lambda_from, log_pc_prior_univariate
from .studies import (
    StudyConfig,
    contraction_study,
    recovery_study,
    sigma_sweep,
    write_rows_csv,
)


class InputError(ValueError):
    """User-input problem; reported with the offending file/line, exit 1."""


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_config(text: str, path: str = "<config>") -> dict[str, str]:
    """Flat ``section.key = value`` lines; '#' comments and blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path} line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key or "." not in key:
            raise InputError(f"{path} line {lineno}: key must look like 'section.key'")
        out[key] = val.strip()
    return out


def _cfg_float(cfg, key, default):
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise InputError(f"config key {key}: bad number {cfg[key]!r}") from None


def _cfg_int(cfg, key, default):
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise InputError(f"config key {key}: bad integer {cfg[key]!r}") from None


def _cfg_floats(cfg, key, default):
    if key not in cfg:
        return default
    try:
        return [float(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError:
        raise InputError(f"config key {key}: bad number list {cfg[key]!r}") from None


def parse_observations(text: str, n_areas: int, path: str = "<data>"):
    """Observation CSV ``area,time,count,offset`` with 1-based ids.

    A blank time column on every row gives a purely spatial model; returns
    (counts, offsets, area_idx, time_idx or None, n_time).
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = "area,time,count,offset"
    if not lines or lines[0].strip().lower().replace(" ", "") != header:
        raise InputError(f"{path}: first line must be the header '{header}'")
    counts, offsets, areas, times = [], [], [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != 4:
            raise InputError(f"{path} line {lineno}: expected 4 comma-separated fields")
        try:
            area = int(parts[0])
        except ValueError:
            raise InputError(f"{path} line {lineno}: bad area id {parts[0]!r}") from None
        if not (1 <= area <= n_areas):
            raise InputError(
                f"{path} line {lineno}: area id {area} out of range 1..{n_areas}")
        t = None
        if parts[1]:
            try:
                t = int(parts[1])
            except ValueError:
                raise InputError(f"{path} line {lineno}: bad time id {parts[1]!r}") from None
            if t < 1:
                raise InputError(f"{path} line {lineno}: time id must be >= 1")
        try:
            y = float(parts[2])
            phi = float(parts[3]) if parts[3] else 1.0
        except ValueError:
            raise InputError(f"{path} line {lineno}: bad count/offset") from None
        if y < 0 or y != math.floor(y):
            raise InputError(f"{path} line {lineno}: count must be a nonnegative integer")
        if phi <= 0:
            raise InputError(f"{path} line {lineno}: offset must be positive")
        counts.append(y)
        offsets.append(phi)
        areas.append(area - 1)
        times.append(t)
    if not counts:
        raise InputError(f"{path}: no observation rows")
    has_time = [t is not None for t in times]
    if any(has_time) and not all(has_time):
        raise InputError(f"{path}: time column must be blank on all rows or none")
    if all(has_time):
        time_idx = np.array([t - 1 for t in times])
        n_time = int(time_idx.max()) + 1
    else:
        time_idx, n_time = None, 0
    return (np.array(counts), np.array(offsets), np.array(areas), time_idx, n_time)


def write_manifest(outdir: str, command: str, config: dict, inputs: list[str],
                   seed: int, extra: dict | None = None) -> str:
    manifest = {
        "command": command,
        "config": dict(sorted(config.items())),
        "inputs": {p: _sha256(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "created_unix": time.time(),
    }
    manifest.update(extra or {})
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _prior_from_config(cfg, p: int) -> PcPriorConfig:
    u = _cfg_float(cfg, "pc.u", 1.0)
    alpha = _cfg_float(cfg, "pc.alpha", 1e-5)
    sigma = _cfg_float(cfg, "pc.sigma_gamma", 0.2)
    try:
        lambda_from(u, alpha)
    except ValueError as exc:
        raise InputError(f"config pc.u/pc.alpha: {exc}") from None
    if sigma <= 0:
        raise InputError("config pc.sigma_gamma must be positive")
    return PcPriorConfig(u=u, alpha=alpha, sigma_gamma=sigma, p=p)


# ---- fit -----------------------------------------------------------------


def cmd_fit(args) -> int:
    cfg = parse_config(_read(args.config), args.config) if args.config else {}
    graph = parse_graph(_read(args.graph))
    if args.partition:
        partition = parse_partition_csv(_read(args.partition), graph)
    else:
        partition = build_partition(graph, [0] * graph.n_areas)
    counts, offsets, area_idx, time_idx, n_time = parse_observations(
        _read(args.data), graph.n_areas, args.data)
    prior = _prior_from_config(cfg, partition.n_subregions)
    try:
        spec = ModelSpec(graph=graph, partition=partition, counts=counts,
                         offsets=offsets, area_idx=area_idx, time_idx=time_idx,
                         n_time=n_time, spatial_prior=prior,
                         temporal_u=_cfg_float(cfg, "pc.temporal_u", 0.5),
                         temporal_alpha=_cfg_float(cfg, "pc.temporal_alpha", 0.01))
    except ValueError as exc:
        raise InputError(str(exc)) from None

    os.makedirs(args.out, exist_ok=True)
    inputs = [p for p in (args.graph, args.partition, args.data, args.config) if p]
    try:
        res = fit(spec, seed=args.seed)
    except NonConvergenceError as exc:
        write_manifest(args.out, "fit", cfg, inputs, args.seed,
                       extra={"complete": False, "error": str(exc)})
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return 2

    tau_rows = []
    for k in range(partition.n_subregions):
        tau_rows.append({
            "subregion": k,
            "label": partition.label_names[k] if partition.label_names else str(k),
            "theta_mode": float(res.theta_mode[k]),
            "tau_mean": float(res.tau_mean[k]),
            "tau_lower": float(res.tau_lower[k]),
            "tau_upper": float(res.tau_upper[k]),
        })
    write_rows_csv(os.path.join(args.out, "tau.csv"), tau_rows)

    names = (["intercept"] + [f"alpha_{i+1}" for i in range(graph.n_areas)]
             + [f"kappa_{t+1}" for t in range(n_time)])
    latent_rows = [{"component": nm, "mean": float(m), "sd": float(s)}
                   for nm, m, s in zip(names, res.latent_mean, res.latent_sd)]
    write_rows_csv(os.path.join(args.out, "latent.csv"), latent_rows)

    summary = {
        "n_areas": graph.n_areas,
        "n_subregions": partition.n_subregions,
        "n_obs": counts.size,
        "dic": res.dic,
        "log_ml": res.log_ml,
        "seed": args.seed,
    }
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k} = {'%.17g' % v if isinstance(v, float) else v}\n")
    write_manifest(args.out, "fit", cfg, inputs, args.seed,
                   extra={"complete": True,
                          "diagnostics": {k: v for k, v in res.diagnostics.items()
                                          if isinstance(v, (bool, int, float, str, list))}})
    return 0


# ---- study ---------------------------------------------------------------


def _grid_partitions(rows: int, cols: int, kind: str):
    """Default candidate partitions on a grid, per study kind."""
    stationary = ("p1", build_partition(grid_graph(rows, cols), [0] * (rows * cols)))
    quad = ("p4", quadrant_partition(rows, cols, [rows // 2], [cols // 2]))
    if kind == "recovery":
        shifted = ("p4_shifted",
                   quadrant_partition(rows, cols, [rows // 4], [cols // 4]))
        return (stationary, quad, shifted)
    if kind == "sweep":
        return (quad,)
    # contraction: 1, 3, 4, 5, 6 sub-region analogs
    thirds = [max(1, cols // 3), max(2, 2 * cols // 3)]
    fifths = sorted({max(1, i * cols // 5) for i in range(1, 5)})
    return (
        stationary,
        ("p3", quadrant_partition(rows, cols, [], thirds)),
        quad,
        ("p5", quadrant_partition(rows, cols, [], fifths)),
        ("p6", quadrant_partition(rows, cols, [rows // 2], thirds)),
    )


def cmd_study(args) -> int:
    cfg = parse_config(_read(args.config), args.config)
    kind = cfg.get("study.kind", "")
    if kind not in ("recovery", "sweep", "contraction"):
        raise InputError(f"config study.kind must be recovery, sweep or contraction, "
                         f"got {kind!r}")
    rows = _cfg_int(cfg, "study.rows", 20)
    cols = _cfg_int(cfg, "study.cols", 20)
    if rows < 2 or cols < 2:
        raise InputError("config study.rows/study.cols must be >= 2")

    inputs = [args.config]
    if "study.graph_file" in cfg:
        graph = parse_graph(_read(cfg["study.graph_file"]))
        inputs.append(cfg["study.graph_file"])
        part_files = [p.strip() for p in cfg.get("study.partition_files", "").split(",")
                      if p.strip()]
        if not part_files:
            raise InputError("config study.partition_files is required with "
                             "study.graph_file")
        partitions = []
        for pf in part_files:
            partitions.append((os.path.splitext(os.path.basename(pf))[0],
                               parse_partition_csv(_read(pf), graph)))
            inputs.append(pf)
        partitions = tuple(partitions)
    else:
        graph = grid_graph(rows, cols)
        partitions = _grid_partitions(rows, cols, kind)

    if kind == "contraction":
        gen_name = cfg.get("study.generator", "p1")
    else:
        gen_name = cfg.get("study.generator", "p4")
    gen = dict(partitions).get(gen_name)
    if gen is None:
        raise InputError(f"config study.generator: no candidate named {gen_name!r}")

    theta_true = _cfg_floats(cfg, "study.theta_true", None)
    study_cfg = StudyConfig(
        graph=graph,
        partitions=partitions,
        generator_partition=gen,
        log_tau=_cfg_float(cfg, "study.log_tau", 0.69),
        sigma_gamma=_cfg_float(cfg, "study.sigma_gamma",
                               0.0 if kind == "contraction" else 0.2),
        theta_true=tuple(theta_true) if theta_true else None,
        replicates=_cfg_int(cfg, "study.replicates", 10),
        intercept=_cfg_float(cfg, "study.intercept", 2.0),
        base_seed=args.seed,
        redraw_gamma=cfg.get("study.redraw_gamma", "0") in ("1", "true", "yes"),
        prior_sigma_gamma=_cfg_float(cfg, "pc.sigma_gamma", 0.2),
        threads=args.threads,
    )

    if kind == "recovery":
        result = recovery_study(study_cfg)
    elif kind == "contraction":
        result = contraction_study(study_cfg)
    else:
        sigmas = _cfg_floats(cfg, "study.sigma_values", [0.02, 0.3])
        if any(s <= 0 for s in sigmas):
            raise InputError("config study.sigma_values must be positive")
        result = sigma_sweep(study_cfg, sigmas)

    os.makedirs(args.out, exist_ok=True)
    result.write(args.out)
    n_failed = sum(1 for r in result.replicate_rows if not r["converged"])
    write_manifest(args.out, "study", cfg, inputs, args.seed,
                   extra={"complete": True, "kind": kind,
                          "n_failed_fits": n_failed, "threads": args.threads})
    return 2 if n_failed else 0


# ---- prior ---------------------------------------------------------------


def cmd_prior(args) -> int:
    cfg = parse_config(_read(args.config), args.config) if args.config else {}
    u = _cfg_float(cfg, "pc.u", 1.0)
    alpha = _cfg_float(cfg, "pc.alpha", 1e-5)
    try:
        lam = lambda_from(u, alpha)
    except ValueError as exc:
        raise InputError(f"config pc.u/pc.alpha: {exc}") from None
    sigmas = _cfg_floats(cfg, "prior.sigma_gammas", [0.05, 0.1, 0.2, 0.3, 0.4])
    if any(s <= 0 for s in sigmas):
        raise InputError("config prior.sigma_gammas must be positive")

    os.makedirs(args.out, exist_ok=True)
    theta = np.linspace(-3.0 * math.log(10.0) + 2.0 * math.log(lam) - 20.0,
                        2.0 * math.log(lam) + 25.0, 2001)
    dens = np.exp([log_pc_prior_univariate(t, lam) for t in theta])
    write_rows_csv(os.path.join(args.out, "pc_prior.csv"),
                   [{"theta": float(t), "density": float(d)}
                    for t, d in zip(theta, dens)])

    # e^gamma is log-normal(0, sigma^2); one density column per sigma
    x = np.linspace(1e-6, 1.0 + 8.0 * max(sigmas), 4001)
    rows = []
    for xi in x:
        row = {"x": float(xi)}
        for s in sigmas:
            row[f"sigma_{s:g}"] = float(
                math.exp(-0.5 * (math.log(xi) / s) ** 2)
                / (xi * s * math.sqrt(2.0 * math.pi)))
        rows.append(row)
    write_rows_csv(os.path.join(args.out, "egamma_density.csv"), rows)

    write_manifest(args.out, "prior", cfg, [args.config] if args.config else [],
                   args.seed, extra={"complete": True, "lambda": lam,
                                     "sigma_gammas": sigmas})
    return 0


# ---- entry point ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbesag",
        description="Non-stationary flexible Besag models for areal count data")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model to observation data")
    p_fit.add_argument("--graph", required=True, help="adjacency graph file")
    p_fit.add_argument("--partition", help="sub-region CSV (default: stationary)")
    p_fit.add_argument("--data", required=True, help="observation CSV")
    p_fit.add_argument("--config", help="flat key-value config file")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--seed", type=int, default=1)
    p_fit.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_fit.set_defaults(func=cmd_fit)

    p_study = sub.add_parser("study", help="run a simulation study")
    p_study.add_argument("--config", required=True)
    p_study.add_argument("--out", required=True)
    p_study.add_argument("--seed", type=int, default=1)
    p_study.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_study.set_defaults(func=cmd_study)

    p_prior = sub.add_parser("prior", help="emit prior density curves as CSV")
    p_prior.add_argument("--config", help="flat key-value config file")
    p_prior.add_argument("--out", required=True)
    p_prior.add_argument("--seed", type=int, default=1)
    p_prior.set_defaults(func=cmd_prior)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, GraphParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
