"""``flexgrid`` command line: cluster, simulate, report.

Exit codes:
  0  success
  2  configuration error (bad config, k out of range, cluster-model schema mismatch)
  3  data error (unreadable sessions, network or results bundle)
  4  one or more OPF timesteps failed (results are still written)
  5  results bundle is internally inconsistent
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import BundleError, check_consistency, read_bundle, recompute_totals, write_bundle
from .clustering import (
    ClusteringError,
    SelectionRow,
    cluster_aggregates,
    kmeans_best,
    load_cluster_model,
    make_features,
    save_cluster_model,
    select_k,
    silhouette,
    write_diagnostics,
)
from .config import ConfigError, RunConfig, load_config
from .ev_data import SessionDataError, build_profiles, parse_sessions, summarize, synth_sessions
from .grid_model import NetworkError, load_network, to_per_unit
from .opf import OpfInputError
from .scenario import ScenarioError, allocate_fleet, build_schedule, default_jobs, run_baseline, run_flex

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TIMESTEP = 4
EXIT_CONSISTENCY = 5

CLUSTER_FILE = "clusters.json"
DIAGNOSTICS_FILE = "k_diagnostics.csv"
RESULTS_DIR = "results"

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}

log = logging.getLogger("flexgrid")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("FLEXGRID_LOG", "warn").lower(), logging.WARNING)
    root = logging.getLogger("flexgrid")
    root.setLevel(level)
    if not root.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(h)


def _config(path, seed=None) -> RunConfig:
    try:
        return load_config(path, seed)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc


# ---------------------------------------------------------------------------
# cluster


def _load_sessions(cfg: RunConfig):
    if cfg.sessions is not None:
        try:
            return parse_sessions(cfg.sessions)
        except (OSError, SessionDataError) as exc:
            raise CliError(EXIT_DATA, f"session data error: {exc}") from exc
    sessions = synth_sessions(cfg.synth_spec())
    return sessions, summarize(sessions)


def cmd_cluster(cfg: RunConfig) -> int:
    sessions, info = _load_sessions(cfg)
    cc = cfg.clustering
    profiles = build_profiles(sessions, cc.day_filter)
    n = len(profiles)
    if n == 0:
        raise CliError(EXIT_DATA, f"no user has charging data under day_filter={cc.day_filter!r}")
    hi = cc.k if cc.k is not None else cc.k_range[1]
    if hi > n:
        raise CliError(EXIT_CONFIG, f"config error: k={hi} exceeds the number of users n={n}")
    features = make_features(profiles, cc.mode)
    seed = cfg.clustering_seed
    try:
        if cc.k is not None:
            model = kmeans_best(features, cc.k, range(seed, seed + cc.seeds_per_k), max_iter=cc.max_iter, tol=cc.tol)
            sil = silhouette(features, model.assignments) if cc.k >= 2 else float("nan")
            rows = [SelectionRow(cc.k, model.inertia_j_kw2, sil)]
        else:
            if cc.k_range[1] >= n:
                raise CliError(EXIT_CONFIG,
                               f"config error: k_range upper bound {cc.k_range[1]} needs more than n={n} users")
            k_best, rows, models = select_k(features, cc.k_range, cc.seeds_per_k, cc.max_iter, cc.tol, base_seed=seed)
            model = models[k_best]
        agg = cluster_aggregates(model, profiles)
    except ClusteringError as exc:
        raise CliError(EXIT_CONFIG, f"clustering error: {exc}") from exc

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "source": "sessions" if cfg.sessions is not None else "synth",
        "n_sessions": info.n_sessions,
        "n_users": n,
        "day_filter": cc.day_filter,
        "selection": "fixed" if cc.k is not None else "silhouette",
        "config_seed": cfg.seed,
        "version": __version__,
    }
    save_cluster_model(out / CLUSTER_FILE, model, agg, meta)
    write_diagnostics(rows, out / DIAGNOSTICS_FILE)
    print(f"k={model.k} mode={model.mode} users={n} J={model.inertia_root_kw:.4g} kW -> {out / CLUSTER_FILE}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _load_grid(cfg: RunConfig):
    if cfg.network is None:
        raise CliError(EXIT_CONFIG, "config error: paths.network is required for simulate")
    try:
        net = load_network(cfg.network)
        pu = to_per_unit(net, cfg.opf.s_base_mva)
    except NetworkError as exc:
        raise CliError(EXIT_DATA, f"network error: {exc}") from exc
    other = np.arange(pu.n_bus) != pu.slack
    if cfg.opf.v_min_pu is not None:
        pu.v_min_pu[other] = cfg.opf.v_min_pu
    if cfg.opf.v_max_pu is not None:
        pu.v_max_pu[other] = cfg.opf.v_max_pu
    if np.any(pu.v_min_pu > pu.v_max_pu):
        raise CliError(EXIT_CONFIG, "config error: voltage bounds cross")
    return net, pu


def _horizon(cfg: RunConfig, net) -> list[int]:
    sc = cfg.scenario
    step_min = net.timestep_hours * 60.0
    if sc.timestep_minutes is not None and abs(sc.timestep_minutes - step_min) > 1e-9:
        raise CliError(EXIT_CONFIG, f"config error: timestep_minutes={sc.timestep_minutes:g} but the network "
                                    f"profiles use {step_min:g}-minute steps")
    a, b = sc.horizon if sc.horizon is not None else (0, net.horizon)
    if not 0 <= a < b <= net.horizon:
        raise CliError(EXIT_CONFIG, f"config error: horizon [{a}, {b}) outside [0, {net.horizon})")
    return list(range(a, b))


def cmd_simulate(cfg: RunConfig, clusters_path, jobs: int) -> int:
    path = Path(clusters_path)
    if not path.is_file():
        raise CliError(EXIT_DATA, f"cluster model {path} not found")
    try:
        model, agg = load_cluster_model(path)
    except ClusteringError as exc:
        raise CliError(EXIT_CONFIG, f"cluster model error: {exc}") from exc
    net, pu = _load_grid(cfg)
    steps = _horizon(cfg, net)
    sc = cfg.scenario
    if sc.adoption_count is None and (sc.adoption_rate is None or sc.fleet_total is None):
        raise CliError(EXIT_CONFIG, "config error: [scenario] needs adoption_count or fleet_total with adoption_rate")
    try:
        alloc = allocate_fleet(net, agg, sc.total_evs(), adoption_rate=sc.adoption_rate or 1.0)
        schedule = build_schedule(pu, agg, alloc, steps, cfg.opf.epsilon_kw)
        settings = cfg.opf.settings()
        kw = dict(include_ev_load=sc.include_ev_baseline, m_t=cfg.opf.m_t, settings=settings, jobs=jobs)
        log.info("baseline run over %d steps", len(steps))
        baseline = run_baseline(pu, steps, schedule, **kw)
        log.info("flexibility run over %d steps", len(steps))
        flex = run_flex(pu, steps, schedule, **kw)
    except (NetworkError, OpfInputError, ScenarioError) as exc:
        raise CliError(EXIT_DATA, f"scenario error: {exc}") from exc
    except ValueError as exc:  # unknown backend or bad backend setting
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from exc

    meta = {
        "network": net.name,
        "horizon": [steps[0], steps[-1] + 1],
        "clusters": {"k": model.k, "mode": model.mode, "p_max_kw": agg.p_max_kw.tolist()},
        "config": cfg.echo(),
        "version": __version__,
    }
    out = cfg.output_dir / RESULTS_DIR
    summary = write_bundle(out, baseline, flex, alloc, meta)
    runs = summary["runs"]
    print(f"baseline curtailment {runs['baseline']['curtailment_mwh']:.3f} MWh, "
          f"with flexibility {runs['flex']['curtailment_mwh']:.3f} MWh, "
          f"reduction {summary['curtailment_reduction_pct']:.2f}% -> {out}")
    if summary["failures"]:
        print(f"{len(summary['failures'])} timestep solves failed; see summary.json", file=sys.stderr)
        return EXIT_TIMESTEP
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _fmt(x, spec=".6g"):
    return "n/a" if x is None else format(x, spec)


def cmd_report(results_dir) -> int:
    try:
        bundle = read_bundle(results_dir)
        problems = check_consistency(bundle)
    except BundleError as exc:
        raise CliError(EXIT_DATA, f"bundle error: {exc}") from exc
    s = bundle.summary
    rec = recompute_totals(bundle)
    rows = [
        ("steps", str(s["steps"]), str(s["steps"])),
        ("baseline curtailment (MWh)", _fmt(s["runs"]["baseline"]["curtailment_mwh"]),
         _fmt(rec["baseline"]["curtailment_mwh"])),
        ("flex curtailment (MWh)", _fmt(s["runs"]["flex"]["curtailment_mwh"]), _fmt(rec["flex"]["curtailment_mwh"])),
        ("flex energy (MWh)", _fmt(s["runs"]["flex"]["flex_energy_mwh"]), _fmt(rec["flex"]["flex_energy_mwh"])),
        ("curtailment reduction (%)", _fmt(s["curtailment_reduction_pct"], ".4f"),
         _fmt(rec["curtailment_reduction_pct"], ".4f")),
    ]
    for run in ("baseline", "flex"):
        rows.append((f"{run} max |V| (p.u.)", _fmt(s["runs"][run]["max_v_pu"]), _fmt(rec[run]["max_v_pu"])))
        rows.append((f"{run} max exactness gap", _fmt(s["runs"][run]["max_exactness"], ".3e"),
                     _fmt(rec[run]["max_exactness"], ".3e")))
    rows.append(("failed timesteps", str(len(s["failures"])), ""))
    w = max(len(r[0]) for r in rows)
    print(f"{'quantity':<{w}}  {'summary':>14}  {'recomputed':>14}")
    for name, a, b in rows:
        print(f"{name:<{w}}  {a:>14}  {b:>14}")
    if problems:
        for p in problems:
            print(f"inconsistent: {p}", file=sys.stderr)
        return EXIT_CONSISTENCY
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flexgrid", description="EV flexibility against wind curtailment.",
                                 epilog=__doc__.split("\n", 1)[1], formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"flexgrid {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("cluster", help="cluster EV users and write the cluster model")
    c.add_argument("--config", required=True, help="run config (TOML)")
    c.add_argument("--seed", type=int, help="override the config seed")
    s = sub.add_parser("simulate", help="run baseline and flexibility weeks")
    s.add_argument("--config", required=True)
    s.add_argument("--clusters", required=True, help="cluster model written by 'flexgrid cluster'")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--jobs", type=int, default=None, help="parallel timestep solves (default: available CPUs)")
    r = sub.add_parser("report", help="print and cross-check a results bundle")
    r.add_argument("results_dir")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "cluster":
            return cmd_cluster(_config(args.config, args.seed))
        if args.command == "simulate":
            jobs = args.jobs if args.jobs is not None else default_jobs()
            if jobs < 1:
                raise CliError(EXIT_CONFIG, "--jobs must be >= 1")
            return cmd_simulate(_config(args.config, args.seed), args.clusters, jobs)
        return cmd_report(args.results_dir)
    except CliError as exc:
        print(f"flexgrid: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
