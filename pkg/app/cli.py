"""
Command-line front end.

    python -m app.cli ingest      --config fixtures/experiment.env
    python -m app.cli simulate    --config fixtures/experiment.env --jobs 4
    python -m app.cli calibrate   --config fixtures/experiment.env
    python -m app.cli dualhome    --config fixtures/experiment.env
    python -m app.cli deploy-eval --config fixtures/experiment.env
    python -m app.cli adversary   --config fixtures/experiment.env
    python -m app.cli correlate   --config fixtures/experiment.env
    python -m app.cli report      --config fixtures/experiment.env

Every stage reads the artifacts of the stages before it from ``--out`` and
refuses them when they were produced by another config or seed.
"""
from __future__ import annotations

import functools
import math
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import click
import pandas as pd
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from .calibrate import ErrorModel, build_error_model, calibrate_estimates, calibrate_values
from .config import ExperimentConfig, load_experiment_config, settings
from .datasets import (
    load_circuits,
    load_measured,
    load_relays,
    load_satellite_baseline,
    load_sites,
    load_terrestrial_baseline,
    load_tle,
)
from .errors import ConfigError, DatasetError, InsufficientDataError, SatsimError, StageError, TleParseError
from .geo import Constellation, OrbitalElements
from .graph import GraphConfig, RoutingStrategy
from .logger import ContextLogger, get_logger, log_performance
from .metrics import StageMetrics
from .models import Circuit, Interface, Relay, pair_id, split_pair_id, unique_pairs
from .sator import (
    DeploymentPlan,
    DeploymentScenario,
    SchedulerConfig,
    assign_deployment,
    effective_pair_series,
    evaluate_deployment,
    probe_overhead_bytes_per_day,
    rtt_to_plt_ms,
    tail_correlation,
    tail_correlation_table,
    visibility_curve,
)
from .sim import (
    GroundSegment,
    LatencySeries,
    ReductionTable,
    Timeline,
    circuit_series,
    group_reduction_by_distance,
    k_sensitivity,
    percentile,
    percentile_curve,
    percentile_values,
    reduction_rows,
    reduction_table,
    reductions_from_values,
    simulate_pair,
    simulate_pair_multi_k,
)
from .speeds import BucketedSpeedModel, SpeedEcdf, SpeedModels, ingest_satellite, ingest_terrestrial
from .store import ArtifactMeta, SeriesStore, read_json, series_frame, write_csv, write_json

logger = get_logger(__name__)
console = Console()
err_console = Console(stderr=True)

EXIT_USAGE = 2
EXIT_FAILURE = 1


# ---------------------------------------------------------------------------
#  Shared plumbing
# ---------------------------------------------------------------------------


@dataclass
class Run:
    """Loaded config plus the output layout of one invocation."""

    cfg: ExperimentConfig
    meta: ArtifactMeta

    @property
    def out(self) -> Path:
        return Path(self.cfg.out_dir)

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    @property
    def store(self) -> SeriesStore:
        return SeriesStore(self.out, self.meta)


def _load_run(config: str, seed: Optional[int], out: Optional[str], jobs: Optional[int]) -> Run:
    overrides = {
        "seed": seed,
        "out_dir": str(Path(out).resolve()) if out else None,
        "jobs": jobs,
    }
    cfg = load_experiment_config(config, overrides)
    return Run(cfg=cfg, meta=ArtifactMeta(cfg.config_hash(), cfg.seed))


def handle_errors(func):
    """Map simulator errors to exit codes: 2 for input/stage problems, 1 otherwise."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, DatasetError, StageError, TleParseError) as e:
            err_console.print(f"❌ {e}", style="bold red", markup=False, highlight=False, soft_wrap=True)
            sys.exit(EXIT_USAGE)
        except SatsimError as e:
            err_console.print(f"❌ {type(e).__name__}: {e}", style="bold red", markup=False, highlight=False, soft_wrap=True)
            sys.exit(EXIT_FAILURE)

    return wrapper


def common_options(func):
    """``--config/--seed/--out/--jobs``; the command receives the loaded Run."""

    @click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="Experiment config file")
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the config seed")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Override the output directory")
    @click.option("--jobs", type=click.IntRange(1), default=None, help="Worker processes (simulate only)")
    @functools.wraps(func)
    @handle_errors
    def wrapper(config, seed, out, jobs, **kwargs):
        return func(_load_run(config, seed, out, jobs), **kwargs)

    return wrapper


def _finish(metrics: StageMetrics) -> None:
    metrics.finish()
    logger.info(f"{metrics.stage} finished in {metrics.duration_seconds:.2f}s", extra={"context": metrics.to_dict()})
    table = Table(title=f"{metrics.stage} summary", show_header=False)
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key in ("rows_read", "rows_rejected", "pairs_computed", "pairs_skipped", "files_written"):
        value = getattr(metrics, key)
        if value:
            table.add_row(key.replace("_", " "), str(value))
    for key, value in metrics.metadata.items():
        table.add_row(key.replace("_", " "), str(value))
    table.add_row("duration", f"{metrics.duration_seconds:.2f}s")
    if metrics.pairs_computed:
        table.add_row("throughput", f"{metrics.throughput:.2f} pairs/s")
    console.print(table)


def _progress() -> Progress:
    return Progress(
        TextColumn("[bold]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        disable=not settings.SATSIM_PROGRESS,
        transient=True,
    )


def _load_speeds(run: Run) -> SpeedModels:
    ter = read_json(run.path("models", "terrestrial.json"), run.meta, "ingest")
    sat = read_json(run.path("models", "satellite.json"), run.meta, "ingest")
    return SpeedModels(terrestrial=BucketedSpeedModel.from_dict(ter["model"]), satellite=SpeedEcdf.from_dict(sat["model"]))


def _load_constellation(run: Run) -> Constellation:
    data = read_json(run.path("models", "constellation.json"), run.meta, "ingest")
    return Constellation(OrbitalElements.from_dict(e) for e in data["satellites"])


def _load_topology(run: Run) -> Tuple[List[Relay], List[Circuit]]:
    relays = load_relays(run.cfg.relays)
    return relays, load_circuits(run.cfg.circuits, relays)


def _pair_ids(circuits: List[Circuit]) -> List[str]:
    return [pair_id(src, dst) for src, dst in unique_pairs(circuits)]


def _circuit_items(
    circuits: List[Circuit], pairs: Dict[str, Tuple[LatencySeries, LatencySeries]]
) -> Dict[str, Tuple[LatencySeries, LatencySeries]]:
    """circuit id -> (satellite, terrestrial) by summing the two hop series."""
    items = {}
    for circuit in circuits:
        hop1, hop2 = circuit.hop_ids()
        sat = circuit_series(circuit.circuit_id, pairs[hop1][0], pairs[hop2][0])
        ter = circuit_series(circuit.circuit_id, pairs[hop1][1], pairs[hop2][1])
        items[circuit.circuit_id] = (sat, ter)
    return items


@click.group()
def cli():
    """Satellite-assisted overlay routing simulator."""


# ---------------------------------------------------------------------------
#  ingest
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@log_performance("ingest")
def ingest(run: Run):
    """Build speed models and the constellation snapshot from the input files."""
    cfg = run.cfg
    metrics = StageMetrics(stage="ingest")

    ter_rows = load_terrestrial_baseline(cfg.terrestrial_baseline)
    sat_rows = load_satellite_baseline(cfg.satellite_baseline)
    terrestrial = ingest_terrestrial(ter_rows, cfg.bucket_km, cfg.n_delimiters)
    satellite = ingest_satellite(sat_rows, cfg.n_delimiters)
    elements = load_tle(cfg.tle)
    stations = load_sites(cfg.stations)
    pops = load_sites(cfg.pops)
    constellation = Constellation(elements)

    write_json(run.path("models", "terrestrial.json"), {"model": terrestrial.to_dict()}, run.meta)
    write_json(run.path("models", "satellite.json"), {"model": satellite.to_dict()}, run.meta)
    write_json(
        run.path("models", "constellation.json"),
        {
            **constellation.to_dict(),
            "latest_epoch": constellation.latest_epoch if len(constellation) else None,
            "stations": len(stations),
            "pops": len(pops),
        },
        run.meta,
    )

    counts = Table(title="Ingested datasets")
    counts.add_column("dataset")
    counts.add_column("rows", justify="right")
    counts.add_column("accepted", justify="right")
    counts.add_column("rejected", justify="right")
    counts.add_row("terrestrial baseline", str(len(ter_rows)), str(terrestrial.sample_count), str(terrestrial.rejected))
    counts.add_row("satellite baseline", str(len(sat_rows)), str(satellite.sample_count), str(satellite.rejected))
    counts.add_row("satellites", str(len(elements)), str(len(constellation)), "0")
    counts.add_row("ground stations", str(len(stations)), str(len(stations)), "0")
    counts.add_row("PoPs", str(len(pops)), str(len(pops)), "0")
    console.print(counts)

    metrics.rows_read = len(ter_rows) + len(sat_rows) + len(elements) + len(stations) + len(pops)
    metrics.rows_rejected = terrestrial.rejected + satellite.rejected
    metrics.files_written = 3
    metrics.metadata["planes"] = len(set(constellation.planes.values()))
    _finish(metrics)


# ---------------------------------------------------------------------------
#  simulate
# ---------------------------------------------------------------------------

_WORKER: Dict[str, object] = {}


def _init_worker(state: Dict[str, object]) -> None:
    _WORKER.clear()
    _WORKER.update(state)


def _simulate_job(src: Relay, dst: Relay) -> Tuple[str, Dict[int, LatencySeries], LatencySeries]:
    """Simulate both interfaces of one directed pair from the worker state."""
    state = _WORKER
    pair = (src, dst)
    sat = simulate_pair_multi_k(
        pair,
        state["timeline"],
        state["strategy"],
        state["k_values"],
        state["speeds"],
        state["seed"],
        state["ground"],
    )
    ter = simulate_pair(
        pair, state["timeline"], RoutingStrategy.TERRESTRIAL_ONLY, 1, state["speeds"], state["seed"], state["ground"]
    )
    return pair_id(src.fingerprint, dst.fingerprint), sat, ter


@cli.command()
@common_options
@log_performance("simulate")
def simulate(run: Run):
    """Simulate satellite and terrestrial RTT series for every circuit hop."""
    cfg = run.cfg
    metrics = StageMetrics(stage="simulate")
    strategy = RoutingStrategy.from_name(cfg.strategy)
    if not strategy.uses_satellites:
        raise ConfigError(
            f"strategy '{strategy.value}' has no satellite interface; "
            "terrestrial series are always simulated alongside the configured satellite strategy"
        )

    speeds = _load_speeds(run)
    constellation = _load_constellation(run)
    relays, circuits = _load_topology(run)
    by_fp = {r.fingerprint: r for r in relays}
    if cfg.timeline_start is not None:
        start = float(cfg.timeline_start)
    elif len(constellation):
        start = float(math.floor(constellation.latest_epoch))
    else:
        raise ConfigError("timeline_start=auto needs at least one satellite in the TLE file")
    timeline = Timeline(start, cfg.timeline_step_s, cfg.timeline_duration_s)
    ground = GroundSegment(
        constellation=constellation,
        stations=load_sites(cfg.stations),
        pops=load_sites(cfg.pops),
        graph_config=GraphConfig.from_experiment(cfg),
    )

    store = run.store
    pairs = unique_pairs(circuits)
    completed = store.load_completed()
    todo = [(src, dst) for src, dst in pairs if pair_id(src, dst) not in completed]
    metrics.rows_read = len(relays) + len(circuits)
    metrics.pairs_skipped = len(pairs) - len(todo)
    if metrics.pairs_skipped:
        logger.info(f"resuming: {metrics.pairs_skipped} pair(s) already simulated, {len(todo)} to go")

    state = {
        "timeline": timeline,
        "strategy": strategy,
        "k_values": cfg.analysis_k_values,
        "speeds": speeds,
        "seed": cfg.seed,
        "ground": ground,
    }
    jobs = cfg.jobs if cfg.jobs > 1 else settings.SATSIM_JOBS
    store.write_manifest(completed, len(pairs), timeline)

    def record(pid: str, sat: Dict[int, LatencySeries], ter: LatencySeries) -> None:
        store.write_pair(pid, sat, ter, cfg.k)
        completed.add(pid)
        store.write_manifest(completed, len(pairs), timeline)
        metrics.pairs_computed += 1

    with _progress() as progress:
        task = progress.add_task("simulate", total=len(todo))
        if jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as pool:
                futures = [pool.submit(_simulate_job, by_fp[src], by_fp[dst]) for src, dst in todo]
                for future in as_completed(futures):
                    record(*future.result())
                    progress.advance(task)
        else:
            _init_worker(state)
            for src, dst in todo:
                record(*_simulate_job(by_fp[src], by_fp[dst]))
                progress.advance(task)

    store.write_combined(store.load_completed(), cfg.k)
    metrics.files_written = metrics.pairs_computed + 1
    metrics.metadata["steps_per_series"] = timeline.n_steps
    metrics.metadata["jobs"] = jobs
    _finish(metrics)


# ---------------------------------------------------------------------------
#  calibrate
# ---------------------------------------------------------------------------


def _calibration_items(run: Run, circuits: List[Circuit], pairs) -> Dict[str, Tuple[LatencySeries, LatencySeries]]:
    if run.cfg.calibration_granularity == "pair":
        return dict(pairs)
    return _circuit_items(circuits, pairs)


@cli.command()
@common_options
@log_performance("calibrate")
def calibrate(run: Run):
    """Fit per-interface error models against measurements and calibrate the reduction table."""
    cfg = run.cfg
    metrics = StageMetrics(stage="calibrate")
    if cfg.measured is None:
        raise ConfigError("calibrate needs the 'measured' input file in the config")

    _, circuits = _load_topology(run)
    pairs = run.store.pairs(_pair_ids(circuits), cfg.k)
    items = _calibration_items(run, circuits, pairs)
    measured = load_measured(cfg.measured)

    models: Dict[Interface, ErrorModel] = {}
    for index, interface in enumerate((Interface.SATELLITE, Interface.TERRESTRIAL)):
        observed = measured.get(interface)
        if not observed:
            logger.warning(f"no measured {interface.value} series; that interface stays uncalibrated")
            continue
        simulated = {sid: pair[index] for sid, pair in items.items()}
        model = build_error_model(simulated, observed, cfg.calibration_percentiles, cfg.min_samples)
        models[interface] = model
        write_json(run.path("calibration", f"error_model_{interface.value}.json"), model.to_dict(), run.meta)
        metrics.rows_read += sum(len(s) for s in observed.values())
        metrics.metadata[f"{interface.value}_ids_used"] = model.circuits_used
        metrics.files_written += 1
    if not models:
        raise ConfigError(f"{cfg.measured}: no satellite or terrestrial series found")

    values, skipped = percentile_values(items, cfg.report_percentiles, cfg.min_samples)
    estimates = calibrate_estimates(values, models, cfg.calibration_draws, cfg.seed)
    calibrated = calibrate_values(values, models, cfg.calibration_draws, cfg.seed)

    write_csv(run.path("calibration", "estimates.csv"), pd.DataFrame(estimates), run.meta)
    for name, table_values in (("reduction_raw", values), ("reduction_calibrated", calibrated)):
        rows = reduction_rows(reductions_from_values(table_values, cfg.report_percentiles), cfg.reduction_bins)
        table = ReductionTable(bins=sorted(cfg.reduction_bins), rows=rows, skipped=skipped)
        write_csv(run.path("calibration", f"{name}.csv"), table.to_frame(), run.meta)
    metrics.files_written += 3
    metrics.pairs_skipped = skipped
    _finish(metrics)


# ---------------------------------------------------------------------------
#  dualhome
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@log_performance("dualhome")
def dualhome(run: Run):
    """Replay the interface scheduler with every relay dual-homed."""
    cfg = run.cfg
    metrics = StageMetrics(stage="dualhome")
    relays, circuits = _load_topology(run)
    store = run.store
    pairs = store.pairs(_pair_ids(circuits), cfg.k)
    timeline = store.timeline()
    plan = DeploymentPlan(
        scenario=DeploymentScenario.TOP_N,
        n=len(relays),
        members=frozenset(r.fingerprint for r in relays),
        seed=cfg.seed,
    )
    effective = effective_pair_series(circuits, pairs, plan, SchedulerConfig.from_experiment(cfg), timeline)

    rows = []
    for pid in sorted(effective):
        sat, ter = pairs[pid]
        for p in cfg.report_percentiles:
            try:
                rows.append(
                    {
                        "id": pid,
                        "percentile": p,
                        "terrestrial_ms": percentile(ter, p, cfg.min_samples),
                        "satellite_ms": percentile(sat, p, cfg.min_samples),
                        "effective_ms": percentile(effective[pid], p, cfg.min_samples),
                    }
                )
            except InsufficientDataError:
                metrics.pairs_skipped += 1
                break

    write_csv(run.path("dualhome", "effective_series.csv"), series_frame(effective[pid] for pid in sorted(effective)), run.meta)
    write_csv(run.path("dualhome", "summary.csv"), pd.DataFrame(rows), run.meta)
    metrics.pairs_computed = len(effective)
    metrics.files_written = 2
    _finish(metrics)


# ---------------------------------------------------------------------------
#  deploy-eval
# ---------------------------------------------------------------------------


@cli.command("deploy-eval")
@common_options
@log_performance("deploy-eval")
def deploy_eval(run: Run):
    """Evaluate every deployment scenario and size against the terrestrial baseline."""
    cfg = run.cfg
    metrics = StageMetrics(stage="deploy-eval")
    relays, circuits = _load_topology(run)
    store = run.store
    pairs = store.pairs(_pair_ids(circuits), cfg.k)
    timeline = store.timeline()
    scheduler = SchedulerConfig.from_experiment(cfg)

    summary = Table(title="Deployment evaluation (all percentiles, circuits)")
    for column in ("scenario", "n", "reduced", "mean reduction", "worsened"):
        summary.add_column(column, justify="right" if column != "scenario" else "left")

    for name in cfg.deployment_scenarios:
        scenario = DeploymentScenario.from_name(name)
        for n in cfg.deployment_n_values:
            plan = assign_deployment(relays, scenario, n, cfg.seed, cfg.exclude_hosting)
            report = evaluate_deployment(
                circuits, pairs, plan, scheduler, timeline, cfg.report_percentiles, cfg.min_samples
            )
            stem = f"{scenario.value}_n{n}"
            write_json(run.path("deploy", f"{stem}.json"), {**report.to_dict(), "plan": plan.to_dict()}, run.meta)
            write_csv(run.path("deploy", f"{stem}.csv"), report.to_frame(), run.meta)
            metrics.files_written += 2

            row = report.row("circuits", "all")
            summary.add_row(
                scenario.value,
                str(plan.n),
                f"{row['fraction_reduced']:.1%}",
                f"{row['mean_abs_reduction_ms']:.2f} ms",
                f"{row['fraction_worsened']:.1%}",
            )
    console.print(summary)
    _finish(metrics)


# ---------------------------------------------------------------------------
#  adversary
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@log_performance("adversary")
def adversary(run: Run):
    """Share of pairs and circuits the satellite provider can observe, per plan size."""
    cfg = run.cfg
    metrics = StageMetrics(stage="adversary")
    relays, circuits = _load_topology(run)
    pairs = unique_pairs(circuits)
    n_values = cfg.adversary_n_values or cfg.deployment_n_values
    for name in cfg.deployment_scenarios:
        scenario = DeploymentScenario.from_name(name)
        rows = visibility_curve(relays, scenario, n_values, cfg.seed, pairs, circuits, cfg.exclude_hosting)
        write_csv(run.path("adversary", f"visibility_{scenario.value}.csv"), pd.DataFrame(rows), run.meta)
        metrics.files_written += 1
        last = rows[-1]
        logger.info(
            f"{scenario.value}: n={last['n']} sees {last['pair_fraction']:.1%} of pairs, "
            f"{last['circuit_fraction']:.1%} of circuits"
        )
    metrics.rows_read = len(relays) + len(circuits)
    _finish(metrics)


# ---------------------------------------------------------------------------
#  correlate
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@log_performance("correlate")
def correlate(run: Run):
    """Tail-latency co-occurrence between pairs and between interfaces."""
    cfg = run.cfg
    metrics = StageMetrics(stage="correlate")
    _, circuits = _load_topology(run)
    pairs = run.store.pairs(_pair_ids(circuits), cfg.k)
    q, min_joint = cfg.tail_quantile, cfg.min_joint_samples

    for index, interface in enumerate((Interface.SATELLITE, Interface.TERRESTRIAL)):
        table = tail_correlation_table({pid: pair[index] for pid, pair in pairs.items()}, q, min_joint)
        write_csv(run.path("correlate", f"tail_{interface.value}.csv"), table, run.meta, index=True)
        metrics.files_written += 1

    log = ContextLogger(stage="correlate", seed=cfg.seed)
    rows = []
    for pid in sorted(pairs):
        sat, ter = pairs[pid]
        row = {"id": pid, "p_ter_tail_given_sat_tail": None, "p_sat_tail_given_ter_tail": None}
        try:
            row["p_ter_tail_given_sat_tail"] = tail_correlation(sat, ter, q, min_joint)
            row["p_sat_tail_given_ter_tail"] = tail_correlation(ter, sat, q, min_joint)
        except SatsimError as e:
            metrics.pairs_skipped += 1
            log.debug(f"cross-interface tail undefined: {e}", context={"pair": pid})
        rows.append(row)
    write_csv(run.path("correlate", "cross_interface.csv"), pd.DataFrame(rows), run.meta)
    metrics.files_written += 1
    metrics.pairs_computed = len(pairs) - metrics.pairs_skipped
    _finish(metrics)


# ---------------------------------------------------------------------------
#  report
# ---------------------------------------------------------------------------


@cli.command()
@common_options
@log_performance("report")
def report(run: Run):
    """Reduction table, distance histogram, percentile curves, K sensitivity and summary."""
    cfg = run.cfg
    metrics = StageMetrics(stage="report")
    relays, circuits = _load_topology(run)
    store = run.store
    pair_ids = _pair_ids(circuits)
    pairs = store.pairs(pair_ids, cfg.k)
    by_fp = {r.fingerprint: r for r in relays}

    circuit_table = reduction_table(
        _circuit_items(circuits, pairs), cfg.report_percentiles, cfg.reduction_bins, cfg.min_samples
    )
    pair_table = reduction_table(pairs, cfg.report_percentiles, cfg.reduction_bins, cfg.min_samples)
    frames = []
    for level, table in (("circuits", circuit_table), ("pairs", pair_table)):
        frame = table.to_frame()
        frame.insert(0, "level", level)
        frames.append(frame)
    write_csv(run.path("report", "reduction_table.csv"), pd.concat(frames, ignore_index=True), run.meta)

    medians, _ = percentile_values(pairs, [50], cfg.min_samples)
    reductions = {pid: reductions_from_values({pid: medians[pid]}, [50])[50][0] for pid in medians}
    endpoints = {}
    for pid in reductions:
        src, dst = split_pair_id(pid)
        endpoints[pid] = (by_fp[src].position, by_fp[dst].position)
    histogram = group_reduction_by_distance(endpoints, reductions, cfg.bucket_km)
    write_csv(
        run.path("report", "distance_histogram.csv"),
        pd.DataFrame([bucket.to_dict() for _, bucket in sorted(histogram.items())]),
        run.meta,
    )

    curve_rows = []
    for pid in sorted(pairs):
        for index, interface in enumerate((Interface.SATELLITE, Interface.TERRESTRIAL)):
            try:
                curve = percentile_curve(pairs[pid][index], cfg.calibration_percentiles, cfg.min_samples)
            except InsufficientDataError:
                continue
            curve_rows += [{"id": pid, "interface": interface.value, "percentile": p, "rtt_ms": v} for p, v in curve.items()]
    write_csv(run.path("report", "percentile_curves.csv"), pd.DataFrame(curve_rows), run.meta)

    series_by_k: Dict[int, Dict[str, LatencySeries]] = {}
    for pid in pair_ids:
        for k, series in store.read_satellite_k(pid).items():
            series_by_k.setdefault(k, {})[pid] = series
    sensitivity = k_sensitivity(series_by_k, baseline_k=cfg.k)
    write_csv(
        run.path("report", "k_sensitivity.csv"),
        pd.DataFrame([{"k": k, **row} for k, row in sorted(sensitivity.items())]),
        run.meta,
    )

    overhead = probe_overhead_bytes_per_day(cfg.scheduler_budget, cfg.scheduler_interval_s, cfg.probe_bytes)
    median_row = circuit_table.row(50) if 50 in cfg.report_percentiles and circuit_table.rows else None
    summary = {
        "pairs": len(pair_ids),
        "circuits": len(circuits),
        "skipped": {"circuits": circuit_table.skipped, "pairs": pair_table.skipped},
        "probe_overhead_bytes_per_day": overhead,
        "probe_overhead_mb_per_day": overhead / 1e6,
        "median_circuit_share_reduced_gt_first_bin": median_row[f">{sorted(cfg.reduction_bins)[0]:g}"] if median_row else None,
        "plt_per_10ms_rtt_reduction_ms": rtt_to_plt_ms(10.0),
    }
    write_json(run.path("report", "summary.json"), summary, run.meta)
    metrics.files_written = 5
    metrics.pairs_computed = len(pairs)
    metrics.metadata["probe_overhead"] = f"{overhead / 1e6:.2f} MB/day"
    _finish(metrics)


def main() -> None:
    cli(prog_name="satsim")


if __name__ == "__main__":
    main()
