"""Experiment harness: data ingestion, strategy evaluation, report emission.

An experiment is a cartesian product of strategies and traces. Session
randomness (playlist draw, viewer watch times) is keyed by (seed, trace)
only, so every strategy faces the same viewers on the same traces and QoE
differences are paired. Reports are written with repr-formatted floats so
equal runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import glob as globmod
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .media import NetworkSample, Trace, VideoMeta, VideoState, WatchRecord
from .policy import MlpNet, PolicyConfig, Strategy, baseline_policy, load_checkpoint
from .ppo import EpisodeLog, TrainConfig, train
from .sim import RetentionSource, SimConfig, SessionMetrics, run_session
from .watchtime import LadderMissingError, ParamTable, WeibullParams


class DataError(Exception):
    """Malformed or missing input data (exit code 2)."""


class ConfigError(Exception):
    """Invalid configuration or unusable spec (exit code 1)."""


RETENTION_RECORD_HEADER = "user_id,video_id,duration_s,watch_time_s"
RETENTION_PARAMS_HEADER = "video_id,beta,eta,gamma"

# Strategies whose demand computation needs fitted watch-time parameters.
PARAM_STRATEGIES = frozenset({"deload", "deload_1s", "deload_5s"})


def ingest_traces(pattern: str) -> list[Trace]:
    """Load every trace matching the glob, sorted by filename.

    Each file holds `timestamp_ms,bandwidth_mbps` lines (an optional header
    is skipped). Raises DataError naming the file and line on bad input.
    """
    paths = sorted(globmod.glob(pattern))
    if not paths:
        raise DataError(f"no traces match {pattern!r}")
    traces = []
    for path in paths:
        samples = []
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                parts = raw.split(",")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
                try:
                    ts, bw = float(parts[0]), float(parts[1])
                except ValueError:
                    if lineno == 1:
                        continue  # header
                    raise DataError(f"{path}:{lineno}: non-numeric fields {raw!r}")
                samples.append(NetworkSample(timestamp_ms=ts, bandwidth_mbps=bw))
        try:
            traces.append(Trace(trace_id=Path(path).stem, samples=samples))
        except ValueError as err:
            raise DataError(f"{path}: {err}")
    return traces


def load_catalog(path) -> list[VideoMeta]:
    """Read videos.csv: header then video_id,duration_s,ladder_mbps rows
    with ';'-separated ladder rungs."""
    catalog = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "video_id,duration_s,ladder_mbps":
            raise DataError(f"{path}: bad catalog header {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields")
            try:
                meta = VideoMeta(
                    video_id=parts[0],
                    duration_s=float(parts[1]),
                    bitrate_ladder=tuple(float(b) for b in parts[2].split(";")),
                )
            except ValueError as err:
                raise DataError(f"{path}:{lineno}: {err}")
            catalog.append(meta)
    if not catalog:
        raise DataError(f"{path}: empty catalog")
    return catalog


def load_watch_records(path) -> list[WatchRecord]:
    records = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != RETENTION_RECORD_HEADER:
            raise DataError(f"{path}: bad watch-record header {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields")
            try:
                records.append(
                    WatchRecord(
                        user_id=parts[0],
                        video_id=parts[1],
                        duration_s=float(parts[2]),
                        watch_time_s=float(parts[3]),
                    )
                )
            except ValueError as err:
                raise DataError(f"{path}:{lineno}: {err}")
    if not records:
        raise DataError(f"{path}: no watch records")
    return records


def load_retention(path, default: WeibullParams | None = None) -> RetentionSource:
    """Build a retention source from either record shape.

    The header line discriminates: watch records
    (user_id,video_id,duration_s,watch_time_s) become empirical pools per
    video; parameter rows (video_id,beta,eta,gamma) become per-video
    distributions.
    """
    with open(path) as fh:
        header = fh.readline().strip()
    if header == RETENTION_RECORD_HEADER:
        records = load_watch_records(path)
        pools: dict[str, list[float]] = {}
        for rec in records:
            pools.setdefault(rec.video_id, []).append(rec.watch_time_s)
        return RetentionSource(empirical=pools, default=default)
    if header == RETENTION_PARAMS_HEADER:
        params: dict[str, WeibullParams] = {}
        with open(path) as fh:
            fh.readline()
            for lineno, raw in enumerate(fh, start=2):
                raw = raw.strip()
                if not raw:
                    continue
                parts = raw.split(",")
                if len(parts) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 fields")
                try:
                    params[parts[0]] = WeibullParams(
                        shape=float(parts[1]), scale=float(parts[2]), location=float(parts[3])
                    )
                except ValueError as err:
                    raise DataError(f"{path}:{lineno}: {err}")
        if not params:
            raise DataError(f"{path}: no retention parameters")
        return RetentionSource(params=params, default=default)
    raise DataError(
        f"{path}: unrecognized retention header {header!r}; expected "
        f"{RETENTION_RECORD_HEADER!r} or {RETENTION_PARAMS_HEADER!r}"
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything an evaluation run needs."""

    strategies: tuple[str, ...]
    traces_glob: str
    videos_path: str
    retention_path: str
    param_table_path: str | None = None
    checkpoint_path: str | None = None
    no_wte_checkpoint_path: str | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    jobs: int = 1


@dataclass
class RunRecord:
    """Aggregates of one (strategy, trace) session."""

    strategy: str
    trace_id: str
    trace_mean_mbps: float
    qoe: float
    rebuffer_s: float
    downloaded_bits: float
    watched_bits: float
    wasted_bits: float
    waste_ratio: float
    n_actions: int
    n_swipes: int
    mean_range_s: float
    qoe_norm: float = 0.0
    action_durations: list[float] = field(default_factory=list)
    action_qs: list[float] = field(default_factory=list)
    action_issued: list[float] = field(default_factory=list)
    action_videos: list[int] = field(default_factory=list)
    action_bitrates: list[float] = field(default_factory=list)
    action_rewards: list[float] = field(default_factory=list)


@dataclass
class Report:
    """All run records of one experiment plus derived summaries."""

    runs: list[RunRecord]
    strategies: tuple[str, ...]
    seed: int

    def normalize(self) -> None:
        """Min-max QoE over the whole experiment; degenerate spread -> 0."""
        if not self.runs:
            return
        qoes = [r.qoe for r in self.runs]
        lo, hi = min(qoes), max(qoes)
        span = hi - lo
        for r in self.runs:
            r.qoe_norm = 0.0 if span <= 0.0 else (r.qoe - lo) / span

    def mean_qoe(self, strategy: str) -> float:
        vals = [r.qoe for r in self.runs if r.strategy == strategy]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> dict:
        out: dict = {"seed": self.seed, "strategies": list(self.strategies), "per_strategy": {}}
        for s in self.strategies:
            runs = [r for r in self.runs if r.strategy == s]
            if not runs:
                continue
            out["per_strategy"][s] = {
                "n_runs": len(runs),
                "mean_qoe": float(np.mean([r.qoe for r in runs])),
                "median_qoe": float(np.median([r.qoe for r in runs])),
                "mean_qoe_norm": float(np.mean([r.qoe_norm for r in runs])),
                "mean_rebuffer_s": float(np.mean([r.rebuffer_s for r in runs])),
                "mean_waste_ratio": float(np.mean([r.waste_ratio for r in runs])),
                "mean_range_s": float(np.mean([r.mean_range_s for r in runs])),
            }
        return out


def session_record(strategy: Strategy, metrics: SessionMetrics, trace: Trace) -> RunRecord:
    durations = [a.duration_s for a in metrics.actions]
    return RunRecord(
        strategy=strategy.name,
        trace_id=trace.trace_id,
        trace_mean_mbps=trace.mean_bandwidth_mbps,
        qoe=metrics.qoe,
        rebuffer_s=metrics.total_rebuffer_s,
        downloaded_bits=metrics.downloaded_bits,
        watched_bits=metrics.watched_bits,
        wasted_bits=metrics.wasted_bits,
        waste_ratio=metrics.waste_ratio,
        n_actions=len(metrics.actions),
        n_swipes=metrics.n_swipes,
        mean_range_s=float(np.mean(durations)) if durations else 0.0,
        action_durations=durations,
        action_qs=[a.q_mbps for a in metrics.actions],
        action_issued=[a.issued_at_s for a in metrics.actions],
        action_videos=[a.video_index for a in metrics.actions],
        action_bitrates=[a.bitrate_mbps for a in metrics.actions],
        action_rewards=[a.reward for a in metrics.actions],
    )


def make_playlist_source(
    catalog: list[VideoMeta],
    table: ParamTable | None,
    n_videos: int,
    rng: np.random.Generator,
    user_id: str | None,
):
    """Iterator of fresh VideoStates for one session.

    Samples without replacement from the catalog (all of it if smaller) and
    attaches fused watch-time parameters when a table is present.
    """
    n = min(n_videos, len(catalog))
    order = rng.choice(len(catalog), size=n, replace=False)
    for idx in order:
        meta = catalog[int(idx)]
        params = None
        if table is not None:
            try:
                params = table.fused(user_id, meta.video_id, meta.duration_s)
            except LadderMissingError as err:
                raise DataError(str(err))
        yield VideoState(meta=meta, watch_params=params)


def simulate_one(
    strategy: Strategy,
    trace: Trace,
    trace_index: int,
    catalog: list[VideoMeta],
    table: ParamTable | None,
    retention: RetentionSource,
    sim_cfg: SimConfig,
    seed: int,
) -> SessionMetrics:
    """Run one session with randomness keyed by (seed, trace) only."""
    user_id = f"viewer-{trace_index}"
    playlist_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, trace_index, 11)))
    source = make_playlist_source(catalog, table, sim_cfg.videos_per_session, playlist_rng, user_id)
    return run_session(
        trace,
        source,
        retention,
        strategy,
        sim_cfg,
        seed=(seed, trace_index, 13),
        user_id=user_id,
    )


def _worker(args) -> RunRecord:
    strategy, trace, trace_index, catalog, table, retention, sim_cfg, seed = args
    metrics = simulate_one(strategy, trace, trace_index, catalog, table, retention, sim_cfg, seed)
    return session_record(strategy, metrics, trace)


def build_strategies(spec: ExperimentSpec) -> list[Strategy]:
    """Resolve strategy names, loading checkpoints where needed.

    Fails fast (ConfigError) before any simulation when a learned strategy
    lacks its checkpoint or a demand strategy lacks the parameter table.
    """
    strategies: list[Strategy] = []
    for name in spec.strategies:
        if name == "deload":
            if not spec.checkpoint_path:
                raise ConfigError("strategy 'deload' needs checkpoint_path")
            net = _load_net(spec.checkpoint_path, want_wte=True)
            strategies.append(baseline_policy(name, net))
        elif name == "deload_no_wte":
            if not spec.no_wte_checkpoint_path:
                raise ConfigError("strategy 'deload_no_wte' needs no_wte_checkpoint_path")
            net = _load_net(spec.no_wte_checkpoint_path, want_wte=False)
            strategies.append(baseline_policy(name, net))
        else:
            try:
                strategies.append(baseline_policy(name))
            except ValueError as err:
                raise ConfigError(str(err))
    if PARAM_STRATEGIES & set(spec.strategies) and not spec.param_table_path:
        raise ConfigError(
            f"strategies {sorted(PARAM_STRATEGIES & set(spec.strategies))} need param_table_path"
        )
    return strategies


def _load_net(path, want_wte: bool) -> MlpNet:
    try:
        net = load_checkpoint(path)
    except OSError as err:
        raise ConfigError(f"cannot read checkpoint {path}: {err}")
    if net.cfg.include_watch_estimates != want_wte:
        kind = "with" if want_wte else "without"
        raise ConfigError(f"checkpoint {path} was not trained {kind} watch-time estimation")
    return net


def train_policy(
    traces: list[Trace],
    catalog: list[VideoMeta],
    retention: RetentionSource,
    table: ParamTable | None,
    policy_cfg: PolicyConfig,
    train_cfg: TrainConfig,
    sim_cfg: SimConfig,
    seed: int,
    dump_path=None,
) -> tuple[MlpNet, list[EpisodeLog]]:
    """Train a fresh range policy on the given traces.

    Episode randomness (playlist, viewer, channel) is keyed by (seed,
    episode) so repeated runs reproduce the same learning curve exactly.
    """
    net = MlpNet.create(policy_cfg, seed)

    def session_factory(strategy: Strategy, trace: Trace, ep_seed) -> SessionMetrics:
        entropy = ep_seed if isinstance(ep_seed, tuple) else (ep_seed,)
        user = f"trainee-{entropy[-1]}"
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(*entropy, 11)))
        source = make_playlist_source(catalog, table, sim_cfg.videos_per_session, rng, user)
        return run_session(
            trace, source, retention, strategy, sim_cfg, seed=(*entropy, 13), user_id=user
        )

    return train(net, traces, session_factory, train_cfg, seed, dump_path=dump_path)


def run_experiment(spec: ExperimentSpec, out_dir) -> Report:
    """Evaluate every strategy on every trace and write the report files."""
    traces = ingest_traces(spec.traces_glob)
    catalog = load_catalog(spec.videos_path)
    if len(catalog) < 1:
        raise DataError("catalog is empty")
    retention = load_retention(spec.retention_path)
    table = ParamTable.load(spec.param_table_path) if spec.param_table_path else None
    strategies = build_strategies(spec)

    tasks = [
        (strategy, trace, ti, catalog, table, retention, spec.sim, spec.seed)
        for strategy in strategies
        for ti, trace in enumerate(traces)
    ]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            runs = list(pool.map(_worker, tasks, chunksize=8))
    else:
        runs = [_worker(t) for t in tasks]

    report = Report(runs=runs, strategies=tuple(s.name for s in strategies), seed=spec.seed)
    report.normalize()
    write_report(report, out_dir)
    return report


REPORT_HEADER = (
    "strategy,trace_id,trace_mean_mbps,qoe,qoe_norm,rebuffer_s,downloaded_bits,"
    "watched_bits,wasted_bits,waste_ratio,n_actions,n_swipes,mean_range_s"
)
ACTIONS_HEADER = "strategy,trace_id,issued_at_s,video_index,duration_s,bitrate_mbps,q_mbps,reward"


def write_report(report: Report, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in report.runs:
            fh.write(
                f"{r.strategy},{r.trace_id},{r.trace_mean_mbps!r},{r.qoe!r},{r.qoe_norm!r},"
                f"{r.rebuffer_s!r},{r.downloaded_bits!r},{r.watched_bits!r},{r.wasted_bits!r},"
                f"{r.waste_ratio!r},{r.n_actions},{r.n_swipes},{r.mean_range_s!r}\n"
            )
    with open(out / "actions.csv", "w") as fh:
        fh.write(ACTIONS_HEADER + "\n")
        for r in report.runs:
            for t, vi, d, b, q, rew in zip(
                r.action_issued,
                r.action_videos,
                r.action_durations,
                r.action_bitrates,
                r.action_qs,
                r.action_rewards,
            ):
                fh.write(f"{r.strategy},{r.trace_id},{t!r},{vi},{d!r},{b!r},{q!r},{rew!r}\n")
    with open(out / "summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(run_dir) -> Report:
    """Rebuild a Report from report.csv + actions.csv written earlier."""
    run = Path(run_dir)
    runs: list[RunRecord] = []
    index: dict[tuple[str, str], RunRecord] = {}
    strategies: list[str] = []
    try:
        with open(run / "report.csv") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rec = RunRecord(
                    strategy=row["strategy"],
                    trace_id=row["trace_id"],
                    trace_mean_mbps=float(row["trace_mean_mbps"]),
                    qoe=float(row["qoe"]),
                    rebuffer_s=float(row["rebuffer_s"]),
                    downloaded_bits=float(row["downloaded_bits"]),
                    watched_bits=float(row["watched_bits"]),
                    wasted_bits=float(row["wasted_bits"]),
                    waste_ratio=float(row["waste_ratio"]),
                    n_actions=int(row["n_actions"]),
                    n_swipes=int(row["n_swipes"]),
                    mean_range_s=float(row["mean_range_s"]),
                    qoe_norm=float(row["qoe_norm"]),
                )
                runs.append(rec)
                index[(rec.strategy, rec.trace_id)] = rec
                if rec.strategy not in strategies:
                    strategies.append(rec.strategy)
        with open(run / "actions.csv") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rec = index[(row["strategy"], row["trace_id"])]
                rec.action_issued.append(float(row["issued_at_s"]))
                rec.action_videos.append(int(row["video_index"]))
                rec.action_durations.append(float(row["duration_s"]))
                rec.action_bitrates.append(float(row["bitrate_mbps"]))
                rec.action_qs.append(float(row["q_mbps"]))
                rec.action_rewards.append(float(row["reward"]))
    except OSError as err:
        raise DataError(f"cannot load report from {run_dir}: {err}")
    except (KeyError, ValueError) as err:
        raise DataError(f"malformed report in {run_dir}: {err}")
    return Report(runs=runs, strategies=tuple(strategies), seed=0)


def range_medians_by_trace_tercile(report: Report, strategy: str) -> dict[str, float]:
    """Median issued range duration pooled over traces grouped into
    throughput terciles (by per-trace mean bandwidth)."""
    runs = [r for r in report.runs if r.strategy == strategy]
    if not runs:
        raise ValueError(f"no runs for strategy {strategy!r}")
    runs.sort(key=lambda r: (r.trace_mean_mbps, r.trace_id))
    groups = np.array_split(np.arange(len(runs)), 3)
    out: dict[str, float] = {}
    for name, idxs in zip(("low", "mid", "high"), groups):
        durations: list[float] = []
        for i in idxs:
            durations.extend(runs[int(i)].action_durations)
        out[name] = float(np.median(durations)) if durations else math.nan
    return out


def emit_plots_data(report: Report, out_dir, n_bins: int = 24) -> None:
    """Write plot-ready CSVs: QoE CDFs, rebuffer/waste scatter, and
    range-duration histograms bucketed by per-action throughput tercile."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "qoe_cdf.csv", "w") as fh:
        fh.write("strategy,qoe_norm,cdf\n")
        for s in report.strategies:
            vals = sorted(r.qoe_norm for r in report.runs if r.strategy == s)
            for i, v in enumerate(vals):
                fh.write(f"{s},{v!r},{(i + 1) / len(vals)!r}\n")

    with open(out / "rebuffer_waste.csv", "w") as fh:
        fh.write("strategy,trace_id,rebuffer_s,waste_ratio\n")
        for r in report.runs:
            fh.write(f"{r.strategy},{r.trace_id},{r.rebuffer_s!r},{r.waste_ratio!r}\n")

    with open(out / "range_hist.csv", "w") as fh:
        fh.write("strategy,tercile,bin_lo,bin_hi,count,density\n")
        for s in report.strategies:
            qs: list[float] = []
            ds: list[float] = []
            for r in report.runs:
                if r.strategy == s:
                    qs.extend(r.action_qs)
                    ds.extend(r.action_durations)
            if not qs:
                continue
            q_arr = np.asarray(qs)
            d_arr = np.asarray(ds)
            q33, q67 = np.quantile(q_arr, [1.0 / 3.0, 2.0 / 3.0])
            # Every action lands in exactly one tercile.
            bins_by_name = {
                "low": q_arr <= q33,
                "mid": (q_arr > q33) & (q_arr <= q67),
                "high": q_arr > q67,
            }
            edges = np.linspace(float(d_arr.min()), float(d_arr.max()) + 1e-9, n_bins + 1)
            width = edges[1] - edges[0]
            for name, mask in bins_by_name.items():
                sel = d_arr[mask]
                counts, _ = np.histogram(sel, bins=edges)
                total = max(int(sel.size), 1)
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    fh.write(
                        f"{s},{name},{float(lo)!r},{float(hi)!r},{int(c)},"
                        f"{float(c / (total * width))!r}\n"
                    )
