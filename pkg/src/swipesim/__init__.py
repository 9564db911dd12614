"""Trace-driven simulator for short-video preloading strategies.

Watch-time estimation (three-parameter Weibull with per-dimension fusion),
demand-based video selection, a learned continuous range policy trained with
PPO, fixed baselines, and an experiment harness with deterministic reports.
"""

from .demand import DemandVector, compute_demands, demand_playing, select_video
from .harness import (
    ConfigError,
    DataError,
    ExperimentSpec,
    Report,
    RunRecord,
    ingest_traces,
    load_catalog,
    load_report,
    load_retention,
    load_watch_records,
    range_medians_by_trace_tercile,
    run_experiment,
    simulate_one,
    train_policy,
)
from .media import (
    NetworkSample,
    Playlist,
    RangeSegment,
    Trace,
    VideoMeta,
    VideoState,
    WatchRecord,
    advance_playback,
    swipe,
)
from .policy import (
    MlpNet,
    PolicyConfig,
    RangeAction,
    Strategy,
    baseline_policy,
    build_state,
    load_checkpoint,
    map_to_range,
    sample_action,
    save_checkpoint,
)
from .ppo import (
    RewardWeights,
    TrainConfig,
    Transition,
    attribute_reward_terms,
    compute_reward,
    discounted_returns,
    ppo_update,
    train,
    write_learning_curve,
)
from .sim import RetentionSource, SessionMetrics, SimConfig, abr_select, estimate_network, run_session
from .synthetic import SyntheticSpec, write_suite
from .watchtime import (
    FitConfig,
    FitError,
    ParamTable,
    WeibullFit,
    WeibullParams,
    build_param_table,
    fit_weibull_lse,
    fuse_params,
    sample_weibull,
    weibull_cdf,
    weibull_pdf,
    weibull_quantile,
    weibull_survival,
)

__version__ = "0.1.0"
