"""Robust second-order online learning for time-series forecasting.

Natural-gradient updates under a Student's-t likelihood with layerwise
Kronecker-factored curvature, reservoir-sampled experience replay and a
score-driven dynamic scale, plus OGD/ER baselines, synthetic stream
generators, CSV ingestion and an experiment CLI.
"""

from .errors import (
    ConfigError,
    CurvatureError,
    DegenerateSeriesError,
    IngestionError,
    InputError,
    NatsrError,
    NumericError,
    ShapeError,
    StateError,
)
from .kfac import KfacEngine, LossStats, bound_value, mc_fisher_factors, refresh_decision
from .likelihood import (
    LossValue,
    StudentTSpec,
    gaussian_nll,
    gaussian_score,
    sample_predictive,
    t_full_nll,
    t_nll,
    t_output_fisher_kappa,
    t_score_max,
    t_score_output,
)
from .linalg import SpdFactor, kron_apply, matmul, spd_solve
from .metrics import RunSummary, StepRecord, mase, summarize
from .network import ConvFrontSpec, Network, NetworkSpec, load_checkpoint, save_checkpoint
from .optimizer import (
    OptimizerConfig,
    RunResult,
    UpdateState,
    WarmupConfig,
    baseline_step,
    build_network_spec,
    natsr_step,
    run_online,
    warmup_train,
)
from .replay import ReservoirBuffer, load_buffer, reservoir_update, sample_batch, save_buffer
from .scale import ScaleState, scale_step, tau_from_scale
from .streams import (
    NormalizationStats,
    RegimeSegment,
    TimeSeriesFrame,
    WindowedSample,
    export_csv,
    gen_outlier_sinusoid,
    gen_regime_switch,
    ingest_csv,
    split_and_window,
)

__version__ = "0.1.0"
