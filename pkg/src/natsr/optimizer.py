"""Per-step update rules and the predict-then-update online loop.

The robust second-order step combines the new observation's gradient with a
lam-weighted replay gradient, solves against the damped layerwise curvature,
smooths the resulting direction with an EMA and applies it with a constant
learning rate; the `fast` variant additionally pushes the smoothed direction
through adaptive-moment normalization. Baselines share the same loop skeleton:
plain gradient descent on the Gaussian loss, with (er) or without (ogd) the
replay term.

Every run follows the same protocol: offline warm-up on the first fifth of
the stream with adaptive moments, cosine-decayed learning rate and
patience-based early stopping on the following validation slice; then the
optimizer state is reset and the remaining stream is consumed one observation
at a time, always forecasting before updating. Isolated curvature or numeric
failures skip that step's update and are flagged in its record rather than
aborting the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CurvatureError, DegenerateSeriesError, NumericError
from .kfac import KfacEngine, analytic_factor_pairs, bound_value, mc_fisher_factors, refresh_decision
from .likelihood import StudentTSpec, gaussian_nll, gaussian_score, t_nll, t_score_output
from .metrics import StepRecord, RunSummary, summarize
from .network import ConvFrontSpec, Network, NetworkSpec
from .replay import ReservoirBuffer, reservoir_update, sample_batch
from .scale import ScaleState, scale_step, tau_from_scale
from .seeding import spawn_streams
from .streams import SplitWindows, TimeSeriesFrame, WindowedSample, split_and_window

VARIANTS = ("natsr_stable", "natsr_fast", "ogd", "er")


@dataclass
class OptimizerConfig:
    variant: str
    eta: float
    lam: float = 1.0
    nu: float = 50.0
    beta: float = 1.0
    alpha_s: float = 0.1
    scale_floor: float = 1e-4
    s2_init: float = 1.0
    alpha_ema_step: float = 0.5
    alpha_ema_factors: float = 0.5
    replay_batch: int = 8
    mc_samples: int = 100
    buffer_capacity: int = 500
    max_stale: int = 100
    refresh_z: float = 2.326
    tau_variant: str = "bounded"
    damping: str = "exact"
    factor_source: str = "mc"  # "analytic" is exact for single-layer networks
    dynamic_scale: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.factor_source not in ("mc", "analytic"):
            raise ConfigError(f"unknown factor_source {self.factor_source!r}")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigError("eta must be finite and > 0")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")

    @property
    def uses_curvature(self) -> bool:
        return self.variant in ("natsr_stable", "natsr_fast")


@dataclass
class WarmupConfig:
    lr: float = 1e-3
    max_epochs: int = 60
    batch: int = 32
    patience: int = 5


@dataclass
class UpdateState:
    delta_ema: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, p: int) -> "UpdateState":
        return cls(delta_ema=np.zeros(p), adam_m=np.zeros(p), adam_v=np.zeros(p))


def _adam_normalize(state: UpdateState, vec: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    state.step_count += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.adam_m = b1 * state.adam_m + (1.0 - b1) * vec
    state.adam_v = b2 * state.adam_v + (1.0 - b2) * vec * vec
    m_hat = state.adam_m / (1.0 - b1**state.step_count)
    v_hat = state.adam_v / (1.0 - b2**state.step_count)
    return m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


# -- single steps --------------------------------------------------------------------


def natsr_step(
    net: Network,
    engine: KfacEngine,
    buffer: ReservoirBuffer,
    scale: ScaleState,
    ustate: UpdateState,
    sample: WindowedSample,
    cfg: OptimizerConfig,
    step_index: int,
    replay_rng,
    mc_rng,
) -> tuple[np.ndarray, StepRecord | dict]:
    """One robust second-order update; returns (normalized forecast, record fields).

    Order of operations: draw replay batch; combined loss/gradient at current
    weights; tau from the scale; refresh decision (recompute MC factors, EMA
    them and rebuild the damped inverse only when it fires); natural direction;
    score-driven scale update; EMA of the step; optional adaptive-moment
    normalization; apply. The new sample enters the reservoir at the end.
    """
    x_new = sample.x[None, :]
    tspec = StudentTSpec(cfg.nu, scale.s2)

    replay = []
    if cfg.lam > 0 and cfg.buffer_capacity > 0:
        replay = sample_batch(buffer, cfg.replay_batch, replay_rng)

    pred_new, cache_new = net.forward(x_new)
    forecast = pred_new[0].copy()
    loss_new = t_nll(sample.y, pred_new[0], tspec)
    flat_grad = net.backward(cache_new, t_score_output(loss_new.errors, tspec)[None, :], weights=[1.0])
    loss_total = loss_new.total
    errors_all = [loss_new.errors]
    xb = None
    if replay:
        xb = np.stack([s.x for s in replay])
        yb = np.stack([s.y for s in replay])
        pred_b, cache_b = net.forward(xb)
        lv_b = t_nll(yb, pred_b, tspec)
        loss_total += cfg.lam * lv_b.total
        w_b = np.full(xb.shape[0], 1.0 / xb.shape[0])
        flat_grad += cfg.lam * net.backward(cache_b, t_score_output(lv_b.errors, tspec), weights=w_b)
        errors_all.append(lv_b.errors.reshape(-1))

    tau = tau_from_scale(scale)
    fields = {
        "loss": loss_total,
        "forecast_norm": forecast,
        "s2": scale.s2,
        "tau": tau,
        "bound": bound_value(tspec, net.output_dim, tau),
        "fim_refreshed": False,
        "skipped": False,
        "natural_norm": None,
        "update_norm": 0.0,
    }
    steps_since = step_index - (engine.last_refresh_step if engine.last_refresh_step is not None else -cfg.max_stale)
    do_refresh = refresh_decision(loss_total, engine.loss_stats, steps_since, cfg.max_stale, cfg.refresh_z)
    engine.loss_stats.update(loss_total)
    try:
        if do_refresh:
            if cfg.factor_source == "analytic":
                factors = analytic_factor_pairs(net, x_new, xb, tspec, cfg.lam)
            else:
                factors = mc_fisher_factors(net, x_new, xb, tspec, cfg.mc_samples, cfg.lam, mc_rng)
            engine.update_factor_emas(factors, cfg.alpha_ema_factors)
            engine.prepare_inverse(tau)
            engine.last_refresh_step = step_index
            fields["fim_refreshed"] = True
        delta_star = engine.apply_inverse(flat_grad)
    except (CurvatureError, NumericError):
        fields["skipped"] = True
        reservoir_update(buffer, sample)
        return forecast, fields

    if cfg.dynamic_scale:
        scale_step(scale, np.concatenate(errors_all), cfg.nu)

    ustate.delta_ema = cfg.alpha_ema_step * delta_star + (1.0 - cfg.alpha_ema_step) * ustate.delta_ema
    step_vec = _adam_normalize(ustate, ustate.delta_ema, cfg) if cfg.variant == "natsr_fast" else ustate.delta_ema
    net.apply_delta(step_vec, cfg.eta)
    reservoir_update(buffer, sample)
    fields["natural_norm"] = float(np.linalg.norm(delta_star))
    fields["update_norm"] = float(cfg.eta * np.linalg.norm(step_vec))
    fields["delta_star"] = delta_star
    return forecast, fields


def baseline_step(
    net: Network,
    buffer: ReservoirBuffer | None,
    sample: WindowedSample,
    cfg: OptimizerConfig,
    replay_rng,
) -> tuple[np.ndarray, dict]:
    """Plain gradient step on the Gaussian loss; `er` adds the replay term."""
    x_new = sample.x[None, :]
    pred_new, cache_new = net.forward(x_new)
    forecast = pred_new[0].copy()
    lv = gaussian_nll(sample.y, pred_new[0])
    flat_grad = net.backward(cache_new, gaussian_score(lv.errors)[None, :], weights=[1.0])
    loss_total = lv.total
    if cfg.variant == "er" and buffer is not None and cfg.lam > 0 and cfg.buffer_capacity > 0:
        replay = sample_batch(buffer, cfg.replay_batch, replay_rng)
        if replay:
            xb = np.stack([s.x for s in replay])
            yb = np.stack([s.y for s in replay])
            pred_b, cache_b = net.forward(xb)
            lv_b = gaussian_nll(yb, pred_b)
            loss_total += cfg.lam * lv_b.total
            w_b = np.full(xb.shape[0], 1.0 / xb.shape[0])
            flat_grad += cfg.lam * net.backward(cache_b, gaussian_score(lv_b.errors), weights=w_b)
    fields = {
        "loss": loss_total,
        "forecast_norm": forecast,
        "s2": None,
        "tau": None,
        "bound": None,
        "fim_refreshed": False,
        "skipped": False,
        "natural_norm": None,
        "update_norm": 0.0,
    }
    try:
        net.apply_delta(flat_grad, cfg.eta)
        fields["update_norm"] = float(cfg.eta * np.linalg.norm(flat_grad))
    except NumericError:
        fields["skipped"] = True
    if cfg.variant == "er" and buffer is not None:
        reservoir_update(buffer, sample)
    return forecast, fields


# -- warm-up --------------------------------------------------------------------------


def warmup_train(
    net: Network,
    warm: list[WindowedSample],
    val: list[WindowedSample],
    cfg: OptimizerConfig,
    wcfg: WarmupConfig,
    rng,
) -> dict:
    """Offline pre-training: adaptive moments, cosine decay, patience early stop.

    Keeps the best-validation parameters. Uses the variant's own loss with the
    initial scale; moment state is discarded afterwards (the online optimizer
    starts fresh).
    """
    x_tr = np.stack([s.x for s in warm])
    y_tr = np.stack([s.y for s in warm])
    x_val = np.stack([s.x for s in val])
    y_val = np.stack([s.y for s in val])
    tspec = StudentTSpec(cfg.nu, cfg.s2_init)
    use_t = cfg.uses_curvature

    def loss_of(y, pred):
        return (t_nll(y, pred, tspec) if use_t else gaussian_nll(y, pred)).total

    def score_of(err):
        return t_score_output(err, tspec) if use_t else gaussian_score(err)

    p = net.n_params
    m_mom = np.zeros(p)
    v_mom = np.zeros(p)
    t_steps = 0
    best_val = math.inf
    best_flat = net.flat.copy()
    patience_left = wcfg.patience
    history = {"epochs": 0, "val_losses": []}
    n = x_tr.shape[0]
    for epoch in range(wcfg.max_epochs):
        lr_e = wcfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / wcfg.max_epochs))
        perm = rng.permutation(n)
        for lo in range(0, n, wcfg.batch):
            idx = perm[lo : lo + wcfg.batch]
            pred, cache = net.forward(x_tr[idx])
            err = y_tr[idx] - pred
            grad = net.backward(cache, score_of(err))
            t_steps += 1
            m_mom = cfg.adam_beta1 * m_mom + (1.0 - cfg.adam_beta1) * grad
            v_mom = cfg.adam_beta2 * v_mom + (1.0 - cfg.adam_beta2) * grad * grad
            m_hat = m_mom / (1.0 - cfg.adam_beta1**t_steps)
            v_hat = v_mom / (1.0 - cfg.adam_beta2**t_steps)
            net.apply_delta(m_hat / (np.sqrt(v_hat) + cfg.adam_eps), lr_e)
        val_pred, _ = net.forward(x_val)
        val_loss = loss_of(y_val, val_pred)
        history["val_losses"].append(val_loss)
        history["epochs"] = epoch + 1
        if val_loss < best_val:
            best_val = val_loss
            best_flat = net.flat.copy()
            patience_left = wcfg.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break
    net.set_flat(best_flat)
    history["best_val"] = best_val
    return history


# -- full run ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list[StepRecord]
    summary: RunSummary
    net: Network
    split: SplitWindows
    buffer: ReservoirBuffer | None = None
    warmup_history: dict = field(default_factory=dict)


def build_network_spec(
    lookback: int,
    horizon: int,
    n_features: int,
    hidden_dims,
    activation: str = "relu",
    conv_kernel: int = 0,
    conv_dilation: int = 1,
) -> NetworkSpec:
    conv = ConvFrontSpec(kernel=conv_kernel, dilation=conv_dilation) if conv_kernel > 0 else None
    return NetworkSpec(
        input_dim=lookback * n_features,
        hidden_dims=tuple(hidden_dims),
        output_dim=horizon * n_features,
        activation=activation,
        dilated_conv_front=conv,
        window_len=lookback if conv else None,
        features=n_features if conv else None,
    )


def run_online(
    frame: TimeSeriesFrame,
    cfg: OptimizerConfig,
    warmup_cfg: WarmupConfig,
    seed: int,
    lookback: int = 60,
    horizon: int = 1,
    hidden_dims=(64, 64),
    activation: str = "relu",
    conv_kernel: int = 0,
    conv_dilation: int = 1,
    warmup_frac: float = 0.20,
    val_frac: float = 0.05,
    config_echo: str = "",
) -> RunResult:
    """Warm-up, reset, then one predict-then-update pass over the online slice."""
    split = split_and_window(frame, lookback, horizon, warmup_frac, val_frac)
    if float(split.naive_abs_errors.sum()) == 0.0:
        raise DegenerateSeriesError("constant online segment: scaled errors are undefined")
    rng_init, rng_warm, rng_buffer, rng_replay, rng_mc = spawn_streams(seed, 5)
    spec = build_network_spec(
        lookback, horizon, frame.n_features, hidden_dims, activation, conv_kernel, conv_dilation
    )
    net = Network.initialize(spec, rng_init)
    history = warmup_train(net, split.warmup, split.validation, cfg, warmup_cfg, rng_warm)

    buffer = ReservoirBuffer(capacity=cfg.buffer_capacity, seed=rng_buffer)
    engine = KfacEngine(net, damping=cfg.damping, alpha_ema=cfg.alpha_ema_factors) if cfg.uses_curvature else None
    scale = ScaleState(
        s2=cfg.s2_init,
        alpha_s=cfg.alpha_s,
        scale_floor=cfg.scale_floor,
        beta=cfg.beta,
        tau_variant=cfg.tau_variant,
    )
    ustate = UpdateState.zeros(net.n_params)
    records: list[StepRecord] = []
    for i, sample in enumerate(split.online):
        try:
            if cfg.uses_curvature:
                forecast_norm, fields = natsr_step(
                    net, engine, buffer, scale, ustate, sample, cfg, i, rng_replay, rng_mc
                )
            else:
                forecast_norm, fields = baseline_step(
                    net, buffer if cfg.variant == "er" else None, sample, cfg, rng_replay
                )
        except (CurvatureError, NumericError):
            # parameters (or activations) went non-finite: no usable forecast,
            # no update; the step is recorded as skipped and the run continues
            forecast_norm = np.full(net.output_dim, np.nan)
            fields = {
                "loss": float("nan"),
                "s2": scale.s2 if cfg.uses_curvature else None,
                "tau": None,
                "bound": None,
                "fim_refreshed": False,
                "skipped": True,
                "natural_norm": None,
                "update_norm": 0.0,
            }
        records.append(
            StepRecord(
                t=i,
                row=sample.t,
                loss=float(fields["loss"]),
                forecast=split.stats.invert_flat(forecast_norm, horizon),
                target=split.original_target(sample.t),
                update_norm=fields["update_norm"],
                natural_norm=fields["natural_norm"],
                bound=fields["bound"],
                s2=fields["s2"],
                tau=fields["tau"],
                fim_refreshed=fields["fim_refreshed"],
                skipped=fields["skipped"],
                variant=cfg.variant,
            )
        )
    summary = summarize(
        records,
        split.naive_abs_errors,
        frame.n_features,
        config_echo=config_echo,
        seed=seed,
    )
    return RunResult(
        records=records,
        summary=summary,
        net=net,
        split=split,
        buffer=buffer if cfg.variant != "ogd" else None,
        warmup_history=history,
    )
