"""Forecast accuracy metrics, per-step telemetry and run summaries.

MASE is the pooled mean absolute forecast error divided by the mean absolute
one-step naive error, both taken over the online segment only: the numerator
pools (step, horizon, feature) cells, the denominator pools (step, feature)
one-step differences at the online target rows. With that pairing a
persistence forecaster at horizon 1 scores exactly 1 and the metric is
invariant to rescaling the series.

StepRecords are append-only, one per online step, and serialize to JSON lines;
summaries serialize to one CSV row per run with deterministic formatting so
identical runs produce byte-identical rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError, InputError


@dataclass(frozen=True)
class StepRecord:
    t: int  # online step index, 0-based
    row: int  # target start row in the frame
    loss: float
    forecast: np.ndarray  # original units
    target: np.ndarray  # original units
    update_norm: float  # ||w_after - w_before||_2
    natural_norm: float | None  # ||delta*||_2 before EMA/learning rate
    bound: float | None
    s2: float | None
    tau: float | None
    fim_refreshed: bool
    skipped: bool
    variant: str

    def to_json(self) -> str:
        def clean(v):
            if v is None:
                return None
            v = float(v)
            return v if np.isfinite(v) else None

        payload = {
            "t": self.t,
            "row": self.row,
            "loss": clean(self.loss),
            "forecast": [clean(v) for v in self.forecast],
            "target": [clean(v) for v in self.target],
            "update_norm": clean(self.update_norm),
            "natural_norm": clean(self.natural_norm),
            "bound": clean(self.bound),
            "s2": clean(self.s2),
            "tau": clean(self.tau),
            "fim_refreshed": self.fim_refreshed,
            "skipped": self.skipped,
            "variant": self.variant,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass(frozen=True)
class RunSummary:
    variant: str
    seed: int
    steps: int
    mase: float
    mse: float
    mae: float
    mean_update_norm: float
    max_update_norm: float
    refresh_rate: float
    skipped_steps: int
    max_bound_ratio: float | None
    mase_per_feature: tuple[float, ...]
    config_echo: str
    config_hash: str = ""
    data_hash: str = ""

    CSV_COLUMNS = (
        "variant",
        "seed",
        "steps",
        "mase",
        "mse",
        "mae",
        "mean_update_norm",
        "max_update_norm",
        "refresh_rate",
        "skipped_steps",
        "max_bound_ratio",
        "mase_per_feature",
        "config_hash",
        "data_hash",
        "config_echo",
    )

    def csv_row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        per_feature = ";".join(repr(v) for v in self.mase_per_feature)
        return [
            self.variant,
            str(self.seed),
            str(self.steps),
            repr(self.mase),
            repr(self.mse),
            repr(self.mae),
            repr(self.mean_update_norm),
            repr(self.max_update_norm),
            repr(self.refresh_rate),
            str(self.skipped_steps),
            fmt(self.max_bound_ratio),
            per_feature,
            self.config_hash,
            self.data_hash,
            self.config_echo,
        ]


def mase(forecast_abs_errors, naive_abs_errors) -> float:
    """Pooled mean |forecast error| over pooled mean |one-step naive error|."""
    fe = np.asarray(forecast_abs_errors, dtype=float).reshape(-1)
    ne = np.asarray(naive_abs_errors, dtype=float).reshape(-1)
    if fe.size == 0 or ne.size == 0:
        raise InputError("mase needs non-empty error arrays")
    denom = float(ne.mean())
    if denom == 0.0:
        raise DegenerateSeriesError("naive forecaster is exact: series is constant over the online segment")
    return float(fe.mean()) / denom


def summarize(
    records: list[StepRecord],
    naive_abs_errors: np.ndarray,
    n_features: int,
    config_echo: str = "",
    seed: int = 0,
    config_hash: str = "",
    data_hash: str = "",
) -> RunSummary:
    if not records:
        raise InputError("summarize needs at least one record")
    all_errors = np.stack([np.asarray(r.target) - np.asarray(r.forecast) for r in records])
    naive_all = np.asarray(naive_abs_errors, dtype=float)
    # steps whose forward pass failed carry no forecast; they are excluded from
    # accuracy pooling (numerator and denominator alike) and show up in
    # skipped_steps instead
    valid = np.all(np.isfinite(all_errors), axis=1)
    if valid.any():
        errors = all_errors[valid]
        naive = naive_all[valid]
        abs_err = np.abs(errors)
        overall_mase = mase(abs_err, naive)
        mse_val = float((errors**2).mean())
        mae_val = float(abs_err.mean())
        # per-feature diagnostics: horizon-flattened targets cycle feature-fastest
        per_feature = []
        feat_err = abs_err.reshape(errors.shape[0], -1, n_features)
        for j in range(n_features):
            per_feature.append(mase(feat_err[:, :, j], naive[:, j]))
    else:
        overall_mase = mse_val = mae_val = float("nan")
        per_feature = [float("nan")] * n_features
    ratios = [
        r.natural_norm / r.bound
        for r in records
        if r.natural_norm is not None and r.bound is not None and r.bound > 0
    ]
    update_norms = np.asarray([r.update_norm for r in records])
    return RunSummary(
        variant=records[0].variant,
        seed=seed,
        steps=len(records),
        mase=overall_mase,
        mse=mse_val,
        mae=mae_val,
        mean_update_norm=float(update_norms.mean()),
        max_update_norm=float(update_norms.max()),
        refresh_rate=float(np.mean([r.fim_refreshed for r in records])),
        skipped_steps=int(sum(r.skipped for r in records)),
        max_bound_ratio=(max(ratios) if ratios else None),
        mase_per_feature=tuple(per_feature),
        config_echo=config_echo,
        config_hash=config_hash,
        data_hash=data_hash,
    )


def write_jsonl(records: list[StepRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def write_summary_csv(summaries: list[RunSummary], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RunSummary.CSV_COLUMNS)
        for s in summaries:
            writer.writerow(s.csv_row())
