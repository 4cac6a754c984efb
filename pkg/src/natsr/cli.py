"""Command-line entry point: synth, run, bound-check and ablate subcommands.

Exit codes: 0 success, 2 configuration error, 3 ingestion error, 4 degenerate
series, 5 numerical failures aborted more than 1% of online steps. Multi-seed
runs and ablation grids fan out over a thread pool capped by NATSR_THREADS;
each run is an isolated unit and all files are written by the coordinator.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .bound_check import full_report
from .config import RunConfig, config_echo, file_hash, parse_config_file
from .errors import ConfigError, DegenerateSeriesError, IngestionError, NatsrError
from .metrics import RunSummary, write_jsonl, write_summary_csv
from .network import save_checkpoint
from .optimizer import run_online
from .replay import save_buffer
from .streams import export_csv, gen_outlier_sinusoid, gen_regime_switch, ingest_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3
EXIT_DEGENERATE = 4
EXIT_NUMERIC = 5

SKIP_BUDGET = 0.01  # abort fraction beyond which a run counts as failed


def _worker_count() -> int:
    env = os.environ.get("NATSR_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"NATSR_THREADS must be an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


def _parse_seeds(args) -> list[int]:
    if getattr(args, "seeds", None):
        try:
            return [int(s) for s in str(args.seeds).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad --seeds value {args.seeds!r}") from None
    return [int(args.seed)]


def _execute_run(frame, rc: RunConfig, seed: int, echo: str, config_hash: str, data_hash: str):
    result = run_online(
        frame,
        rc.optimizer,
        rc.warmup,
        seed,
        lookback=rc.lookback,
        horizon=rc.horizon,
        hidden_dims=rc.hidden_dims,
        activation=rc.activation,
        conv_kernel=rc.conv_kernel,
        conv_dilation=rc.conv_dilation,
        warmup_frac=rc.warmup_frac,
        val_frac=rc.val_frac,
        config_echo=echo,
    )
    summary = RunSummary(
        **{
            **result.summary.__dict__,
            "config_hash": config_hash,
            "data_hash": data_hash,
        }
    )
    return result, summary


def cmd_synth(args) -> int:
    if args.kind == "outlier_sine":
        frame = gen_outlier_sinusoid(
            length=args.length,
            period=args.period,
            noise_sd=args.noise_sd,
            outlier_prob=args.outlier_prob,
            outlier_magnitude=args.outlier_magnitude,
            seed=args.seed,
        )
    else:
        segments = []
        for part in args.segments.split(","):
            amp, _, freq = part.partition(":")
            segments.append((float(amp), float(freq)))
        frame = gen_regime_switch(length=args.length, segments=segments, noise_sd=args.noise_sd, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_csv(frame, args.out)
    print(f"wrote {frame.length} rows x {frame.n_features} features to {args.out}")
    return EXIT_OK


def _load_frame(rc: RunConfig, data_path):
    ts_col = rc.data_timestamp_col if rc.data_timestamp_col >= 0 else None
    return ingest_csv(data_path, has_header=rc.data_has_header, timestamp_col=ts_col)


def cmd_run(args) -> int:
    overrides = {"variant": args.variant} if args.variant else None
    rc = parse_config_file(args.config, overrides)
    frame = _load_frame(rc, args.data)
    echo = config_echo(rc)
    c_hash = file_hash(args.config)
    d_hash = file_hash(args.data)
    seeds = _parse_seeds(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = [pool.submit(_execute_run, frame, rc, seed, echo, c_hash, d_hash) for seed in seeds]
        outcomes = [f.result() for f in futures]
    summaries = []
    too_many_skips = False
    for seed, (result, summary) in zip(seeds, outcomes):
        summaries.append(summary)
        write_jsonl(result.records, out_dir / f"records_seed{seed}.jsonl")
        save_checkpoint(result.net, out_dir / f"checkpoint_seed{seed}.txt")
        if result.buffer is not None:
            save_buffer(result.buffer, out_dir / f"buffer_seed{seed}.txt")
        if summary.skipped_steps > SKIP_BUDGET * summary.steps:
            too_many_skips = True
        print(
            f"seed {seed}: variant={summary.variant} steps={summary.steps} "
            f"mase={summary.mase:.4f} mse={summary.mse:.4f} refresh_rate={summary.refresh_rate:.3f} "
            f"skipped={summary.skipped_steps}"
        )
    write_summary_csv(summaries, out_dir / "summary.csv")
    print(f"wrote {out_dir / 'summary.csv'}")
    return EXIT_NUMERIC if too_many_skips else EXIT_OK


def cmd_bound_check(args) -> int:
    report = full_report(
        trials=args.trials,
        max_layers=args.max_layers,
        max_width=args.max_width,
        seed=args.seed,
        kfac_trials=args.kfac_trials,
    )
    for line in report.lines():
        print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    return EXIT_OK


ABLATION_GRID = (
    ("full", True, True),
    ("no_scale", False, True),
    ("no_replay", True, False),
    ("neither", False, False),
)


def cmd_ablate(args) -> int:
    rc = parse_config_file(args.config)
    if not rc.optimizer.uses_curvature:
        raise ConfigError("ablate requires a curvature variant (natsr_stable or natsr_fast)")
    frame = _load_frame(rc, args.data)
    c_hash = file_hash(args.config)
    d_hash = file_hash(args.data)
    seeds = _parse_seeds(args)
    jobs = []
    for name, with_scale, with_replay in ABLATION_GRID:
        opt = rc.optimizer.__class__(
            **{
                **rc.optimizer.__dict__,
                "dynamic_scale": with_scale,
                "buffer_capacity": rc.optimizer.buffer_capacity if with_replay else 0,
            }
        )
        variant_rc = RunConfig(**{**rc.__dict__, "optimizer": opt})
        for seed in seeds:
            jobs.append((name, seed, variant_rc))
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = [
            pool.submit(_execute_run, frame, job_rc, seed, config_echo(job_rc), c_hash, d_hash)
            for (_, seed, job_rc) in jobs
        ]
        outcomes = [f.result() for f in futures]
    by_variant: dict[str, dict[int, float]] = {name: {} for name, *_ in ABLATION_GRID}
    for (name, seed, _), (_, summary) in zip(jobs, outcomes):
        by_variant[name][seed] = summary.mase
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["scale,replay,seed,mase,rel_delta_pct"]
    for name, with_scale, with_replay in ABLATION_GRID:
        for seed in seeds:
            mase_v = by_variant[name][seed]
            rel = 100.0 * (by_variant["full"][seed] - mase_v) / by_variant["full"][seed]
            rows.append(
                f"{'yes' if with_scale else 'no'},{'yes' if with_replay else 'no'},{seed},{mase_v!r},{rel:.2f}"
            )
    for name, with_scale, with_replay in ABLATION_GRID:
        mean_v = sum(by_variant[name].values()) / len(seeds)
        mean_full = sum(by_variant["full"].values()) / len(seeds)
        rel = 100.0 * (mean_full - mean_v) / mean_full
        rows.append(f"{'yes' if with_scale else 'no'},{'yes' if with_replay else 'no'},mean,{mean_v!r},{rel:.2f}")
        print(f"{name:10s} mean MASE {mean_v:.4f} ({rel:+.1f}% vs full)")
    (out_dir / "ablation.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'ablation.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natsr", description="Robust online forecasting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic stream CSV")
    p_synth.add_argument("--kind", choices=("outlier_sine", "regime"), required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--length", type=int, default=2000)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--period", type=float, default=50.0)
    p_synth.add_argument("--noise-sd", type=float, default=0.1)
    p_synth.add_argument("--outlier-prob", type=float, default=0.0)
    p_synth.add_argument("--outlier-magnitude", type=float, default=5.0)
    p_synth.add_argument("--segments", default="1.0:0.02,2.0:0.05", help="amp:freq[,amp:freq...] for --kind regime")

    p_run = sub.add_parser("run", help="execute one experiment (optionally multi-seed)")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--data", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--seeds", help="comma-separated seed list; overrides --seed")
    p_run.add_argument("--variant", help="override the config's variant")

    p_bound = sub.add_parser("bound-check", help="empirically validate the update-norm ceiling")
    p_bound.add_argument("--trials", type=int, default=10000)
    p_bound.add_argument("--max-layers", type=int, default=3)
    p_bound.add_argument("--max-width", type=int, default=16)
    p_bound.add_argument("--kfac-trials", type=int, default=200)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.add_argument("--out")

    p_abl = sub.add_parser("ablate", help="run the scale/replay on-off grid")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--data", required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--seed", type=int, default=0)
    p_abl.add_argument("--seeds", help="comma-separated seed list; overrides --seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "run": cmd_run,
        "bound-check": cmd_bound_check,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except DegenerateSeriesError as exc:
        print(f"degenerate series: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except NatsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
