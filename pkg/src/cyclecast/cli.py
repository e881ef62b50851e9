"""Command-line front end: synth, prepare, train, forecast, evaluate, ablate, plot.

Configuration precedence is defaults < config file < command-line flags. Config
files are plain text, one ``key=value`` per line, '#' comments allowed. The
effective configuration is printed before any work starts.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from . import forecast as fc
from . import metrics as mx
from . import plotting, synth, trainer
from .fields import GridMeta, RainField
from .losses import LossWeights, TorrentialConfig
from .networks import DiscriminatorSpec, GeneratorSpec
from .storage import (
    FieldFormatError,
    ManifestError,
    build_pairs,
    read_field,
    read_manifest,
    write_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

SEED_ENV_VAR = "PCT_NOWCAST_SEED"


class UsageError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"not a comma-separated float list: {text!r}") from exc


def _parse_float_pair(text: str) -> tuple[float, float]:
    values = _parse_float_list(text)
    if len(values) != 2:
        raise UsageError(f"expected two comma-separated numbers, got {text!r}")
    return values[0], values[1]


# key -> (parser, default); the single source of truth for config-file keys
CONFIG_SCHEMA: dict[str, tuple[Callable[[str], object], object]] = {
    "seed": (int, 0),
    "step": (int, 2),
    "cap": (float, 100.0),
    "epochs": (int, 200),
    "batch_size": (int, 16),
    "lr": (float, 2e-4),
    "adam_beta1": (float, 0.5),
    "adam_beta2": (float, 0.999),
    "lambda_cyc": (float, 10.0),
    "lambda_con": (float, 10.0),
    "lambda_tor": (float, 100.0),
    "theta": (float, 30.0),
    "epsilon": (float, 0.0),
    "enable_connection": (_parse_bool, True),
    "enable_torrential": (_parse_bool, True),
    "strict_cadence": (_parse_bool, False),
    "n_steps": (int, 12),
    "step_minutes": (int, 10),
    "thresholds": (_parse_float_list, (0.5, 30.0)),
    "threshold": (float, 0.5),
    "method": (str, "model"),
    # grid + synthetic data
    "height": (int, 64),
    "width": (int, 64),
    "resolution_km": (float, 1.0),
    "cadence_minutes": (int, 5),
    "n_frames": (int, 64),
    "n_blobs": (int, 4),
    "velocity": (_parse_float_pair, (1.0, 0.0)),
    "blob_sigma": (float, 3.0),
    "amplitude_range": (_parse_float_pair, (2.0, 40.0)),
    "decay_per_frame": (float, 1.0),
    "heavy_rain_fraction": (float, 0.0),
    # network scale
    "base_width": (int, 64),
    "bottleneck_channels": (int, 256),
    "n_res_blocks": (int, 16),
    "se_reduction": (int, 16),
    "dropout_rate": (float, 0.4),
    "bn_momentum": (float, 0.8),
    "leaky_slope": (float, 0.2),
    "disc_base_width": (int, 64),
}


def _read_config_file(path: Path) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        parser_fn, _ = CONFIG_SCHEMA[key]
        try:
            values[key] = parser_fn(raw.strip())
        except (ValueError, UsageError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_config(args: argparse.Namespace) -> dict[str, object]:
    """Merge defaults, config file, environment seed, and flags."""
    merged = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    config_path = getattr(args, "config", None)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        merged.update(_read_config_file(path))
    for key in CONFIG_SCHEMA:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    if getattr(args, "no_connection", False):
        merged["enable_connection"] = False
    if getattr(args, "no_torrential", False):
        merged["enable_torrential"] = False
    return merged


def _print_effective_config(cfg: dict[str, object], command: str) -> None:
    print(f"# effective config for {command}")
    for key in sorted(cfg):
        print(f"config {key}={cfg[key]}")


def _train_config(cfg: dict[str, object]) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        generator_spec=GeneratorSpec(
            base_width=cfg["base_width"],
            bottleneck_channels=cfg["bottleneck_channels"],
            n_res_blocks=cfg["n_res_blocks"],
            se_reduction=cfg["se_reduction"],
            dropout_rate=cfg["dropout_rate"],
            bn_momentum=cfg["bn_momentum"],
            leaky_slope=cfg["leaky_slope"],
        ),
        discriminator_spec=DiscriminatorSpec(
            base_width=cfg["disc_base_width"],
            leaky_slope=cfg["leaky_slope"],
            bn_momentum=cfg["bn_momentum"],
        ),
        weights=LossWeights(
            lambda_cyc=cfg["lambda_cyc"],
            lambda_con=cfg["lambda_con"],
            lambda_tor=cfg["lambda_tor"],
        ),
        tor_cfg=TorrentialConfig(threshold=cfg["theta"], epsilon=cfg["epsilon"]),
        learning_rate=cfg["lr"],
        adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        enable_connection=cfg["enable_connection"],
        enable_torrential=cfg["enable_torrential"],
        cap=cfg["cap"],
        strict_cadence=cfg["strict_cadence"],
    )


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _issued_at_from_manifest(manifest_path: Path) -> datetime | None:
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# issued_at="):
            return datetime.fromisoformat(line.split("=", 1)[1]).astimezone(timezone.utc)
    return None


def _load_frames(data_dir: Path) -> list[RainField]:
    manifest = read_manifest(data_dir / "manifest.txt")
    return [read_field(data_dir / rel) for _, rel in manifest.entries]


# --- commands ------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "out_dir")
    _print_effective_config(cfg, "synth")
    meta = GridMeta(
        height=cfg["height"],
        width=cfg["width"],
        resolution_km=cfg["resolution_km"],
        cadence_minutes=cfg["cadence_minutes"],
    )
    scfg = synth.SynthConfig(
        meta=meta,
        n_frames=cfg["n_frames"],
        n_blobs=cfg["n_blobs"],
        velocity=cfg["velocity"],
        blob_sigma=cfg["blob_sigma"],
        amplitude_range=cfg["amplitude_range"],
        decay_per_frame=cfg["decay_per_frame"],
        heavy_rain_fraction=cfg["heavy_rain_fraction"],
        seed=cfg["seed"],
    )
    frames = synth.gen_sequence(scfg)
    manifest_path = write_dataset(
        frames,
        args.out_dir,
        step=cfg["step"],
        comments=[f"rng={synth.RNG_IDENTITY} seed={scfg.seed}"],
    )
    print(f"wrote {len(frames)} frames and {manifest_path}")
    return EXIT_OK


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "data_dir", "out_dir")
    _print_effective_config(cfg, "prepare")
    data_dir = Path(args.data_dir)
    manifest = read_manifest(data_dir / "manifest.txt", step=cfg["step"])
    pairs = build_pairs(manifest, data_dir, strict_cadence=cfg["strict_cadence"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rel_by_time = {ts: rel for ts, rel in manifest.entries}
    lines = [f"# step={cfg['step']} pairs={len(pairs)}"]
    lines += [
        f"{rel_by_time[p.earlier.timestamp]}\t{rel_by_time[p.later.timestamp]}" for p in pairs
    ]
    pair_manifest = out_dir / "pairs.txt"
    pair_manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(pairs)} pairs -> {pair_manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "data_dir", "out_dir")
    _print_effective_config(cfg, "train")
    tcfg = _train_config(cfg)
    data_dir = Path(args.data_dir)
    manifest = read_manifest(data_dir / "manifest.txt", step=cfg["step"])
    ckpt = trainer.train(
        tcfg,
        manifest,
        data_dir,
        args.out_dir,
        resume_from=getattr(args, "checkpoint", None),
    )
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_forecast(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "checkpoint", "initial", "out_dir")
    _print_effective_config(cfg, "forecast")
    bundle = trainer.load_checkpoint(args.checkpoint)
    initial = read_field(args.initial)
    request = fc.ForecastRequest(
        initial=initial,
        n_steps=cfg["n_steps"],
        step_minutes=cfg["step_minutes"],
        cap=bundle.config.cap,
    )
    bundle.g_f.eval()
    frames = fc.forecast_iterative(bundle.g_f, request)
    manifest_path = fc.write_forecast(frames, initial.timestamp, args.out_dir)
    print(f"wrote {len(frames)} forecast frames and {manifest_path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "forecast_dir", "truth_dir", "out_dir")
    _print_effective_config(cfg, "evaluate")
    forecast_dir = Path(args.forecast_dir)
    truth_dir = Path(args.truth_dir)
    forecasts = _load_frames(forecast_dir)
    truths = _load_frames(truth_dir)
    issued_at = _issued_at_from_manifest(forecast_dir / "manifest.txt")
    if getattr(args, "issued_at", None) is not None:
        issued_at = datetime.fromisoformat(args.issued_at).astimezone(timezone.utc)
    if issued_at is None:
        issued_at = forecasts[0].timestamp
    report = mx.evaluate(
        forecasts,
        truths,
        thresholds=cfg["thresholds"],
        issued_at=issued_at,
        method=cfg["method"],
        data_range=cfg["cap"],
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.csv"
    mx.write_report(report, report_path)
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "data_dir", "eval_data_dir", "out_dir")
    _print_effective_config(cfg, "ablate")
    base = _train_config(cfg)
    variants = {
        "full": base,
        "no_connection": replace(base, enable_connection=False),
        "no_torrential": replace(base, enable_torrential=False),
    }
    data_dir = Path(args.data_dir)
    eval_dir = Path(args.eval_data_dir)
    manifest = read_manifest(data_dir / "manifest.txt", step=cfg["step"])
    eval_manifest = read_manifest(eval_dir / "manifest.txt", step=cfg["step"])
    eval_pairs = build_pairs(eval_manifest, eval_dir, strict_cadence=cfg["strict_cadence"])
    if not eval_pairs:
        raise trainer.EmptyDatasetError("held-out manifest yields no pairs")
    eval_batch = trainer.PairBatch.from_pairs(eval_pairs, cfg["cap"])
    lead_min = cfg["step"] * manifest.meta.cadence_minutes

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for name, variant_cfg in variants.items():
        ckpt = trainer.train(variant_cfg, manifest, data_dir, out_dir / name)
        bundle = trainer.load_checkpoint(ckpt)
        bundle.set_eval_mode()
        rows = []
        for pair in eval_pairs:
            request = fc.ForecastRequest(
                initial=pair.earlier,
                n_steps=1,
                step_minutes=lead_min,
                cap=cfg["cap"],
            )
            pred = fc.forecast_iterative(bundle.g_f, request)[0]
            rep = mx.evaluate(
                [pred],
                [pair.later],
                thresholds=cfg["thresholds"],
                issued_at=pair.earlier.timestamp,
                method=name,
                data_range=cfg["cap"],
            )
            rows.extend(rep.rows)
        con_f, con_b = trainer.evaluate_connection_l1(bundle, eval_batch)
        report = mx.MetricsReport(rows=rows, thresholds=tuple(cfg["thresholds"]))
        report.rows.append(mx.MetricRow(name, "CONN_L1_F", lead_min, None, con_f))
        report.rows.append(mx.MetricRow(name, "CONN_L1_B", lead_min, None, con_b))
        reports.append(report)
        print(f"variant {name}: checkpoint {ckpt}")
    merged = mx.merge_reports(reports)
    report_path = out_dir / "ablation_report.csv"
    mx.write_report(merged, report_path)
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require(args, "forecast_dir", "truth_dir", "out_dir")
    _print_effective_config(cfg, "plot")
    forecast_dir = Path(args.forecast_dir)
    forecasts = _load_frames(forecast_dir)
    truths = _load_frames(Path(args.truth_dir))
    issued_at = _issued_at_from_manifest(forecast_dir / "manifest.txt")
    if issued_at is None:
        issued_at = forecasts[0].timestamp
    written = plotting.render_panels(
        truths, forecasts, cfg["threshold"], issued_at, args.out_dir
    )
    print(f"wrote {len(written)} panels to {args.out_dir}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--step", type=int)
    p.add_argument("--cap", type=float)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-cyc", dest="lambda_cyc", type=float)
    p.add_argument("--lambda-con", dest="lambda_con", type=float)
    p.add_argument("--lambda-tor", dest="lambda_tor", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--no-connection", dest="no_connection", action="store_true")
    p.add_argument("--no-torrential", dest="no_torrential", action="store_true")
    p.add_argument("--base-width", dest="base_width", type=int)
    p.add_argument("--bottleneck-channels", dest="bottleneck_channels", type=int)
    p.add_argument("--n-res-blocks", dest="n_res_blocks", type=int)
    p.add_argument("--se-reduction", dest="se_reduction", type=int)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--disc-base-width", dest="disc_base_width", type=int)
    p.add_argument("--strict-cadence", dest="strict_cadence", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cyclecast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common_flags(p)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--n-blobs", dest="n_blobs", type=int)
    p.add_argument("--velocity", type=_parse_float_pair)
    p.add_argument("--blob-sigma", dest="blob_sigma", type=float)
    p.add_argument("--amplitude-range", dest="amplitude_range", type=_parse_float_pair)
    p.add_argument("--decay-per-frame", dest="decay_per_frame", type=float)
    p.add_argument("--heavy-rain-fraction", dest="heavy_rain_fraction", type=float)
    p.add_argument("--cadence-minutes", dest="cadence_minutes", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="materialize the pair manifest")
    _add_common_flags(p)
    p.add_argument("--strict-cadence", dest="strict_cadence", action="store_const", const=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the four networks")
    _add_common_flags(p)
    _add_train_flags(p)
    p.add_argument("--checkpoint", help="resume from this checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="iterative forecast from a checkpoint")
    _add_common_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--initial", help="field file to forecast from")
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--step-minutes", dest="step_minutes", type=int)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a forecast directory against truth")
    _add_common_flags(p)
    p.add_argument("--forecast-dir", dest="forecast_dir")
    p.add_argument("--truth-dir", dest="truth_dir")
    p.add_argument("--thresholds", type=_parse_float_list)
    p.add_argument("--method", type=str)
    p.add_argument("--issued-at", dest="issued_at")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train full/no-connection/no-torrential variants")
    _add_common_flags(p)
    _add_train_flags(p)
    p.add_argument("--eval-data-dir", dest="eval_data_dir")
    p.add_argument("--thresholds", type=_parse_float_list)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render truth/forecast/mask panels")
    _add_common_flags(p)
    p.add_argument("--forecast-dir", dest="forecast_dir")
    p.add_argument("--truth-dir", dest="truth_dir")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help/usage paths
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FieldFormatError, ManifestError, trainer.EmptyDatasetError, trainer.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
