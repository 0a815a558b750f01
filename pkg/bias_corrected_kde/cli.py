from __future__ import annotations

import argparse
import csv
import logging
import sys
import tomllib
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import config
from .densities import density_id_for, lookup_density, moment_matched_normal
from .errors import BiasCorrectedKdeError, ConfigError, EmptySampleError, InvalidSampleError
from .estimators import TABLE_KINDS, EstimatorKind, EstimatorSpec, Sample, estimate, resolution_scale
from .grids import EvaluationGrid
from .kernels import as_bandwidth
from .logging_utils import configure_logging
from .metrics import BandwidthSearch, GridSpec, ise, oracle_bandwidth
from .sim import (
    SimulationConfig,
    SimulationRunner,
    SimulationStatus,
    SummaryTable,
    emit_table,
    read_summary,
    write_outputs,
)
from .theory import asymptotic_variance, bias_terms, hg_bias, hobskde_bias, hobskde_renorm_bias

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INVALID_RUN = 3

THEORY_CHOICES = ("bias2", "bias4", "hobskde", "hobskde-renorm", "variance")
VEHICLE_CHOICES = ("matched-normal",)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# Keys accepted in a --config TOML file; explicit flags win over the file.
SIMULATE_DEFAULTS: dict[str, Any] = {
    "density": None,
    "n": None,
    "reps": config.DEFAULT_REPS,
    "seed": config.DEFAULT_SEED,
    "estimators": [kind.value for kind in TABLE_KINDS],
    "out": None,
    "workers": None,
    "search_points": config.SEARCH_POINTS,
    "search_upper": config.SEARCH_UPPER_RANGE_MULTIPLE,
    "grid_points": config.GRID_MIN_POINTS,
}

THEORY_X_SDS = 3.0
THEORY_X_POINTS = 201
THEORY_DEFAULT_N = 100


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bias_corrected_kde",
        description="乗法的バイアス補正カーネル密度推定のシミュレーションと診断",
    )
    parser.add_argument("--log-level", choices=LOG_LEVELS, default="INFO", help="ログレベル")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="オラクルバンド幅での ISE シミュレーション")
    simulate.add_argument("--config", type=Path, help="設定ファイル (TOML)")
    simulate.add_argument("--density", help="密度 (1-10 または名前)")
    simulate.add_argument("--n", type=int, help="標本サイズ")
    simulate.add_argument("--reps", type=int, help=f"反復回数 (既定 {config.DEFAULT_REPS})")
    simulate.add_argument("--seed", type=int, help=f"乱数シード (既定 {config.DEFAULT_SEED})")
    simulate.add_argument("--estimators", help="推定量のカンマ区切りリスト")
    simulate.add_argument("--out", type=Path, help="出力ディレクトリ")
    simulate.add_argument("--workers", type=int, help=f"並列数 (既定は {config.WORKERS_ENV} または物理コア数)")
    simulate.add_argument("--search-points", dest="search_points", type=int, help="粗い探索の点数")
    simulate.add_argument(
        "--search-upper",
        dest="search_upper",
        type=float,
        help=f"探索上限を標本範囲の何倍にするか (既定 {config.SEARCH_UPPER_RANGE_MULTIPLE:g})",
    )
    simulate.add_argument("--grid-points", dest="grid_points", type=int, help="ISE 格子の最小点数")
    simulate.set_defaults(handler=cmd_simulate)

    estimate_parser = subparsers.add_parser("estimate", help="データファイルに推定量を適用")
    estimate_parser.add_argument("--data", type=Path, required=True, help="1 行 1 数値のデータファイル")
    estimate_parser.add_argument("--kind", default=EstimatorKind.KDE.value, help="推定量")
    estimate_parser.add_argument("--h", required=True, help="バンド幅、または oracle")
    estimate_parser.add_argument("--truth", help="真の密度 (1-10 または名前)")
    estimate_parser.add_argument("--grid-points", dest="grid_points", type=int, default=config.GRID_MIN_POINTS)
    estimate_parser.add_argument("--out", type=Path, help="出力 CSV")
    estimate_parser.set_defaults(handler=cmd_estimate)

    theory = subparsers.add_parser("theory", help="漸近バイアス・分散の曲線")
    theory.add_argument("--density", required=True, help="密度 (1-10 または名前)")
    theory.add_argument("--vehicle", choices=VEHICLE_CHOICES, default="matched-normal", help="パラメトリック族")
    theory.add_argument("--h", required=True, help="バンド幅のカンマ区切りリスト")
    theory.add_argument("--which", choices=THEORY_CHOICES, required=True, help="出力する量")
    theory.add_argument("--n", type=int, default=THEORY_DEFAULT_N, help="分散の標本サイズ")
    theory.add_argument("--x", help="評価点のカンマ区切りリスト")
    theory.add_argument("--x-points", dest="x_points", type=int, default=THEORY_X_POINTS, help="評価点の数")
    theory.add_argument("--out", type=Path, help="出力 CSV")
    theory.set_defaults(handler=cmd_theory)

    table = subparsers.add_parser("table", help="要約 CSV を Markdown 表にまとめる")
    table.add_argument("inputs", nargs="+", type=Path, help="要約 CSV")
    table.add_argument("--out", type=Path, help="出力 Markdown (省略時は標準出力)")
    table.set_defaults(handler=cmd_table)
    return parser


def _start_logging(args: argparse.Namespace, log_dir: Path) -> None:
    configure_logging(getattr(logging, args.log_level), log_dir)


def load_config_file(path: Path) -> dict[str, Any]:
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"設定ファイルを読み込めません: {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"設定ファイルの形式が不正です: {path}: {exc}") from exc
    unknown = sorted(set(data) - set(SIMULATE_DEFAULTS))
    if unknown:
        raise ConfigError(f"未知の設定キー: {', '.join(unknown)}")
    return data


def resolve_simulation_settings(args: argparse.Namespace) -> dict[str, Any]:
    settings = dict(SIMULATE_DEFAULTS)
    if args.config is not None:
        settings.update(load_config_file(args.config))
    for key in SIMULATE_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for required in ("density", "n"):
        if settings[required] is None:
            raise ConfigError(f"--{required} を指定してください")
    return settings


def _parse_kinds(value: Any) -> tuple[EstimatorKind, ...]:
    items = value.split(",") if isinstance(value, str) else list(value)
    return tuple(EstimatorKind.parse(str(item)) for item in items if str(item).strip())


def simulation_config(settings: dict[str, Any]) -> SimulationConfig:
    workers = settings["workers"]
    return SimulationConfig(
        density_id=density_id_for(settings["density"]),
        n=int(settings["n"]),
        reps=int(settings["reps"]),
        seed=int(settings["seed"]),
        kinds=_parse_kinds(settings["estimators"]),
        search=BandwidthSearch(
            points=int(settings["search_points"]),
            upper_range_multiple=float(settings["search_upper"]),
        ),
        grid=GridSpec(min_points=int(settings["grid_points"])),
        workers=int(workers) if workers is not None else config.default_workers(),
    )


def _log_progress(status: SimulationStatus) -> None:
    step = max(1, status.total // 10)
    if status.is_running and status.completed and status.completed % step == 0:
        logging.info("進捗: %d / %d 反復 (失敗 %d)", status.completed, status.total, status.failures)


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = resolve_simulation_settings(args)
    cfg = simulation_config(settings)
    out_dir = config.ensure_directories(Path(settings["out"]) if settings["out"] else config.OUTPUT_DIR)
    _start_logging(args, out_dir)

    runner = SimulationRunner(cfg)
    runner.register_status_callback(_log_progress)
    result = runner.run()
    write_outputs(result, out_dir)
    print(emit_table(result.table, "markdown"))

    if not result.valid:
        logging.error(
            "失敗率 %.2f%% が上限 %.2f%% を超えたため、結果は無効です。",
            100.0 * result.failure_rate,
            100.0 * config.FAILURE_RATE_LIMIT,
        )
        return EXIT_INVALID_RUN
    return EXIT_OK


def read_sample(path: Path) -> Sample:
    """One number per line; blank lines and ``#`` comments are ignored."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidSampleError(f"データファイルを読み込めません: {path}: {exc}") from exc
    values = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            values.append(float(stripped))
        except ValueError as exc:
            raise InvalidSampleError(f"{path}:{number}: 数値ではありません: {stripped!r}") from exc
    if not values:
        raise EmptySampleError(f"データファイルが空です: {path}")
    return Sample(np.array(values))


def _estimate_grid(
    kind: EstimatorKind, sample: Sample, h: float, min_points: int, truth=None
) -> EvaluationGrid:
    margin = config.PILOT_MARGIN_BANDWIDTHS * h
    lo, hi = sample.min - margin, sample.max + margin
    if truth is not None:
        support_lo, support_hi = truth.effective_support
        lo, hi = min(lo, support_lo), max(hi, support_hi)
    spacing = resolution_scale(kind, sample, h) / config.GRID_RESOLUTION
    return EvaluationGrid.with_spacing(lo, hi, spacing, min_points)


def cmd_estimate(args: argparse.Namespace) -> int:
    out_path = args.out or config.OUTPUT_DIR / "estimate.csv"
    _start_logging(args, config.ensure_directories(out_path.parent))
    sample = read_sample(args.data)
    kind = EstimatorKind.parse(args.kind)
    truth = lookup_density(args.truth) if args.truth else None

    if args.h.strip().lower() == "oracle":
        if truth is None:
            raise ConfigError("--h oracle には --truth が必要です")
        result = oracle_bandwidth(kind, sample, truth)
        h = result.h_star
        logging.info("オラクルバンド幅: h=%.6g (ISE=%.6g)", h, result.min_ise)
    else:
        h = as_bandwidth(_parse_float(args.h, "--h"))

    grid = _estimate_grid(kind, sample, h, args.grid_points, truth)
    est = estimate(EstimatorSpec(kind, h), sample, grid)
    if truth is not None:
        logging.info("%s に対する ISE: %.6g", truth.label, ise(est, truth))

    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("x", "density"))
        for x, value in zip(grid.points, est.values):
            writer.writerow((repr(float(x)), repr(float(value))))
    logging.info("ファイルを書き出しました: %s", out_path)
    return EXIT_OK


def _parse_float(text: str, flag: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{flag} の値が数値ではありません: {text!r}") from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    values = [_parse_float(item, flag) for item in text.split(",") if item.strip()]
    if not values:
        raise ConfigError(f"{flag} に値がありません")
    return values


def theory_curve(which: str, truth, vehicle, h: float, x: np.ndarray, n: int) -> np.ndarray:
    if which == "bias2":
        return hg_bias(truth, vehicle, h, x)
    if which == "bias4":
        return bias_terms(truth, vehicle, h, x)[1]
    if which == "hobskde":
        return hobskde_bias(truth, vehicle, h, x)
    if which == "hobskde-renorm":
        return hobskde_renorm_bias(truth, vehicle, h, x)
    if which == "variance":
        return asymptotic_variance(truth, n, h, x)
    raise ConfigError(f"未知の量です: {which!r}")


def cmd_theory(args: argparse.Namespace) -> int:
    out_path = args.out or config.OUTPUT_DIR / "theory.csv"
    _start_logging(args, config.ensure_directories(out_path.parent))
    truth = lookup_density(args.density)
    vehicle = moment_matched_normal(truth)
    bandwidths = [as_bandwidth(h) for h in _parse_float_list(args.h, "--h")]
    if args.x:
        x = np.array(_parse_float_list(args.x, "--x"))
    else:
        spread = THEORY_X_SDS * truth.variance**0.5
        x = np.linspace(truth.mean - spread, truth.mean + spread, args.x_points)

    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("h", "x", "value"))
        for h in bandwidths:
            values = np.atleast_1d(theory_curve(args.which, truth, vehicle, h, x, args.n))
            for point, value in zip(x, values):
                writer.writerow((repr(h), repr(float(point)), repr(float(value))))
    logging.info("ファイルを書き出しました: %s", out_path)
    return EXIT_OK


def cmd_table(args: argparse.Namespace) -> int:
    log_dir = args.out.parent if args.out else config.OUTPUT_DIR
    _start_logging(args, config.ensure_directories(log_dir))
    tables = [read_summary(path) for path in args.inputs]
    merged = SummaryTable.combine(*tables)
    text = emit_table(merged, "markdown")
    if args.out:
        args.out.write_text(text, encoding="utf-8")
        logging.info("ファイルを書き出しました: %s", args.out)
    else:
        print(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_BAD_INPUT

    try:
        return args.handler(args)
    except (BiasCorrectedKdeError, ValueError, OSError) as exc:
        logging.error("入力が不正です: %s", exc)
        print(f"エラー: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
