from __future__ import annotations

import csv
import functools
import hashlib
import io
import logging
import math
import re
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from . import config
from .densities import NormalMixture, density_id_for, mw_density
from .errors import BiasCorrectedKdeError, ConfigError, EmptyTableError
from .estimators import TABLE_KINDS, EstimatorKind, Sample
from .metrics import BandwidthSearch, GridSpec, OracleResult, oracle_bandwidth

_WHITESPACE_PATTERN = re.compile(r"\s+")
_NON_SLUG_PATTERN = re.compile(r"[^0-9a-z_]+")


@dataclass(frozen=True)
class SimulationConfig:
    density_id: int
    n: int
    reps: int = config.DEFAULT_REPS
    seed: int = config.DEFAULT_SEED
    kinds: tuple[EstimatorKind, ...] = TABLE_KINDS
    search: BandwidthSearch = BandwidthSearch()
    grid: GridSpec = GridSpec()
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "density_id", density_id_for(self.density_id))
        kinds = tuple(EstimatorKind(k) for k in self.kinds)
        if not kinds:
            raise ConfigError("at least one estimator kind is required")
        if len(set(kinds)) != len(kinds):
            raise ConfigError("estimator kinds must not repeat")
        object.__setattr__(self, "kinds", kinds)
        if self.n < 2:
            raise ConfigError(f"n must be at least 2, got {self.n}")
        if self.reps < 1:
            raise ConfigError(f"reps must be at least 1, got {self.reps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")

    @property
    def truth(self) -> NormalMixture:
        return mw_density(self.density_id)

    @property
    def label(self) -> str:
        return self.truth.label


@dataclass(frozen=True)
class ReplicationRecord:
    rep_index: int
    sample_hash: str
    results: Mapping[EstimatorKind, OracleResult]
    failures: Mapping[EstimatorKind, str] = field(default_factory=dict)

    def kinds(self) -> tuple[EstimatorKind, ...]:
        return tuple(self.results) + tuple(self.failures)


@dataclass(frozen=True)
class SummaryRow:
    density: str
    n: int
    kind: EstimatorKind
    reps: int
    mean_min_ise_e5: float
    se_e5: Optional[float]
    failures: int = 0

    @property
    def failure_rate(self) -> float:
        total = self.reps + self.failures
        return self.failures / total if total else 1.0

    @property
    def valid(self) -> bool:
        return self.reps > 0 and self.failure_rate <= config.FAILURE_RATE_LIMIT

    def cell(self) -> str:
        """``"mean (se)"`` rounded half up to integers."""
        if not math.isfinite(self.mean_min_ise_e5):
            return "n/a"
        mean = _round_half_up(self.mean_min_ise_e5)
        if self.se_e5 is None:
            return f"{mean} (n/a)"
        return f"{mean} ({_round_half_up(self.se_e5)})"


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]

    def __post_init__(self) -> None:
        rows = tuple(self.rows)
        keys = [(r.density, r.n, r.kind) for r in rows]
        if len(set(keys)) != len(keys):
            raise ConfigError("summary rows must be unique per (density, n, kind)")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_records(
        cls,
        density: str,
        n: int,
        kinds: Sequence[EstimatorKind],
        records: Iterable[ReplicationRecord],
    ) -> "SummaryTable":
        records = list(records)
        rows = []
        for kind in kinds:
            values = np.array([r.results[kind].min_ise for r in records if kind in r.results], dtype=float)
            failures = sum(1 for r in records if kind in r.failures)
            rows.append(_summarise(density, n, kind, values, failures))
        return cls(tuple(rows))

    @classmethod
    def combine(cls, *tables: "SummaryTable") -> "SummaryTable":
        return cls(tuple(row for table in tables for row in table.rows))

    @property
    def valid(self) -> bool:
        return all(row.valid for row in self.rows)

    @property
    def densities(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(row.density for row in self.rows))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted({row.n for row in self.rows}))

    def kinds_for(self, density: str) -> tuple[EstimatorKind, ...]:
        return tuple(dict.fromkeys(row.kind for row in self.rows if row.density == density))

    def row(self, density: str, n: int, kind: Union[EstimatorKind, str]) -> Optional[SummaryRow]:
        kind = EstimatorKind(kind)
        for candidate in self.rows:
            if candidate.density == density and candidate.n == n and candidate.kind is kind:
                return candidate
        return None


def _summarise(density: str, n: int, kind: EstimatorKind, values: np.ndarray, failures: int) -> SummaryRow:
    if values.size == 0:
        return SummaryRow(density, n, kind, 0, math.nan, None, failures)
    scaled = values * config.ISE_SCALE
    mean = float(np.mean(scaled))
    se = float(np.std(scaled, ddof=1) / math.sqrt(scaled.size)) if scaled.size > 1 else None
    return SummaryRow(density, n, kind, int(scaled.size), mean, se, failures)


@dataclass(frozen=True)
class SimulationResult:
    config: SimulationConfig
    records: tuple[ReplicationRecord, ...]
    table: SummaryTable

    @property
    def valid(self) -> bool:
        return self.table.valid

    @property
    def failure_rate(self) -> float:
        return max((row.failure_rate for row in self.table.rows), default=0.0)

    def boundary_hits(self) -> dict[EstimatorKind, int]:
        """Replications whose oracle bandwidth sat on an edge of the search bracket."""
        hits = {kind: 0 for kind in self.config.kinds}
        for record in self.records:
            for kind, result in record.results.items():
                hits[kind] += int(result.at_boundary)
        return hits


@dataclass(frozen=True)
class SimulationStatus:
    is_running: bool
    completed: int
    total: int
    failures: int
    density: str


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep``, split from the master seed by counter."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def sample_hash(sample: Sample) -> str:
    hasher = hashlib.sha256()
    hasher.update(sample.n.to_bytes(8, "big"))
    hasher.update(np.ascontiguousarray(sample.values, dtype="<f8").tobytes())
    return hasher.hexdigest()


def run_replication(cfg: SimulationConfig, rep: int) -> ReplicationRecord:
    """Draw one sample and find every requested estimator's oracle bandwidth on it."""
    rng = replication_rng(cfg.seed, rep)
    sample = cfg.truth.sample(cfg.n, rng)
    results: dict[EstimatorKind, OracleResult] = {}
    failures: dict[EstimatorKind, str] = {}
    for kind in cfg.kinds:
        try:
            results[kind] = oracle_bandwidth(kind, sample, cfg.truth, cfg.search, cfg.grid)
        except BiasCorrectedKdeError as exc:
            logging.debug("反復 %d で %s が失敗しました: %s", rep, kind.value, exc)
            failures[kind] = f"{type(exc).__name__}: {exc}"
    return ReplicationRecord(rep, sample_hash(sample), results, failures)


class SimulationRunner:
    def __init__(self, cfg: SimulationConfig) -> None:
        self._config = cfg
        self._running = False
        self._completed = 0
        self._failures = 0
        self._status_lock = threading.Lock()
        self._status_callback: Optional[Callable[[SimulationStatus], None]] = None

    @property
    def config(self) -> SimulationConfig:
        return self._config

    @property
    def status(self) -> SimulationStatus:
        with self._status_lock:
            return SimulationStatus(
                is_running=self._running,
                completed=self._completed,
                total=self._config.reps,
                failures=self._failures,
                density=self._config.label,
            )

    def register_status_callback(self, callback: Callable[[SimulationStatus], None]) -> None:
        self._status_callback = callback

    def run(self) -> SimulationResult:
        cfg = self._config
        with self._status_lock:
            self._running = True
            self._completed = 0
            self._failures = 0
        logging.info(
            "シミュレーションを開始します: 密度=%s n=%d 反復=%d 並列数=%d",
            cfg.label,
            cfg.n,
            cfg.reps,
            cfg.workers,
        )
        self._emit_status()

        records: list[ReplicationRecord] = []
        try:
            for record in self._records():
                records.append(record)
                with self._status_lock:
                    self._completed += 1
                    self._failures += len(record.failures)
                self._emit_status()
        finally:
            with self._status_lock:
                self._running = False

        table = SummaryTable.from_records(cfg.label, cfg.n, cfg.kinds, records)
        for row in table.rows:
            if row.failures:
                logging.warning(
                    "%s の失敗: %d / %d 反復 (%.2f%%)",
                    row.kind.value,
                    row.failures,
                    cfg.reps,
                    100.0 * row.failure_rate,
                )
        logging.info("シミュレーションが完了しました: 密度=%s n=%d", cfg.label, cfg.n)
        self._emit_status()
        result = SimulationResult(cfg, tuple(records), table)
        for kind, hits in result.boundary_hits().items():
            if hits:
                logging.info("%s の最適バンド幅が探索範囲の端: %d / %d 反復", kind.value, hits, cfg.reps)
        return result


    def _records(self) -> Iterator[ReplicationRecord]:
        cfg = self._config
        task = functools.partial(run_replication, cfg)
        if cfg.workers == 1:
            yield from map(task, range(cfg.reps))
            return
        chunksize = max(1, cfg.reps // (4 * cfg.workers))
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            yield from executor.map(task, range(cfg.reps), chunksize=chunksize)

    def _emit_status(self) -> None:
        status = self.status
        callback = self._status_callback
        if callback is not None:
            try:
                callback(status)
            except Exception:  # pragma: no cover - defensive
                logging.exception("シミュレーションステータスコールバックの実行に失敗しました。")


def run_simulation(cfg: SimulationConfig) -> SimulationResult:
    return SimulationRunner(cfg).run()


@dataclass(frozen=True)
class PairedComparison:
    kind_a: EstimatorKind
    kind_b: EstimatorKind
    pairs: int
    mean_difference_e5: float
    se_e5: Optional[float]


def paired_comparison(
    records: Iterable[ReplicationRecord],
    kind_a: Union[EstimatorKind, str],
    kind_b: Union[EstimatorKind, str],
) -> PairedComparison:
    """Mean of ISE(a) - ISE(b) over replications where both succeeded, x 1e5."""
    kind_a = EstimatorKind(kind_a)
    kind_b = EstimatorKind(kind_b)
    differences = np.array(
        [
            r.results[kind_a].min_ise - r.results[kind_b].min_ise
            for r in records
            if kind_a in r.results and kind_b in r.results
        ],
        dtype=float,
    )
    if differences.size == 0:
        raise EmptyTableError(f"no replication has results for both {kind_a.value} and {kind_b.value}")
    scaled = differences * config.ISE_SCALE
    se = float(np.std(scaled, ddof=1) / math.sqrt(scaled.size)) if scaled.size > 1 else None
    return PairedComparison(kind_a, kind_b, int(scaled.size), float(np.mean(scaled)), se)


def _format_float(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _render_csv(table: SummaryTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(config.SUMMARY_HEADER)
    for row in table.rows:
        writer.writerow(
            [
                row.density,
                row.n,
                row.kind.value,
                row.reps,
                _format_float(row.mean_min_ise_e5),
                _format_float(row.se_e5),
            ]
        )
    return buffer.getvalue()


def _render_markdown(table: SummaryTable) -> str:
    sizes = table.sizes
    header = ["Density", "Estimator"] + [f"n = {n}" for n in sizes]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * 2 + ["---:"] * len(sizes)) + "|",
    ]
    for density in table.densities:
        for position, kind in enumerate(table.kinds_for(density)):
            cells = []
            for n in sizes:
                row = table.row(density, n, kind)
                cells.append(row.cell() if row is not None else "")
            name = density if position == 0 else ""
            lines.append("| " + " | ".join([name, kind.symbol] + cells) + " |")
    lines.append("")
    lines.append("Mean min. ISE x 10^5 (S.E.)")
    return "\n".join(lines) + "\n"


def emit_table(t: SummaryTable, format: str = "markdown") -> str:
    """Render the summary as full-precision CSV or as a markdown block of "mean (se)" cells."""
    if not t.rows:
        raise EmptyTableError("summary table has no rows")
    if format == "csv":
        return _render_csv(t)
    if format == "markdown":
        return _render_markdown(t)
    raise ConfigError(f"unknown table format {format!r}; choose csv or markdown")


def density_slug(label: str) -> str:
    slug = _WHITESPACE_PATTERN.sub("_", label.strip().lower())
    slug = _NON_SLUG_PATTERN.sub("", slug)
    return re.sub(r"_+", "_", slug).strip("_") or "density"


@dataclass(frozen=True)
class OutputPaths:
    replications: Path
    summary: Path
    markdown: Path

    @classmethod
    def for_run(cls, out_dir: Path, label: str, n: int) -> "OutputPaths":
        stem = f"{density_slug(label)}_n{n}"
        return cls(
            out_dir / f"{stem}_replications.csv",
            out_dir / f"{stem}_summary.csv",
            out_dir / f"{stem}_table.md",
        )

    def all(self) -> tuple[Path, Path, Path]:
        return self.replications, self.summary, self.markdown


def write_replications(path: Path, records: Iterable[ReplicationRecord], kinds: Sequence[EstimatorKind]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(config.REPLICATION_HEADER)
        for record in records:
            for kind in kinds:
                result = record.results.get(kind)
                if result is None:
                    writer.writerow([record.rep_index, kind.value, "nan", "nan", record.sample_hash])
                else:
                    writer.writerow(
                        [record.rep_index, kind.value, repr(result.h_star), repr(result.min_ise), record.sample_hash]
                    )
    return path


def read_replications(path: Path) -> list[ReplicationRecord]:
    """Rebuild records from a replication CSV; evaluation counts are not persisted."""
    grouped: dict[int, tuple[str, dict, dict]] = {}
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _check_header(path, reader.fieldnames, config.REPLICATION_HEADER)
        for line in reader:
            rep = int(line["rep"])
            kind = EstimatorKind(line["kind"])
            digest, results, failures = grouped.setdefault(rep, (line["sample_hash"], {}, {}))
            if line["sample_hash"] != digest:
                raise ConfigError(f"{path}: replication {rep} has more than one sample hash")
            h_star = float(line["h_star"])
            min_ise = float(line["min_ise"])
            if math.isfinite(h_star) and math.isfinite(min_ise):
                results[kind] = OracleResult(h_star, min_ise, 0)
            else:
                failures[kind] = "failed"
    return [ReplicationRecord(rep, digest, results, failures) for rep, (digest, results, failures) in sorted(grouped.items())]


def write_summary(path: Path, table: SummaryTable) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_table(table, "csv"), encoding="utf-8")
    return path


def read_summary(path: Path) -> SummaryTable:
    rows = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _check_header(path, reader.fieldnames, config.SUMMARY_HEADER)
        for line in reader:
            rows.append(
                SummaryRow(
                    density=line["density"],
                    n=int(line["n"]),
                    kind=EstimatorKind(line["kind"]),
                    reps=int(line["reps"]),
                    mean_min_ise_e5=float(line["mean_min_ise_e5"]),
                    se_e5=float(line["se_e5"]) if line["se_e5"] else None,
                )
            )
    return SummaryTable(tuple(rows))


def _check_header(path: Path, found: Optional[Sequence[str]], expected: Sequence[str]) -> None:
    if tuple(found or ()) != tuple(expected):
        raise ConfigError(f"{path}: expected header {','.join(expected)}, found {','.join(found or ())}")


def write_outputs(result: SimulationResult, out_dir: Path) -> OutputPaths:
    cfg = result.config
    paths = OutputPaths.for_run(out_dir, cfg.label, cfg.n)
    write_replications(paths.replications, result.records, cfg.kinds)
    write_summary(paths.summary, result.table)
    paths.markdown.write_text(emit_table(result.table, "markdown"), encoding="utf-8")
    for path in paths.all():
        logging.info("ファイルを書き出しました: %s", path)
    return paths
