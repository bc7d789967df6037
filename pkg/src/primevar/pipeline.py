"""Scans over (N, h) grids and their CSV persistence."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ScanConfig
from .cramer_model import CramerConfig, simulate_counts
from .ensemble import (
    EnsembleSpec,
    SamplePoint,
    compute_stats,
    count_ensemble,
    sigma_w_for,
    systematic_error,
)
from .errors import InvalidArgument, SchemaError
from .prime_engine import BasePrimeTable, table_for

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
SCAN_COLUMNS = (
    "schema_version", "source", "N", "h", "m", "mean", "variance", "w",
    "lambda", "eps_sys", "eps_stat", "scale",
)
#: Appended after the fixed columns; the fit weight of each row.
EXTRA_COLUMNS = ("sigma_w",)
SKIP_COLUMNS = ("schema_version", "source", "N", "h", "m", "reason")


@dataclass(frozen=True)
class ScanRow:
    source: str
    N: int
    h: int
    m: int
    mean: float
    variance: float
    w: float
    lam: float
    eps_sys: float
    eps_stat: float
    scale: str
    sigma_w: float

    def csv_fields(self) -> list[str]:
        return [
            SCHEMA_VERSION, self.source, str(self.N), str(self.h), str(self.m),
            repr(self.mean), repr(self.variance), repr(self.w), repr(self.lam),
            repr(self.eps_sys), repr(self.eps_stat), self.scale, repr(self.sigma_w),
        ]

    def sample_point(self) -> SamplePoint:
        return SamplePoint(1.0 / math.log(self.N), self.w, self.sigma_w, self.h, self.m, self.N)


@dataclass(frozen=True)
class Skip:
    source: str
    N: int
    h: int
    m: int
    reason: str


@dataclass(frozen=True)
class Cell:
    source: str
    N: int
    h: int
    m: int
    seed: int = 0
    q_mode: str = "exact"
    error_model: str = "moments"


def plan_cells(config: ScanConfig, source: str) -> tuple[list[Cell], list[Skip]]:
    """Expand the grid in config order (h-major), applying the guards.

    Rejected pairs come back as ``Skip`` records: spans that do not fit above
    the start of the model's domain, ``eps_sys`` above the limit, and (with
    ``skip_overlaps``) sets overlapping the previously kept set of the same h.
    """
    cells, skips = [], []
    floor = 3 if source == "cramer" else 0
    for h in config.h_list:
        last_end = None
        for N in config.n_grid():
            m = config.m
            # the first-order estimate never exceeds the exact one, so it can
            # reject sets too wide to even be built around N
            eps1 = m * h / (N * math.log(N))
            if eps1 > config.max_eps_sys:
                skips.append(Skip(source, N, h, m, f"guard eps_sys>={eps1:.4g} > {config.max_eps_sys:g}"))
                continue
            try:
                spec = EnsembleSpec(N, h, m)
            except InvalidArgument as exc:
                skips.append(Skip(source, N, h, m, f"invalid: {exc}"))
                continue
            if spec.first_start < floor or N - spec.span / 2 <= 1:
                skips.append(Skip(source, N, h, m, "set reaches below the model domain"))
                continue
            eps = systematic_error(spec).exact
            if eps > config.max_eps_sys:
                skips.append(Skip(source, N, h, m, f"guard eps_sys={eps:.4g} > {config.max_eps_sys:g}"))
                continue
            if config.skip_overlaps and last_end is not None and spec.first_start < last_end:
                skips.append(Skip(source, N, h, m, f"overlaps previous set ending at {last_end}"))
                continue
            last_end = spec.first_start + spec.span
            cells.append(Cell(source, N, h, m, config.seed, config.q_mode, config.error_model))
    return cells, skips


_TABLE: BasePrimeTable | None = None


def _init_worker(limit_end: int):
    global _TABLE
    _TABLE = table_for(limit_end)


def run_cell(cell: Cell) -> ScanRow | Skip:
    spec = EnsembleSpec(cell.N, cell.h, cell.m)
    if cell.source == "primes":
        counts = count_ensemble(spec, _TABLE)
    else:
        counts = simulate_counts(CramerConfig(spec, cell.seed, cell.q_mode))
    stats = compute_stats(spec, counts)
    if not stats.w_defined:
        return Skip(cell.source, cell.N, cell.h, cell.m, "w undefined (zero mean count)")
    return ScanRow(
        source=cell.source,
        N=cell.N,
        h=cell.h,
        m=cell.m,
        mean=float(stats.mean_count),
        variance=float(stats.variance_count),
        w=stats.normalized_variance_w,
        lam=stats.lambda_expected,
        eps_sys=stats.eps_sys,
        eps_stat=stats.eps_stat,
        scale=str(stats.scale),
        sigma_w=sigma_w_for(stats, cell.error_model),
    )


def run_scan(config: ScanConfig, source: str = "primes") -> tuple[list[ScanRow], list[Skip]]:
    if source not in ("primes", "cramer"):
        raise InvalidArgument(f"unknown source {source!r}")
    cells, skips = plan_cells(config, source)
    max_end = max((c.N + c.h * c.m for c in cells), default=4)
    if config.workers == 1 or len(cells) < 2:
        _init_worker(max_end)
        outcome = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(max_end,)) as pool:
            outcome = list(pool.map(run_cell, cells, chunksize=max(1, len(cells) // (8 * config.workers))))
    rows = [r for r in outcome if isinstance(r, ScanRow)]
    skips += [r for r in outcome if isinstance(r, Skip)]
    for s in skips:
        log.info("skipped N=%d h=%d m=%d: %s", s.N, s.h, s.m, s.reason)
    return rows, skips


def skip_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".skipped.csv")


def write_scan(rows: list[ScanRow], skips: list[Skip], out: str | Path) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCAN_COLUMNS + EXTRA_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_fields())
    with skip_path(out).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SKIP_COLUMNS)
        for s in skips:
            writer.writerow([SCHEMA_VERSION, s.source, s.N, s.h, s.m, s.reason])
    return out


def read_scan(path: str | Path) -> list[ScanRow]:
    """Load a scan CSV. An empty file yields no rows."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header[: len(SCAN_COLUMNS)]) != SCAN_COLUMNS:
            raise SchemaError(f"{path}: unexpected header {header}")
        has_sigma = "sigma_w" in header
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if rec[0] != SCHEMA_VERSION:
                raise SchemaError(f"{path}:{lineno}: schema version {rec[0]!r}, expected {SCHEMA_VERSION}")
            try:
                w, eps_stat = float(rec[7]), float(rec[10])
                sigma = float(rec[header.index("sigma_w")]) if has_sigma else 2 * eps_stat * w
                rows.append(ScanRow(
                    source=rec[1], N=int(rec[2]), h=int(rec[3]), m=int(rec[4]),
                    mean=float(rec[5]), variance=float(rec[6]), w=w, lam=float(rec[8]),
                    eps_sys=float(rec[9]), eps_stat=eps_stat, scale=rec[11], sigma_w=sigma,
                ))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{lineno}: malformed row ({exc})") from exc
    return rows
