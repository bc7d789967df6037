"""Scan configuration: presets, key-value config files and overrides."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import InvalidArgument

FULL_H_LIST = (1, 200, 500, 1000, 2000, 5000, 10**4, 2 * 10**4, 5 * 10**4, 10**5, 2 * 10**5, 5 * 10**5)
DESK_H_LIST = (200, 500, 1000, 2000, 5000, 10**4)


@dataclass(frozen=True)
class ScanConfig:
    preset: str = "sample-I-desk"
    m: int = 2000
    h_list: tuple[int, ...] = DESK_H_LIST
    n_start: int = 10**8
    n_end: int = 10**12
    n_points: int = 12
    seed: int = 0
    out: str = "scan.csv"
    q_mode: str = "exact"
    workers: int = 1
    max_eps_sys: float = 1e-3
    error_model: str = "moments"
    skip_overlaps: bool = True
    alpha_h_min: int = 100
    fix_alpha1: bool = False
    fix_intercept: bool = True

    def __post_init__(self):
        if self.m < 2:
            raise InvalidArgument("m must be >= 2")
        if not self.h_list or min(self.h_list) < 1:
            raise InvalidArgument("h_list must be non-empty with every h >= 1")
        if not 3 <= self.n_start <= self.n_end:
            raise InvalidArgument("need 3 <= n_start <= n_end")
        if self.n_points < 1 or (self.n_points == 1 and self.n_start != self.n_end):
            raise InvalidArgument("n_points must be >= 1 (and 1 only when n_start == n_end)")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgument("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise InvalidArgument("workers must be >= 1")

    def n_grid(self) -> list[int]:
        """Integers spaced uniformly in ``log N`` from ``n_start`` to ``n_end``."""
        if self.n_points == 1:
            return [self.n_start]
        lo, hi = math.log(self.n_start), math.log(self.n_end)
        step = (hi - lo) / (self.n_points - 1)
        grid = [round(math.exp(lo + i * step)) for i in range(self.n_points)]
        grid[0], grid[-1] = self.n_start, self.n_end
        return sorted(set(grid))


_FULL_GRID = dict(n_start=10**7, n_end=10**14, n_points=40)

PRESETS: dict[str, dict] = {
    "I": dict(m=2000, h_list=FULL_H_LIST, **_FULL_GRID),
    "II": dict(m=10**4, h_list=FULL_H_LIST, **_FULL_GRID),
    "III": dict(m=10**5, h_list=FULL_H_LIST, **_FULL_GRID),
    "sample-I-desk": dict(m=2000, h_list=DESK_H_LIST, n_start=10**8, n_end=10**12, n_points=12),
    "sample-I-desk-dense": dict(m=2000, h_list=DESK_H_LIST, n_start=10**8, n_end=10**12, n_points=2000),
    "custom": {},
}

_INT_KEYS = {"m", "n_start", "n_end", "n_points", "seed", "workers", "alpha_h_min"}
_BOOL_KEYS = {"skip_overlaps", "fix_alpha1", "fix_intercept"}


def parse_int(text: str) -> int:
    """Accept ``10000``, ``1e4``, ``2x10^5`` style integers."""
    t = str(text).strip().replace("_", "").replace(",", "")
    t = t.replace("x10^", "e").replace("*10^", "e").replace("*10**", "e")
    try:
        return int(t)
    except ValueError:
        pass
    if "e" in t.lower():
        mant, _, exp = t.lower().partition("e")
        try:
            value = Fraction(mant) * Fraction(10) ** int(exp)
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidArgument(f"not an integer: {text!r}") from exc
        if value.denominator == 1:
            return int(value)
    raise InvalidArgument(f"not an integer: {text!r}")


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in {"1", "true", "yes", "on"}:
        return True
    if t in {"0", "false", "no", "off"}:
        return False
    raise InvalidArgument(f"not a boolean: {text!r}")


def coerce(key: str, value):
    """Convert a raw config/CLI value to the field's type."""
    if value is None:
        return None
    if key == "h_list":
        if isinstance(value, (list, tuple)):
            return tuple(parse_int(v) for v in value)
        return tuple(parse_int(v) for v in str(value).split(",") if v.strip())
    if key in _INT_KEYS:
        return parse_int(value)
    if key in _BOOL_KEYS:
        return value if isinstance(value, bool) else _parse_bool(value)
    if key == "max_eps_sys":
        return float(value)
    return str(value).strip()


_FIELD_NAMES = {f.name for f in fields(ScanConfig)}
_ALIASES = {"h": "h_list", "sample_preset": "preset", "output_path": "out"}


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _FIELD_NAMES:
            raise InvalidArgument(f"{path}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def make_config(preset: str | None = None, file_values: dict | None = None, **overrides) -> ScanConfig:
    """Preset defaults, then config-file values, then explicit overrides."""
    values: dict = {}
    file_values = dict(file_values or {})
    preset = overrides.get("preset") or file_values.get("preset") or preset or "sample-I-desk"
    if preset not in PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values.update(PRESETS[preset])
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is not None:
                values[key] = coerce(key, value)
    values["preset"] = preset
    return replace(ScanConfig(), **values)
