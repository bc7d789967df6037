"""Fits over scan rows, the fit report and the replication report."""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .ensemble import SamplePoint, Scale
from .errors import ConvergenceError, InvalidArgument, PrimevarError, ScaleWarning
from .fitting import (
    ALPHA_H_MIN,
    MS_CONSTANT,
    MS_CONSTANT_PRINTED,
    AlphaFitResult,
    AlphaPoint,
    ConsistencyResult,
    LinearFitResult,
    alpha_from_slope,
    consistency_regression,
    fit_alpha_hyperbolic,
    fit_linear,
    hyperbolic_alpha,
    ms_predict_w,
)
from .pipeline import ScanRow

FIT_COLUMNS = ("source", "kind", "h", "m", "N", "param", "value", "uncertainty", "chi2", "ndf")

# Acceptance thresholds quoted in the replication report.
ALPHA1_RANGE = (0.97, 1.03)
DERIVED_TOL = 0.05
MAX_PULL = 4.0
MAX_MEAN_PULL = 3.0
N_SIGMA = 3.0


@dataclass
class Family:
    h: int
    m: int
    points: list[SamplePoint]
    fit: LinearFitResult
    free_fit: LinearFitResult | None = None
    alpha: AlphaPoint | None = None


@dataclass
class Residual:
    N: int
    h: int
    m: int
    w: float
    w_pred: float
    sigma_w: float

    @property
    def pull(self) -> float:
        return (self.w - self.w_pred) / self.sigma_w


@dataclass
class Analysis:
    source: str
    m: int
    families: list[Family] = field(default_factory=list)
    excluded: list[tuple[int, str]] = field(default_factory=list)
    alpha_fit: AlphaFitResult | None = None
    alpha_note: str | None = None
    alpha_converged: bool = True
    consistency: ConsistencyResult | None = None
    consistency_note: str | None = None
    residuals: list[Residual] = field(default_factory=list)

    def alpha_points(self, h_min: int = ALPHA_H_MIN) -> list[AlphaPoint]:
        return [f.alpha for f in self.families if f.alpha is not None and f.h > h_min]

    def offset(self, h_min: int = ALPHA_H_MIN) -> tuple[float, float] | None:
        """Weighted mean of ``b - log h`` over the families used for alpha."""
        fams = [f for f in self.families if f.h > h_min]
        if not fams:
            return None
        wts = [1 / f.fit.sigma_b**2 for f in fams]
        mean = sum(w * (f.fit.slope_b - math.log(f.h)) for w, f in zip(wts, fams)) / sum(wts)
        return mean, 1 / math.sqrt(sum(wts))


def _analyze_one(
    source: str, m: int, rows: Sequence[ScanRow], alpha_h_min: int, fix_alpha1: bool, fix_intercept: bool
) -> Analysis:
    out = Analysis(source, m)
    by_h: dict[int, list[ScanRow]] = defaultdict(list)
    for r in rows:
        by_h[r.h].append(r)
    for h in sorted(by_h):
        pts = [r.sample_point() for r in sorted(by_h[h], key=lambda r: r.N)]
        if len(pts) < 3:
            out.excluded.append((h, f"only {len(pts)} N-points (need 3)"))
            continue
        try:
            fit = fit_linear(pts, fix_intercept=fix_intercept)
            free = fit_linear(pts, fix_intercept=False) if fix_intercept else None
        except PrimevarError as exc:
            out.excluded.append((h, str(exc)))
            continue
        fam = Family(h, m, pts, fit, free)
        if h > 1:
            fam.alpha = alpha_from_slope(fit)
        out.families.append(fam)

    alpha_pts = out.alpha_points(alpha_h_min)
    if len(alpha_pts) >= 3:
        try:
            out.alpha_fit = fit_alpha_hyperbolic(alpha_pts, h_min=alpha_h_min, fix_alpha1=fix_alpha1)
        except ConvergenceError as exc:
            out.alpha_fit, out.alpha_converged = exc.last, False
            out.alpha_note = str(exc)
        except PrimevarError as exc:
            out.alpha_note = str(exc)
    else:
        out.alpha_note = f"alpha fit skipped: {len(alpha_pts)} families with h > {alpha_h_min} (need 3)"

    pairs = [(p, f.fit) for f in out.families for p in f.points]
    try:
        out.consistency = consistency_regression(pairs)
    except PrimevarError as exc:
        out.consistency_note = f"consistency regression skipped: {exc}"

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScaleWarning)
        for r in rows:
            if r.scale == Scale.MESOSCOPIC.value:
                out.residuals.append(Residual(r.N, r.h, r.m, r.w, ms_predict_w(r.N, r.h), r.sigma_w))
    return out


def analyze(
    rows: Sequence[ScanRow],
    alpha_h_min: int = ALPHA_H_MIN,
    fix_alpha1: bool = False,
    fix_intercept: bool = True,
) -> list[Analysis]:
    """One ``Analysis`` per (source, m) group, in first-seen order."""
    groups: dict[tuple[str, int], list[ScanRow]] = {}
    for r in rows:
        groups.setdefault((r.source, r.m), []).append(r)
    return [
        _analyze_one(src, m, grp, alpha_h_min, fix_alpha1, fix_intercept) for (src, m), grp in groups.items()
    ]


# --- fit report ---------------------------------------------------------------


def _f(x) -> str:
    return "" if x is None else repr(float(x))


def fit_records(analyses: Sequence[Analysis]) -> list[list[str]]:
    recs = []
    for an in analyses:
        def add(kind, h, N, param, value, unc=None, chi2=None, ndf=None):
            recs.append([an.source, kind, "" if h is None else str(h), str(an.m),
                         "" if N is None else str(N), param, _f(value), _f(unc), _f(chi2),
                         "" if ndf is None else str(ndf)])

        for fam in an.families:
            fit = fam.fit
            add("linear", fam.h, None, "a", fit.intercept_a, fit.sigma_a, fit.chi2, fit.ndf)
            add("linear", fam.h, None, "b", fit.slope_b, fit.sigma_b, fit.chi2, fit.ndf)
            if fam.free_fit is not None:
                ff = fam.free_fit
                add("linear", fam.h, None, "a_free", ff.intercept_a, ff.sigma_a, ff.chi2, ff.ndf)
                add("linear", fam.h, None, "b_free", ff.slope_b, ff.sigma_b, ff.chi2, ff.ndf)
        for fam in an.families:
            if fam.alpha is not None:
                add("alpha_point", fam.h, None, "alpha", fam.alpha.alpha, fam.alpha.sigma_alpha)
        af = an.alpha_fit
        if af is not None:
            add("alpha_fit", None, None, "alpha1", af.alpha1, af.sigma_alpha1, af.chi2, af.ndf)
            add("alpha_fit", None, None, "alpha2", af.alpha2, af.sigma_alpha2, af.chi2, af.ndf)
            add("alpha_fit", None, None, "two_minus_a1a2", af.derived_2_minus_a1a2, af.sigma_derived, af.chi2, af.ndf)
            add("alpha_fit", None, None, "ms_constant", MS_CONSTANT)
            add("alpha_fit", None, None, "converged", 1.0 if an.alpha_converged else 0.0)
        if an.consistency is not None:
            g = an.consistency
            add("consistency", None, None, "A", g.A, g.sigma_A, g.chi2, g.ndf)
            add("consistency", None, None, "B", g.B_slope, g.sigma_B, g.chi2, g.ndf)
        for res in an.residuals:
            add("ms_residual", res.h, res.N, "pull", res.pull, res.sigma_w)
    return recs


def fit_summary(analyses: Sequence[Analysis]) -> str:
    lines = []
    for an in analyses:
        lines.append(f"== source={an.source} m={an.m} ==")
        lines.append(f"{'h':>8} {'b':>10} {'sigma_b':>9} {'b-log h':>8} {'chi2/ndf':>9} {'a_free':>10}")
        for fam in an.families:
            f, ff = fam.fit, fam.free_fit
            afree = f"{ff.intercept_a:.5f}" if ff else "-"
            lines.append(
                f"{fam.h:>8} {f.slope_b:>10.4f} {f.sigma_b:>9.4f} {f.slope_b - math.log(fam.h):>8.4f} "
                f"{f.chi2 / max(f.ndf, 1):>9.3f} {afree:>10}"
            )
        for h, reason in an.excluded:
            lines.append(f"  excluded h={h}: {reason}")
        af = an.alpha_fit
        if af is not None:
            tag = "" if an.alpha_converged else "  (NOT CONVERGED, last iterate)"
            lines.append(f"alpha1 = {af.alpha1:.5f} +- {af.sigma_alpha1:.5f}{tag}")
            lines.append(f"alpha2 = {af.alpha2:.5f} +- {af.sigma_alpha2:.5f}")
            lines.append(
                f"2 - alpha1*alpha2 = {af.derived_2_minus_a1a2:.5f} +- {af.sigma_derived:.5f}"
                f"   (gamma_E + log 2pi - 1 = {MS_CONSTANT:.7f})"
            )
            lines.append(f"chi2/ndf = {af.chi2:.3f}/{af.ndf}")
        if an.alpha_note:
            lines.append(an.alpha_note)
        off = an.offset()
        if off:
            lines.append(f"weighted mean of b - log h (h > {ALPHA_H_MIN}) = {off[0]:.5f} +- {off[1]:.5f}")
        if an.consistency is not None:
            g = an.consistency
            lines.append(f"consistency regression: A = {g.A:.6f} +- {g.sigma_A:.6f}, B = {g.B_slope:.5f} +- {g.sigma_B:.5f}")
        elif an.consistency_note:
            lines.append(an.consistency_note)
        if an.residuals:
            pulls = [abs(r.pull) for r in an.residuals]
            lines.append(f"MS pulls over {len(pulls)} mesoscopic rows: max |pull| = {max(pulls):.3f}, "
                         f"mean |pull| = {sum(pulls) / len(pulls):.3f}")
        lines.append("")
    return "\n".join(lines)


def write_fit_report(analyses: Sequence[Analysis], out: str | Path) -> tuple[Path, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIT_COLUMNS)
        writer.writerows(fit_records(analyses))
    text = out.with_suffix(".txt")
    text.write_text(fit_summary(analyses))
    return out, text


# --- replication report ------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class RatioRow:
    N: int
    h: int
    m: int
    w_real: float
    sigma_real: float
    w_model: float
    sigma_model: float
    scale: str

    @property
    def ratio_observed(self) -> float:
        return self.w_model / self.w_real

    @property
    def ratio_conjectured(self) -> float:
        return math.log(self.N) / math.log(self.N / self.h)

    @property
    def divergence_sigma(self) -> float:
        return (self.w_model - self.w_real) / math.hypot(self.sigma_real, self.sigma_model)


def ratio_rows(prime_rows: Sequence[ScanRow], cramer_rows: Sequence[ScanRow]) -> list[RatioRow]:
    model = {(r.N, r.h, r.m): r for r in cramer_rows}
    out = []
    for r in prime_rows:
        c = model.get((r.N, r.h, r.m))
        if c is not None:
            out.append(RatioRow(r.N, r.h, r.m, r.w, r.sigma_w, c.w, c.sigma_w, r.scale))
    return out


def acceptance_checks(prime: Analysis | None, ratios: Sequence[RatioRow]) -> list[Check]:
    checks = []
    if prime is not None and prime.alpha_fit is not None:
        af = prime.alpha_fit
        lo, hi = ALPHA1_RANGE
        checks.append(Check("alpha1 in [0.97, 1.03]", lo <= af.alpha1 <= hi and prime.alpha_converged,
                            f"alpha1 = {af.alpha1:.5f} +- {af.sigma_alpha1:.5f}"))
        d = af.derived_2_minus_a1a2
        checks.append(Check(f"|2 - a1 a2 - {MS_CONSTANT:.3f}| < {DERIVED_TOL}", abs(d - MS_CONSTANT) < DERIVED_TOL,
                            f"2 - a1 a2 = {d:.5f} +- {af.sigma_derived:.5f}"))
    if prime is not None and prime.residuals:
        pulls = [abs(r.pull) for r in prime.residuals]
        worst, mean = max(pulls), sum(pulls) / len(pulls)
        checks.append(Check(f"every mesoscopic |pull| < {MAX_PULL:g}", worst < MAX_PULL,
                            f"max |pull| = {worst:.3f} over {len(pulls)} rows"))
        checks.append(Check(f"mean |pull| < {MAX_MEAN_PULL:g}", mean < MAX_MEAN_PULL, f"mean |pull| = {mean:.3f}"))
    if prime is not None and prime.consistency is not None:
        g = prime.consistency
        za, zb = (g.A - 1) / g.sigma_A, (g.B_slope - 1) / g.sigma_B
        checks.append(Check("consistency intercept A = 1 within 3 sigma", abs(za) <= N_SIGMA,
                            f"A = {g.A:.6f} +- {g.sigma_A:.6f} ({za:+.2f} sigma)"))
        checks.append(Check("consistency slope B = 1 within 3 sigma", abs(zb) <= N_SIGMA,
                            f"B = {g.B_slope:.5f} +- {g.sigma_B:.5f} ({zb:+.2f} sigma)"))
    for rr in ratios:
        if rr.scale != Scale.MESOSCOPIC.value:
            continue
        w_pois = 1 - 1 / math.log(rr.N)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScaleWarning)
            w_ms = ms_predict_w(rr.N, rr.h)
        ok = (
            rr.divergence_sigma >= N_SIGMA
            and abs(rr.w_model - w_pois) <= N_SIGMA * rr.sigma_model
            and abs(rr.w_real - w_ms) <= N_SIGMA * rr.sigma_real
        )
        checks.append(Check(
            f"Cramér divergence at N={rr.N}, h={rr.h}", ok,
            f"w_model-w_real = {rr.w_model - rr.w_real:.4f} ({rr.divergence_sigma:.1f} sigma); "
            f"model vs 1-1/log N {(rr.w_model - w_pois) / rr.sigma_model:+.2f} sigma; "
            f"primes vs MS {(rr.w_real - w_ms) / rr.sigma_real:+.2f} sigma",
        ))
    return checks


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return out


def build_report(prime_rows: Sequence[ScanRow], cramer_rows: Sequence[ScanRow]) -> tuple[str, list[Check]]:
    """Markdown replication report and its acceptance checks."""
    prime_rows = [r for r in prime_rows if r.source == "primes"]
    if not prime_rows:
        raise InvalidArgument("replication report needs at least one prime scan row")
    prime_list = analyze(prime_rows)
    prime = max(prime_list, key=lambda a: len(a.families))
    model_list = analyze(cramer_rows) if cramer_rows else []
    ratios = ratio_rows(prime_rows, cramer_rows)
    L = ["# Primes in short intervals: replication report", ""]
    L.append(f"Prime scan: {len(prime_rows)} rows. Cramér baseline: {len(cramer_rows)} rows.")
    if not cramer_rows:
        L.append("")
        L.append("**Cramér baseline missing**: model comparisons are omitted.")
    L.append("")
    L.append(f"Constant gamma_E + log 2pi - 1 = {MS_CONSTANT:.10f} "
             f"(a misprinted value {MS_CONSTANT_PRINTED} is also in circulation; "
             f"difference {MS_CONSTANT - MS_CONSTANT_PRINTED:.2e}).")

    L += ["", "## Slopes b(h) from w = 1 - b/log N", ""]
    for an in prime_list + model_list:
        L.append(f"source={an.source}, m={an.m}")
        L.append("")
        if an.families:
            L += _table(
                ["h", "b", "sigma_b", "b - log h", "chi2/ndf", "a (free fit)"],
                [[f.h, f"{f.fit.slope_b:.4f}", f"{f.fit.sigma_b:.4f}", f"{f.fit.slope_b - math.log(f.h):.4f}",
                  f"{f.fit.chi2 / max(f.fit.ndf, 1):.3f}",
                  f"{f.free_fit.intercept_a:.5f} +- {f.free_fit.sigma_a:.5f}" if f.free_fit else "-"]
                 for f in an.families],
            )
        for h, reason in an.excluded:
            L.append(f"- h={h} excluded: {reason}")
        L.append("")

    L += ["## alpha(h) = (b - 1)/log h and hyperbolic fit", ""]
    af = prime.alpha_fit
    rows = []
    for f in prime.families:
        if f.alpha is None:
            continue
        curve = hyperbolic_alpha(math.log(f.h), af.alpha1, af.alpha2) if af else float("nan")
        rows.append([f.h, f"{math.log(f.h):.4f}", f"{f.alpha.alpha:.5f}", f"{f.alpha.sigma_alpha:.5f}",
                     f"{curve:.5f}", "yes" if f.h > ALPHA_H_MIN else "no"])
    L += _table(["h", "log h", "alpha", "sigma", "fitted alpha(h)", "in fit"], rows)
    L.append("")
    if af is not None:
        L.append(f"- alpha1 = {af.alpha1:.5f} +- {af.sigma_alpha1:.5f}")
        L.append(f"- alpha2 = {af.alpha2:.5f} +- {af.sigma_alpha2:.5f}")
        L.append(f"- 2 - alpha1 alpha2 = {af.derived_2_minus_a1a2:.5f} +- {af.sigma_derived:.5f}")
        L.append(f"- chi2/ndf = {af.chi2:.3f}/{af.ndf}{'' if prime.alpha_converged else ' (not converged)'}")
    if prime.alpha_note:
        L.append(f"- {prime.alpha_note}")
    off = prime.offset()
    if off:
        L.append(f"- direct weighted mean of b - log h: {off[0]:.5f} +- {off[1]:.5f}")

    L += ["", "## w against b(h)/log N (all sets)", ""]
    if prime.consistency is not None:
        g = prime.consistency
        L.append(f"w = A - B x with A = {g.A:.6f} +- {g.sigma_A:.6f}, B = {g.B_slope:.5f} +- {g.sigma_B:.5f}, "
                 f"chi2/ndf = {g.chi2:.2f}/{g.ndf}")
    else:
        L.append(prime.consistency_note or "not available")

    L += ["", "## Variance ratio against log N / log(N/h)", ""]
    if ratios:
        L += _table(
            ["N", "h", "w primes", "w model", "observed ratio", "log N/log(N/h)", "divergence (sigma)"],
            [[r.N, r.h, f"{r.w_real:.4f} +- {r.sigma_real:.4f}", f"{r.w_model:.4f} +- {r.sigma_model:.4f}",
              f"{r.ratio_observed:.4f}", f"{r.ratio_conjectured:.4f}", f"{r.divergence_sigma:.1f}"]
             for r in ratios],
        )
    else:
        L.append("no (N, h, m) cells shared by both scans")

    L += ["", "## Residuals against w = 1 - (log h + C)/log N", ""]
    if prime.residuals:
        by_h = defaultdict(list)
        for r in prime.residuals:
            by_h[r.h].append(r.pull)
        L += _table(
            ["h", "rows", "mean pull", "max |pull|"],
            [[h, len(p), f"{sum(p) / len(p):+.3f}", f"{max(map(abs, p)):.3f}"] for h, p in sorted(by_h.items())],
        )
    else:
        L.append("no mesoscopic rows")

    checks = acceptance_checks(prime, ratios)
    L += ["", "## Acceptance checks", ""]
    L += [f"- {c.line()}" for c in checks]
    L.append("")
    return "\n".join(L), checks
