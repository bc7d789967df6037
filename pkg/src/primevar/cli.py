"""Command line: ``primevar {scan,cramer,fit,report}``.

Exit codes: 0 success, 1 usage error, 2 data/guard error, 3 fit
non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, pipeline
from .config import make_config, read_config_file
from .errors import InvalidArgument, PrimevarError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOCONVERGE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", help="I, II, III, sample-I-desk, sample-I-desk-dense or custom")
    p.add_argument("--m", help="intervals per set")
    p.add_argument("--h", dest="h_list", help="comma-separated interval lengths")
    p.add_argument("--n-start", dest="n_start")
    p.add_argument("--n-end", dest="n_end")
    p.add_argument("--n-points", dest="n_points")
    p.add_argument("--seed")
    p.add_argument("--out")
    p.add_argument("--workers")
    p.add_argument("--q-mode", dest="q_mode", choices=("exact", "frozen"))
    p.add_argument("--fix-alpha1", dest="fix_alpha1", action="store_const", const=True, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="primevar", description="Variance of prime counts in short intervals.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("scan", "count primes over an (N, h) grid"),
                        ("cramer", "simulate the Cramér model over an (N, h) grid")):
        _add_common(sub.add_parser(name, help=help_))
    p = sub.add_parser("fit", help="fit a scan CSV")
    p.add_argument("scan_csv")
    _add_common(p)
    p = sub.add_parser("report", help="replication report from prime and Cramér scans")
    p.add_argument("prime_csv")
    p.add_argument("cramer_csv", nargs="?")
    _add_common(p)
    return parser


_CONFIG_KEYS = ("m", "h_list", "n_start", "n_end", "n_points", "seed", "out", "workers", "q_mode", "fix_alpha1")


class UsageError(Exception):
    pass


def _config(args, default_out: str):
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = {k: getattr(args, k) for k in _CONFIG_KEYS}
        overrides["preset"] = args.preset
        if overrides["out"] is None and "out" not in file_values:
            overrides["out"] = default_out
        return make_config(file_values=file_values, **overrides)
    except (InvalidArgument, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _scan(args, source: str) -> int:
    cfg = _config(args, f"{source}.csv")
    rows, skips = pipeline.run_scan(cfg, source=source)
    out = pipeline.write_scan(rows, skips, cfg.out)
    print(f"wrote {len(rows)} rows to {out} ({len(skips)} skipped, see {pipeline.skip_path(out)})")
    return EXIT_OK


def _fit(args) -> int:
    cfg = _config(args, str(Path(args.scan_csv).with_suffix("")) + ".fit.csv")
    rows = pipeline.read_scan(args.scan_csv)
    if not rows:
        raise InvalidArgument(f"{args.scan_csv} has no rows")
    results = analysis.analyze(rows, alpha_h_min=cfg.alpha_h_min, fix_alpha1=cfg.fix_alpha1,
                               fix_intercept=cfg.fix_intercept)
    csv_path, txt_path = analysis.write_fit_report(results, cfg.out)
    print(txt_path.read_text(), end="")
    print(f"wrote {csv_path} and {txt_path}")
    return EXIT_OK if all(a.alpha_converged for a in results) else EXIT_NOCONVERGE


def _report(args) -> int:
    cfg = _config(args, "report.md")
    prime_rows = pipeline.read_scan(args.prime_csv)
    cramer_rows = pipeline.read_scan(args.cramer_csv) if args.cramer_csv else []
    text, checks = analysis.build_report(prime_rows, cramer_rows)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    for c in checks:
        print(c.line())
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("scan", "cramer"):
            return _scan(args, "primes" if args.command == "scan" else "cramer")
        if args.command == "fit":
            return _fit(args)
        return _report(args)
    except UsageError as exc:
        print(f"primevar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PrimevarError, OSError) as exc:
        print(f"primevar: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
