"""Command line interface: ``simulate``, ``sweep`` and ``fit``.

Exit codes: 0 ok, 2 configuration or usage error, 3 numerical failure,
4 data error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .coupling import StepRejected
from .diagnostics import fit_decay
from .fluid import PowerLaw
from .kinetic import ConfigurationError
from .runner import (
    NumericalFailure,
    SeriesFormatError,
    atomic_write,
    read_series,
    rows_from_series,
    run,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DATA = 4

log = logging.getLogger("vlasov_powerlaw")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _worker_count(n_jobs: int) -> int:
    env = os.environ.get("SIM_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError("SIM_THREADS", f"expected a positive integer, got {env!r}")
    return max(1, min(cap, n_jobs))


def _simulate(cfg: RunConfig, out: Path) -> dict:
    from .report import plot_run

    res = run(cfg, out)
    plot_run(read_series(out / "series.csv"), res.summary, out)
    return res.summary


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out else cfg.output)
        summary = _simulate(cfg, out)
    except (ConfigError, ConfigurationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StepRejected as e:
        print(f"numerical failure: {e}; admissible dt = {e.admissible_dt:.6g}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalFailure, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"out": str(out), "balance": summary.get("balance"),
                      "fit": summary.get("fit")}))
    return EXIT_OK


def _sweep_child(cfg_dict: dict, out: str):
    cfg = RunConfig.from_dict(cfg_dict)
    try:
        summary = _simulate(cfg, Path(out))
        return {"status": "ok", "summary": summary}
    except StepRejected as e:
        return {"status": "failed", "error": f"{e}; admissible dt = {e.admissible_dt:.6g}"}
    except Exception as e:  # recorded per child, the sweep continues
        return {"status": "failed", "error": f"{type(e).__name__}: {e}"}


def _parse_plist(text: str) -> list:
    parts = [x.strip() for x in text.split(",") if x.strip()]
    if not parts:
        raise ConfigError("--p", "empty p-list")
    ps = []
    for x in parts:
        try:
            v = float(x)
        except ValueError:
            raise ConfigError("--p", f"not a number: {x!r}") from None
        try:
            PowerLaw(1.0, v)
        except ValueError as e:
            raise ConfigError("--p", str(e)) from None
        ps.append(v)
    return ps


def cmd_sweep(args) -> int:
    from .report import plot_sweep

    try:
        base = load_config(args.config)
        ps = _parse_plist(args.p)
        workers = _worker_count(len(ps))
    except (ConfigError, ConfigurationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in ps:
        d = base.to_dict()
        d["law"]["p"] = p
        sub = out / f"p_{p:g}"
        d["output"] = str(sub)
        jobs.append((p, d, str(sub)))
    if workers == 1:
        results = [_sweep_child(d, sub) for _, d, sub in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_child, [d for _, d, _ in jobs],
                                  [sub for _, _, sub in jobs]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "mode", "status", "rate", "slope", "r2", "envelope_c0", "envelope_ok",
                "regime_flag", "r_mod", "r_tot", "dir"])
    failed = 0
    curves = []
    for (p, _, sub), res in zip(jobs, results):
        mode = "exp" if p <= 2 else "alg"
        if res["status"] != "ok":
            failed += 1
            w.writerow([f"{p:g}", mode, "failed: " + res["error"], "", "", "", "", "", "", "",
                        "", sub])
            continue
        s = res["summary"]
        fit = s.get("fit", {})
        bal = s.get("balance", {})
        w.writerow([f"{p:g}", mode, "ok" if "error" not in fit else "fit: " + fit["error"],
                    *(format(fit[k], ".17g") if k in fit else "" for k in
                      ("rate", "slope", "r2", "envelope_c0")),
                    fit.get("envelope_ok", ""), fit.get("regime_flag", ""),
                    *(format(bal[k], ".17g") if k in bal else "" for k in ("r_mod", "r_tot")),
                    sub])
        curves.append((p, read_series(Path(sub) / "series.csv")))
    atomic_write(out / "sweep.csv", buf.getvalue())
    if curves:
        plot_sweep(curves, out)
    if failed:
        print(f"{failed} of {len(ps)} sweep runs failed; see {out / 'sweep.csv'}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"out": str(out), "runs": len(ps)}))
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        p = float(args.p)
        PowerLaw(1.0, p)
    except ValueError as e:
        print(f"config error: --p: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        data = read_series(args.input)
        fit = fit_decay(rows_from_series(data), p)
    except SeriesFormatError as e:
        print(f"data error: {args.input}: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(fit.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vlasov-powerlaw",
                 description="Particle/power-law fluid drag simulations and decay fits.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("simulate", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default: config 'output')")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep", help="run a configuration for several exponents p")
    p.add_argument("--config", required=True)
    p.add_argument("--p", required=True, help="comma-separated exponents, e.g. 1.5,2,3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("fit", help="fit the decay law to a series CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--p", required=True)
    p.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
