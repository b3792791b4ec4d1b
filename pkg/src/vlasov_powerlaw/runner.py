"""Run orchestration: time loop, series persistence and run summaries."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .coupling import StepRejected, SystemState, initial_state, step_picard, step_splitting
from .diagnostics import (
    DiagnosticsRow,
    balance_residual,
    compute_row,
    fit_decay,
    v_infinity,
)
from .fluid import admissible_dt

__all__ = ["NumericalFailure", "RunResult", "run", "series_header", "write_series",
           "read_series", "atomic_write", "SeriesFormatError"]

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """The simulation produced non-finite values or could not take a step."""


class SeriesFormatError(ValueError):
    """A series CSV does not follow the schema; carries the line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class RunResult:
    config: RunConfig
    rows: list
    initial: SystemState
    final: SystemState
    steps: int
    summary: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)


def _qname(q: float) -> str:
    if math.isinf(q):
        return "inf"
    return str(int(q)) if float(q).is_integer() else repr(float(q))


def series_header(dim: int, qs) -> list:
    cols = ["t", "E_tot", "E_mod", "D", "D_visc", "D_drag"]
    cols += [f"u_c_{i + 1}" for i in range(dim)]
    cols += [f"v_c_{i + 1}" for i in range(dim)]
    cols += ["mass"]
    cols += [f"P_{i + 1}" for i in range(dim)]
    cols += [f"rho_L{_qname(q)}" for q in qs]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_series(rows, dim: int, qs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(series_header(dim, qs))
    for r in rows:
        vals = [r.t, r.E_tot, r.E_mod, r.D, r.D_visc, r.D_drag, *r.u_c, *r.v_c, r.mass,
                *r.momentum, *(v for _, v in r.rho_norms)]
        w.writerow([_fmt(v) for v in vals])
    return buf.getvalue()


def read_series(path) -> dict:
    """Parse a series CSV into a mapping of float arrays keyed by column name."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SeriesFormatError(0, f"cannot read {path}: {e.strerror}") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SeriesFormatError(1, "empty file") from None
    for req in ("t", "E_mod"):
        if req not in header:
            raise SeriesFormatError(1, f"missing column {req!r}")
    data = {h: [] for h in header}
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise SeriesFormatError(lineno, f"expected {len(header)} fields, got {len(rec)}")
        for h, v in zip(header, rec):
            try:
                data[h].append(float(v))
            except ValueError:
                raise SeriesFormatError(lineno, f"column {h!r}: not a number: {v!r}") from None
    return {h: np.asarray(v) for h, v in data.items()}


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(s: SystemState) -> bool:
    return bool(np.all(np.isfinite(s.fluid.w)) and np.all(np.isfinite(s.fluid.u_c))
                and np.all(np.isfinite(s.particles.v)))


def run(cfg: RunConfig, out_dir=None, keep_snapshots: int = 0, write: bool = True,
        progress=None) -> RunResult:
    """Integrate ``cfg`` to ``t_end``; optionally write the output files.

    ``keep_snapshots > 0`` stores every ``keep_snapshots``-th output state in
    the result (for weak-form residuals).
    """
    law = cfg.law
    s = initial_state(cfg.initial, cfg.grid, cfg.n_particles, cfg.eps)
    s0 = s
    rows = [compute_row(s, law, cfg.rho_norms)]
    snaps = [s] if keep_snapshots else []
    viscous = cfg.coupling.viscous
    pol = cfg.dt
    steps = 0
    picard_stats = {"steps": 0, "unconverged": 0, "max_iterations": 0, "max_contraction": 0.0}
    t_tol = 1e-12 * max(1.0, cfg.t_end)
    while s.t < cfg.t_end - t_tol:
        if pol.policy == "fixed":
            dt = min(pol.value, cfg.t_end - s.t)
            check = True
        else:
            adm = admissible_dt(s.fluid, law, pol.c_visc, pol.c_adv, viscous)
            dt = min(adm, pol.dt_max, cfg.t_end - s.t)
            check = False
        if cfg.coupling.scheme == "splitting":
            s = step_splitting(s, law, dt, pol.c_visc, pol.c_adv,
                               cfg.coupling.double_mollify, check, viscous)
        else:
            if check:
                adm = admissible_dt(s.fluid, law, pol.c_visc, pol.c_adv, viscous)
                if dt > adm * (1 + 1e-12):
                    raise StepRejected(dt, adm)
            s = step_picard(s, law, dt, cfg.coupling.tol, cfg.coupling.max_iter,
                            cfg.coupling.double_mollify, viscous)
            info = s.info
            picard_stats["steps"] += 1
            picard_stats["unconverged"] += int(not info["converged"])
            picard_stats["max_iterations"] = max(picard_stats["max_iterations"],
                                                 info["iterations"])
            if info["contraction"]:
                picard_stats["max_contraction"] = max(picard_stats["max_contraction"],
                                                      max(info["contraction"]))
        steps += 1
        if not _finite(s):
            raise NumericalFailure(f"non-finite state at t={s.t:.6g} after {steps} steps")
        last = s.t >= cfg.t_end - t_tol
        if steps % cfg.cadence == 0 or last:
            rows.append(compute_row(s, law, cfg.rho_norms))
            if keep_snapshots and (len(rows) - 1) % keep_snapshots == 0:
                snaps.append(s)
            if progress is not None:
                progress(s, steps)
    summary = summarize(cfg, rows, s0, s, steps)
    if cfg.coupling.scheme == "picard":
        summary["picard"] = picard_stats
    res = RunResult(cfg, rows, s0, s, steps, summary, snaps)
    if write:
        write_outputs(res, out_dir if out_dir is not None else cfg.output)
    return res


def summarize(cfg: RunConfig, rows, s0: SystemState, s: SystemState, steps: int) -> dict:
    dim = cfg.grid.dim
    P0 = rows[0].momentum
    out = {
        "name": cfg.name,
        "p": cfg.law.p,
        "delta": cfg.law.delta,
        "steps": steps,
        "t_end": rows[-1].t,
        "rows": len(rows),
        "mass_error_max": max(abs(r.mass - rows[0].mass) for r in rows),
        "momentum_error_max": max(float(np.max(np.abs(r.momentum - P0))) for r in rows),
        "E_mod_initial": rows[0].E_mod,
        "E_mod_final": rows[-1].E_mod,
        "max_moment_final": rows[-1].max_moment,
        "max_moment_max": max(r.max_moment for r in rows),
        "viscous_regularization_flags": sum(r.visc_regularization_flag for r in rows),
        "rho_norm_max": {f"L{_qname(q)}": max(r.rho_norms[i][1] for r in rows)
                         for i, q in enumerate(cfg.rho_norms)},
    }
    try:
        r_mod, r_tot = balance_residual(rows)
        out["balance"] = {"r_mod": r_mod, "r_tot": r_tot}
    except ValueError as e:
        out["balance"] = {"error": str(e)}
    try:
        out["fit"] = fit_decay(rows, cfg.law.p).to_dict()
    except ValueError as e:
        out["fit"] = {"error": str(e)}
    vinf = v_infinity(s0)
    scale = 1.0 + float(np.linalg.norm(vinf))
    out["v_infinity"] = vinf.tolist()
    out["u_c_error"] = float(np.linalg.norm(rows[-1].u_c - vinf)) / scale
    out["v_c_error"] = float(np.linalg.norm(rows[-1].v_c - vinf)) / scale
    out["dim"] = dim
    return out


def write_outputs(res: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = res.config
    atomic_write(out / "series.csv", write_series(res.rows, cfg.grid.dim, cfg.rho_norms))
    echo = cfg.to_dict()
    echo["output"] = str(out)
    atomic_write(out / "config.echo.json", json.dumps(echo, indent=2) + "\n")
    atomic_write(out / "summary.json", json.dumps(_jsonable(res.summary), indent=2) + "\n")
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def rows_from_series(data: dict) -> list:
    """Rebuild minimal rows (``t``, energies, dissipation) from parsed CSV columns."""
    n = len(data["t"])
    out = []
    for i in range(n):
        out.append(DiagnosticsRow(
            t=data["t"][i], E_tot=data.get("E_tot", [np.nan] * n)[i], E_mod=data["E_mod"][i],
            D=data.get("D", [np.nan] * n)[i], D_visc=np.nan, D_drag=np.nan,
            u_c=np.zeros(0), v_c=np.zeros(0), mass=np.nan, momentum=np.zeros(0)))
    return out
