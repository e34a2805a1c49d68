"""Convergence studies over (p, m) grids and their CSV/rate-table output."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import Discretisation, QuadratureOrders
from .fields import (Excitation, assemble_rhs, density_l2_error, dipole_field, eval_potential,
                     fibonacci_sphere, field_error)
from .geometry import MultipatchGeometry, load_geometry, unit_sphere
from .h2 import build_h2_operator, interpolation_degree
from .mie import MieSeries
from .solver import GmresConfig, solve_scattering
from .spaces import assemble_T

log = logging.getLogger(__name__)

CSV_COLUMNS = ["p", "m", "h_ref", "dofs_real", "t_assembly_s", "t_solve_s", "gmres_iters",
               "dp_error", "mie_l2_error", "near_blocks", "far_blocks", "far_storage_mb"]
TIMING_COLUMNS = ("t_assembly_s", "t_solve_s")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


@dataclass
class StudyConfig:
    geometry: str = "sphere"
    kappa: float = 1.0
    degrees: list[int] = field(default_factory=lambda: [1, 2])
    levels: list[int] = field(default_factory=lambda: [1, 2, 3])
    eta: float = 1.6
    q: int | None = 10                 # fixed interpolation degree; None selects the rule below
    q_sigma: float = 0.0
    q_factor: float = 1.0
    q_min: int = 4
    mie: bool = True
    dipole: bool = True
    direction: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    dipole_source: tuple = (0.0, 0.0, 0.0)
    dipole_moment: tuple = (0.0, 0.1, 0.1)
    eval_points: int = 100
    eval_radius: float = 3.0
    tol: float = 1e-8
    restart: int = 1500
    max_iter: int = 20000
    separated_order_offset: int = 2
    singular_order_offset: int = 4
    output: str = "study_output"
    seed: int = 0                      # reserved; the default evaluation grid is deterministic

    # -- validation
    def validate(self) -> None:
        if not self.degrees:
            raise ConfigError("empty list of degrees")
        if not self.levels:
            raise ConfigError("empty list of refinement levels")
        if any(p < 1 for p in self.degrees):
            raise ConfigError("degrees must be >= 1")
        if any(m < 0 for m in self.levels):
            raise ConfigError("levels must be >= 0")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.q is not None and self.q < 1:
            raise ConfigError("q must be >= 1")
        if self.tol <= 0 or self.restart < 1 or self.max_iter < 1:
            raise ConfigError("invalid solver settings")
        if self.geometry != "sphere" and not Path(self.geometry).is_file():
            raise ConfigError(f"geometry file {self.geometry!r} not found")
        if not (self.mie or self.dipole):
            raise ConfigError("no excitation selected")

    def interpolation_degree(self, m: int) -> int:
        if self.q is not None:
            return self.q
        return interpolation_degree(self.q_sigma, m, self.q_factor, self.q_min)

    def quadrature(self, p: int) -> QuadratureOrders:
        return QuadratureOrders(p + self.separated_order_offset, p + self.singular_order_offset)

    def solver(self) -> GmresConfig:
        return GmresConfig(tol=self.tol, restart=self.restart, max_iter=self.max_iter)

    # -- INI round trip
    _SECTIONS = {
        "problem": ("geometry", "kappa", "degrees", "levels"),
        "compression": ("eta", "q", "q_sigma", "q_factor", "q_min"),
        "excitation": ("mie", "dipole", "direction", "polarization", "dipole_source",
                       "dipole_moment", "eval_points", "eval_radius"),
        "solver": ("tol", "restart", "max_iter"),
        "quadrature": ("separated_order_offset", "singular_order_offset"),
        "output": ("output", "seed"),
    }

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, keys in self._SECTIONS.items():
            cp[section] = {k: _format(getattr(self, k)) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "StudyConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        known = {k for keys in cls._SECTIONS.values() for k in keys}
        for section in cp.sections():
            if section not in cls._SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in cp[section].items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse(kinds[key], raw, cp[section], key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        return cls.from_ini(Path(path).read_text())


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(kind: str, raw: str, section, key):
    kind = str(kind)
    try:
        if kind.startswith("list[int]"):
            return _ints(raw)
        if kind == "tuple":
            return _floats(raw)
        if kind == "bool":
            return section.getboolean(key)
        if kind.startswith("int | None"):
            return None if raw.strip() == "auto" else int(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def config_template() -> str:
    header = ("# Convergence study configuration.\n"
              "# q = auto selects q = max(q_min, ceil(q_factor * (q_sigma + 1) * m)).\n")
    return header + StudyConfig().to_ini()


# ----------------------------------------------------------------- running

def resolve_geometry(name: str) -> MultipatchGeometry:
    if name == "sphere":
        return unit_sphere()
    return load_geometry(name)


@dataclass
class RunResult:
    row: dict
    converged: bool
    error: str | None = None
    residual_history: list = field(default_factory=list)
    stats: str = ""
    matvec_s: float = float("nan")     # mean wall time of one compressed matvec


def run_single(config: StudyConfig, geometry: MultipatchGeometry, p: int, m: int) -> RunResult:
    kappa = config.kappa
    row = {c: "" for c in CSV_COLUMNS}
    row.update(p=p, m=m, h_ref=2.0**-m)
    disc = Discretisation(geometry, p, m)
    Tm = assemble_T(geometry, p, m)
    row["dofs_real"] = Tm.dofs_real
    q = config.interpolation_degree(m)
    start = time.perf_counter()
    op = build_h2_operator(disc, Tm.T, kappa, q, config.eta, config.quadrature(p))
    t_assembly = time.perf_counter() - start
    stats = op.stats()
    row.update(t_assembly_s=round(t_assembly, 3), near_blocks=stats.near_blocks,
               far_blocks=stats.far_blocks, far_storage_mb=round(stats.far_storage_mb, 3))
    probe = np.cos(np.arange(Tm.dim)) + 1j * np.sin(0.5 * np.arange(Tm.dim))
    start = time.perf_counter()
    for _ in range(3):
        op.matvec(probe)
    matvec_s = (time.perf_counter() - start) / 3
    converged = True
    timed = None
    history = []
    if config.mie:
        ex = Excitation("plane-wave", kappa, config.direction, config.polarization)
        rep = solve_scattering(op, assemble_rhs(disc, Tm, ex), config.solver(), t_assembly)
        converged &= rep.converged
        timed = rep
        history = rep.history
        if config.geometry == "sphere":
            series = MieSeries(kappa, 1.0, config.direction, config.polarization)
            row["mie_l2_error"] = density_l2_error(disc, Tm, rep.x, series.surface_current)
    if config.dipole:
        ex = Excitation("hertz-dipole", kappa, source=config.dipole_source, moment=config.dipole_moment)
        rep = solve_scattering(op, assemble_rhs(disc, Tm, ex), config.solver(), t_assembly)
        converged &= rep.converged
        timed = timed or rep
        history = history or rep.history
        pts = fibonacci_sphere(config.eval_points, config.eval_radius)
        pot = eval_potential(disc, Tm, rep.x, kappa, pts)
        ref = dipole_field(pts, kappa, config.dipole_source, config.dipole_moment)
        row["dp_error"] = field_error(pot.values, ref)
    row.update(t_solve_s=round(timed.wall_time, 3), gmres_iters=timed.iterations)
    del op
    return RunResult(row, converged, residual_history=history, stats=stats.report(),
                     matvec_s=matvec_s)


def run_study(config: StudyConfig, output: str | Path | None = None) -> list[RunResult]:
    """Run all (p, m) combinations and write the report files."""
    config.validate()
    out = Path(output or config.output)
    out.mkdir(parents=True, exist_ok=True)
    geometry = resolve_geometry(config.geometry)
    results = []
    for p in config.degrees:
        for m in config.levels:
            log.info("run p=%d m=%d", p, m)
            try:
                res = run_single(config, geometry, p, m)
            except Exception as exc:       # recorded, the study goes on
                log.exception("run p=%d m=%d failed", p, m)
                row = {c: "" for c in CSV_COLUMNS}
                row.update(p=p, m=m, h_ref=2.0**-m)
                res = RunResult(row, False, error=f"{type(exc).__name__}: {exc}")
            results.append(res)
            write_outputs(out, config, results)
    return results


def write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: _csv_value(row[k]) for k in CSV_COLUMNS})


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_outputs(out: Path, config: StudyConfig, results: list[RunResult]) -> None:
    rows = [r.row for r in results]
    write_csv(out / "results.csv", rows)
    for column, stem in (("mie_l2_error", "mie_l2"), ("dp_error", "dp_error")):
        for p in sorted({int(r["p"]) for r in rows}):
            pts = [(r["h_ref"], r[column]) for r in rows if int(r["p"]) == p and r[column] != ""]
            if pts:
                with open(out / f"{stem}_p{p}.dat", "w") as fh:
                    fh.write("# h error\n")
                    for h, e in pts:
                        fh.write(f"{h!r} {e!r}\n")
    (out / "rates.txt").write_text(emit_rate_table(rows))
    with open(out / "report.txt", "w") as fh:
        fh.write(config.to_ini())
        for r in results:
            fh.write(f"\n# p={r.row['p']} m={r.row['m']} converged={r.converged}\n")
            if r.error:
                fh.write(f"error: {r.error}\n")
            fh.write(r.stats + "\n")
            fh.write(f"matvec_s: {r.matvec_s:.4f}\n")
            if r.residual_history:
                with open(out / f"residuals_p{r.row['p']}_m{r.row['m']}.csv", "w", newline="") as rh:
                    wr = csv.writer(rh, lineterminator="\n")
                    wr.writerow(["iteration", "residual"])
                    wr.writerows((i, repr(v)) for i, v in enumerate(r.residual_history))


def observed_orders(errors: list[float]) -> list[float]:
    """``log2(e_m / e_{m+1})`` for consecutive entries; NaN for non-positive input."""
    out = []
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
    return out


def emit_rate_table(rows: list[dict]) -> str:
    lines = []
    for column in ("mie_l2_error", "dp_error"):
        for p in sorted({int(r["p"]) for r in rows}):
            sel = sorted((r for r in rows if int(r["p"]) == p and r[column] not in ("", None)),
                         key=lambda r: int(r["m"]))
            if len(sel) < 2:
                continue
            errs = [float(r[column]) for r in sel]
            orders = observed_orders(errs)
            lines.append(f"{column} p={p}")
            for r, e, o in zip(sel, errs, [None] + orders):
                order = "" if o is None else ("nan (non-positive error)" if math.isnan(o) else f"{o:.3f}")
                lines.append(f"  m={int(r['m'])} h={float(r['h_ref']):.5g} error={e:.6e} order={order}")
            lines.append(f"  final observed order: {orders[-1]:.3f}")
    return "\n".join(lines) + "\n"


def deterministic_columns(rows: list[dict]) -> list[dict]:
    """Rows without the timing columns (for reproducibility checks)."""
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]
