"""Experiment orchestration: configuration, cached runs, decay fits, reports.

An experiment evaluates, on every ray ``x = c t`` of the soliton region and
every time of a geometric ladder, the model solution ``2 H_x``, the soliton
sum, the error term ``E`` (full and leading forms) and, up to
``pde.t_max``, the pseudo-spectral reference ``q_direct`` with its own
truncation-error estimate.  Jobs are independent and cached on disk under
a hash of exactly the configuration entries they depend on; the report is
assembled in ladder order so repeated runs are bitwise identical.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .dbar import GridParams, error_term
from .errors import ConfigError, KdvDbarError, NonPositive
from .kdv_direct import PdeParams, evolve_with_estimate, sample
from .model_rhp import model_at, soliton_sum
from .phase import PhaseContext, RTable, strip_delta
from .scattering import (ScatteringData, compute_scattering_data, family_values, load_potential,
                         named_potential)

__all__ = [
    "ExperimentConfig",
    "ErrorReport",
    "FitResult",
    "run_experiment",
    "fit_decay",
    "fit_rows",
    "load_config",
    "build_potential",
    "pde_initial",
    "scattering_for",
    "config_hash",
]

log = logging.getLogger("kdvdbar")

DEFAULT_POTENTIAL = {"family": "gaussian", "V0": 0.5, "sigma": 2.0, "L": 20.0, "h": 0.01}
DEFAULT_SCATTERING = {"w_max": 6.0, "dw": 0.01, "bound_tol": 1e-13}
DEFAULT_DBAR = {"tol": 1e-12, "method": "auto", "stencil": 5, "step": None, "grid": {}}
DEFAULT_PDE = {"enabled": True, "L": 1638.4, "modes": 16384, "dt": 0.01, "t_max": 10.0}
DEFAULT_ACCEPTANCE = {
    "slope_max": -1.9,
    "monotone": True,
    "lead_faster": True,
    "pde_factor": 3.0,
    "pde_decreasing": True,
    "j_ratio_max": 4.0 ** -0.4,
}


def _merge(base: dict, over: dict | None) -> dict:
    out = dict(base)
    out.update(over or {})
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description (see README for the JSON schema)."""

    potential: dict = field(default_factory=lambda: dict(DEFAULT_POTENTIAL))
    C0: float = 1.0
    rays: list | None = None
    t_ladder: list = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    N: int = 1
    scattering: dict = field(default_factory=lambda: dict(DEFAULT_SCATTERING))
    dbar: dict = field(default_factory=lambda: dict(DEFAULT_DBAR))
    pde: dict = field(default_factory=lambda: dict(DEFAULT_PDE))
    acceptance: dict = field(default_factory=lambda: dict(DEFAULT_ACCEPTANCE))
    seed: int = 0
    output: dict = field(default_factory=lambda: {"dir": "kdvdbar-out", "cache": True})

    def __post_init__(self):
        self.scattering = _merge(DEFAULT_SCATTERING, self.scattering)
        self.dbar = _merge(DEFAULT_DBAR, self.dbar)
        self.pde = _merge(DEFAULT_PDE, self.pde)
        self.acceptance = _merge(DEFAULT_ACCEPTANCE, self.acceptance)
        self.output = _merge({"dir": "kdvdbar-out", "cache": True}, self.output)
        self.validate()

    def validate(self):
        if not (isinstance(self.C0, (int, float)) and self.C0 > 0):
            raise ConfigError("C0 must be a positive number")
        if not isinstance(self.N, int) or self.N < 1:
            raise ConfigError("N must be an integer >= 1")
        lad = [float(t) for t in self.t_ladder]
        if len(lad) < 1 or lad[0] <= 0:
            raise ConfigError("t_ladder must hold positive times")
        for a, b in zip(lad, lad[1:]):
            if not b >= 2 * a:
                raise ConfigError("t_ladder must increase with ratio >= 2 at every step")
        self.t_ladder = lad
        if self.rays is not None:
            rays = [float(c) for c in self.rays]
            bad = [c for c in rays if c < self.C0]
            if bad or not rays:
                raise ConfigError(f"ray speeds must be >= C0 = {self.C0} (got {bad or rays})")
            self.rays = rays
        for block in (self.potential, self.scattering, self.dbar, self.pde):
            if "delta" in block:
                raise ConfigError("delta is always recomputed as min(kappa_1, sqrt(C0))/100")
        if self.dbar["stencil"] not in (3, 5):
            raise ConfigError("dbar.stencil must be 3 or 5")
        unknown = set(self.dbar["grid"]) - {f.name for f in dataclasses.fields(GridParams)}
        if unknown:
            raise ConfigError(f"unknown dbar.grid keys: {sorted(unknown)}")
        if "file" not in self.potential and "family" not in self.potential:
            raise ConfigError("potential needs 'family' or 'file'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if "delta" in extra:
            raise ConfigError("delta is always recomputed as min(kappa_1, sqrt(C0))/100")
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if "potential" in d:
            d["potential"] = dict(d["potential"])
        return cls(**d)

    @property
    def grid_params(self) -> GridParams:
        return GridParams(**self.dbar["grid"])


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_potential(spec: dict):
    spec = dict(spec)
    if "file" in spec:
        path = spec.pop("file")
        return load_potential(path, **{k: v for k, v in spec.items()
                                       if k in ("decay_moments", "tail_tol")})
    family = spec.pop("family")
    L = spec.pop("L", 20.0)
    h = spec.pop("h", 0.01)
    return named_potential(family, L=L, h=h, **spec)


def pde_initial(spec: dict):
    """Initial datum for the reference integrator.

    Built-in families are evaluated exactly on the PDE grid (interpolating
    the scattering samples would seed dispersive radiation); file data are
    interpolated linearly and set to zero outside their range.
    """
    if "file" in spec:
        return build_potential(spec)
    params = {k: v for k, v in spec.items() if k not in ("family", "L", "h")}
    return lambda x: family_values(spec["family"], x, **params)


# ------------------------------------------------------------------ fits


@dataclass
class FitResult:
    """OLS fit of ``log|E| = intercept + slope log t``."""

    slope: float
    intercept: float
    residual: float
    stderr: float
    n: int
    excluded: list = field(default_factory=list)

    @property
    def ci95(self) -> float:
        if self.n < 3 or not math.isfinite(self.stderr):
            return float("nan")
        return float(stats.t.ppf(0.975, self.n - 2) * self.stderr)


def fit_decay(t, E, strict: bool = False) -> FitResult:
    """Least squares on ``(log t, log |E|)``.

    Points with ``|E| <= 0`` (or non-finite) are excluded with a warning;
    ``NonPositive`` is raised when ``strict`` is set and such a point
    exists, or when fewer than three usable points remain.
    """
    t = np.asarray(t, dtype=float)
    E = np.abs(np.asarray(E, dtype=float))
    bad = ~(np.isfinite(E) & (E > 0)) | ~(t > 0)
    excluded = [float(v) for v in t[bad]]
    if np.any(bad):
        if strict:
            raise NonPositive(f"non-positive |E| at t = {excluded}")
        warnings.warn(f"excluding non-positive |E| at t = {excluded} from the fit",
                      stacklevel=2)
    lt, lE = np.log(t[~bad]), np.log(E[~bad])
    if lt.size < 3:
        raise NonPositive("fit needs at least 3 positive values")
    A = np.column_stack([np.ones_like(lt), lt])
    coef, *_ = np.linalg.lstsq(A, lE, rcond=None)
    res = lE - A @ coef
    dof = lt.size - 2
    rms = float(np.sqrt(np.mean(res ** 2)))
    sxx = float(np.sum((lt - lt.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(res ** 2) / dof / sxx)) if dof > 0 else float("nan")
    return FitResult(float(coef[1]), float(coef[0]), rms, stderr, int(lt.size), excluded)


def fit_rows(rows, column: str = "E_full", strict: bool = False) -> dict:
    """``fit_decay`` per ray speed over report rows (dicts with ``c, t, column``)."""
    out = {}
    for c in sorted({r["c"] for r in rows}):
        sel = sorted((r for r in rows if r["c"] == c), key=lambda r: r["t"])
        if len(sel) >= 3:
            out[c] = fit_decay([r["t"] for r in sel], [r[column] for r in sel], strict)
    return out


# ---------------------------------------------------------------- report

ROW_FIELDS = ["c", "t", "x", "q_model", "soliton_sum", "E_full", "E_lead", "E_diff",
              "q_direct", "pde_err_est", "discrepancy", "J10_norm", "iterations", "method",
              "residual"]


@dataclass
class ErrorReport:
    """Rows, fits, acceptance verdicts and environment metadata."""

    rows: list
    fits: dict
    acceptance: dict
    meta: dict
    errors: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.errors and all(v["pass"] for v in self.acceptance.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "fits": {str(c): dataclasses.asdict(f) | {"ci95": f.ci95} for c, f in self.fits.items()},
            "acceptance": self.acceptance,
            "errors": self.errors,
            "meta": self.meta,
        }

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "report.csv", "json": out / "report.json",
                 "summary": out / "summary.txt"}
        with open(paths["csv"], "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(ROW_FIELDS)
            for r in self.rows:
                wr.writerow([_fmt(r.get(k)) for k in ROW_FIELDS])
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True,
                                            default=_json_default))
        paths["summary"].write_text(self.summary())
        # wall-clock data live outside the report so reruns stay bitwise identical
        (out / "timings.json").write_text(json.dumps(self.timings, indent=1, sort_keys=True))
        return paths

    def summary(self) -> str:
        m = self.meta
        lines = [f"kdvdbar {m.get('version')}  config {m.get('config_hash')}",
                 f"kappas = {m.get('kappas')}  delta = {m.get('delta')}  C0 = {m.get('C0')}", ""]
        lines.append(f"{'c':>6} {'t':>6} {'E_full':>14} {'E_lead':>14} {'|E_diff|':>10} "
                     f"{'discrep':>10} {'pde_est':>10} {'J10':>9}")
        for r in self.rows:
            lines.append(f"{r['c']:6.3f} {r['t']:6.1f} {r['E_full']:14.6e} {r['E_lead']:14.6e} "
                         f"{abs(r['E_diff']):10.3e} {_fmt(r['discrepancy'], '.3e'):>10} "
                         f"{_fmt(r['pde_err_est'], '.3e'):>10} {r['J10_norm']:9.3e}")
        lines.append("")
        for c, f in self.fits.items():
            lines.append(f"fit c={c}: slope {f.slope:.4f} +- {f.ci95:.4f} (95%), "
                         f"rms residual {f.residual:.3e}, n={f.n}")
        lines.append("")
        for name, v in self.acceptance.items():
            lines.append(f"{'PASS' if v['pass'] else 'FAIL'}  {name}: {v['detail']}")
        for e in self.errors:
            lines.append(f"ERROR {e['stage']} t={e.get('t')} c={e.get('c')}: {e['message']}")
        lines.append("")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def _fmt(v, spec=".17g"):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, spec) if math.isfinite(v) else ("nan" if math.isnan(v) else str(v))
    return str(v)


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    raise TypeError(type(o))


# ------------------------------------------------------------- pipeline


class _Cache:
    def __init__(self, root: Path | None):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def get(self, key):
        if self.root is None:
            return None
        p = self.root / f"{key}.json"
        return json.loads(p.read_text()) if p.exists() else None

    def put(self, key, value):
        if self.root is not None:
            (self.root / f"{key}.json").write_text(json.dumps(value, sort_keys=True,
                                                              default=_json_default))


def scattering_for(cfg: ExperimentConfig, cache: _Cache | None = None) -> ScatteringData:
    key = "scatter-" + config_hash(cfg.potential, cfg.scattering, cfg.N)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return ScatteringData.from_dict(hit)
    p = build_potential(cfg.potential)
    s = cfg.scattering
    sd = compute_scattering_data(p, s["w_max"], s["dw"], N=cfg.N, tol=s["bound_tol"])
    if cache is not None:
        cache.put(key, sd.to_dict())
    return sd


def default_rays(cfg: ExperimentConfig, sd: ScatteringData) -> list:
    """``{C0, 4 kappa_1^2, 4 kappa_M^2}`` restricted to speeds ``>= C0``."""
    cands = [cfg.C0] + ([4 * sd.kappas[0] ** 2, 4 * sd.kappas[-1] ** 2] if sd.M else [])
    return sorted({float(c) for c in cands if c >= cfg.C0})


def _dbar_job(cfg, sd, table, c, t):
    x = c * t
    ctx = PhaseContext.from_scattering(sd, x, t, cfg.C0, N=cfg.N)
    ms = model_at(sd, x, t)
    d = cfg.dbar
    res = error_term(sd, table, ctx, params=cfg.grid_params, tol=d["tol"], method=d["method"],
                     step=d["step"], stencil=d["stencil"])
    return {
        "c": c, "t": t, "x": x,
        "q_model": 2 * ms.H_x,
        "soliton_sum": float(soliton_sum(sd, x, t)),
        "E_full": res.E_full, "E_lead": res.E_lead, "E_diff": res.E_diff,
        "J10_norm": res.J10_norm, "iterations": res.iterations, "method": res.method,
        "residual": res.residual, "step": res.step,
        "history": res.history,
        "grid": {k: v for k, v in res.grid_stats.items()},
    }


def _pde_job(cfg, probes, u_max):
    p = cfg.pde
    params = PdeParams(L=p["L"], modes=p["modes"], dt=p["dt"])
    times = sorted(probes)
    q0 = pde_initial(cfg.potential)
    fine, est = evolve_with_estimate(q0, times, params, probes=probes)
    out = {}
    for st, e in zip(fine, est):
        xs = np.atleast_1d(probes[st.t])
        out[repr(st.t)] = {"x": xs.tolist(), "q": sample(st, xs).tolist(), "err": list(e),
                           "tail": st.meta.get("tail"), "drift": st.meta.get("drift_per_time"),
                           # leftmost stationary point -12 u^2 t of the tabulated r range
                           "radiation_front": -12.0 * u_max ** 2 * st.t,
                           "monitor": -0.9 * p["L"]}
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                   use_cache: bool | None = None) -> ErrorReport:
    """Execute the pipeline; see the module docstring."""
    out = Path(out_dir or cfg.output["dir"])
    use_cache = cfg.output.get("cache", True) if use_cache is None else use_cache
    cache = _Cache(out / "cache" if use_cache else None)
    errors = []
    sd = scattering_for(cfg, cache)
    table = RTable.from_scattering(sd, N=cfg.N)
    rays = cfg.rays if cfg.rays is not None else default_rays(cfg, sd)
    jobs = [(c, t) for c in rays for t in cfg.t_ladder]
    base = (cfg.potential, cfg.scattering, cfg.N, cfg.C0, cfg.dbar)

    def run_dbar(ct):
        c, t = ct
        key = "dbar-" + config_hash(base, c, t)
        hit = cache.get(key)
        if hit is not None:
            return hit
        log.info("dbar job c=%g t=%g", c, t)
        t0 = time.perf_counter()
        try:
            val = _dbar_job(cfg, sd, table, c, t)
            val["elapsed"] = time.perf_counter() - t0
        except KdvDbarError as exc:
            return {"error": {"stage": "dbar", "c": c, "t": t,
                              "message": f"{type(exc).__name__}: {exc}"}}
        cache.put(key, val)
        return val

    pde_times = []
    probes = {}
    if cfg.pde.get("enabled", True):
        pde_times = [t for t in cfg.t_ladder if t <= cfg.pde["t_max"]]
        probes = {t: [c * t for c in rays] for t in pde_times}

    def run_pde():
        if not probes:
            return {}
        key = "pde-" + config_hash(cfg.potential, cfg.pde, {repr(k): v for k, v in probes.items()})
        hit = cache.get(key)
        if hit is not None:
            return hit
        log.info("pde reference for t = %s", pde_times)
        t0 = time.perf_counter()
        try:
            val = _pde_job(cfg, probes, max(abs(table.u_min), abs(table.u_max)))
            val["elapsed"] = time.perf_counter() - t0
        except KdvDbarError as exc:
            return {"error": {"stage": "pde", "message": f"{type(exc).__name__}: {exc}"}}
        cache.put(key, val)
        return val

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        fut_pde = pool.submit(run_pde)
        results = list(pool.map(run_dbar, jobs))
        pde = fut_pde.result()
    pde = dict(pde)
    if "error" in pde:
        errors.append(pde.pop("error"))
    timings = {"pde": pde.pop("elapsed", None),
               "dbar": {f"{c}:{t}": r.get("elapsed") for (c, t), r in zip(jobs, results)}}
    rows = []
    for (c, t), r in zip(jobs, results):
        if "error" in r:
            errors.append(r["error"])
            continue
        row = {k: r[k] for k in ("c", "t", "x", "q_model", "soliton_sum", "E_full", "E_lead",
                                 "E_diff", "J10_norm", "iterations", "method", "residual")}
        row["q_direct"] = row["pde_err_est"] = row["discrepancy"] = float("nan")
        snap = pde.get(repr(t))
        if snap is not None:
            i = rays.index(c)
            row["q_direct"] = float(snap["q"][i])
            row["pde_err_est"] = float(snap["err"][i])
            row["discrepancy"] = abs(row["q_model"] + row["E_full"] - row["q_direct"])
        rows.append(row)
    fits = fit_rows(rows) if rows else {}
    kappa1 = float(sd.kappas[0]) if sd.M else math.inf
    meta = {
        "version": __version__,
        "config_hash": config_hash(cfg.to_dict()),
        "C0": cfg.C0,
        "N": cfg.N,
        "kappas": sd.kappas.tolist(),
        "gammas_sq": sd.gammas_sq.tolist(),
        "delta": strip_delta(kappa1, cfg.C0),
        "rays": rays,
        "t_ladder": cfg.t_ladder,
        "seed": cfg.seed,
        "pde": {k: v for k, v in pde.items()},
        "grid": {f"{c}:{t}": r.get("grid") for (c, t), r in zip(jobs, results) if "grid" in r},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__, "machine": platform.machine()},
    }
    acc = evaluate_acceptance(cfg, rows, fits) if rows else {}
    report = ErrorReport(rows, fits, acc, meta, errors, timings)
    report.write(out)
    return report


def _enabled(a: dict, key: str) -> bool:
    return a.get(key) is not None and a.get(key) is not False


def _pairs_4t(ts):
    return [(a, b) for a in ts for b in ts if abs(b - 4 * a) < 1e-9 * b]


def evaluate_acceptance(cfg: ExperimentConfig, rows, fits) -> dict:
    """Verdicts for every enabled entry of ``cfg.acceptance`` on each ray."""
    acc = {}
    a = cfg.acceptance
    for c in sorted({r["c"] for r in rows}):
        sel = sorted((r for r in rows if r["c"] == c), key=lambda r: r["t"])
        ts = [r["t"] for r in sel]
        E = [abs(r["E_full"]) for r in sel]
        tag = f"c={c:g}"
        if _enabled(a, "slope_max") and c in fits:
            f = fits[c]
            acc[f"slope {tag}"] = {"pass": bool(f.slope <= a["slope_max"]),
                                   "detail": f"slope {f.slope:.4f} <= {a['slope_max']}"}
        if a.get("monotone") and len(sel) >= 2:
            ok = all(e2 < e1 for e1, e2 in zip(E, E[1:]))
            acc[f"monotone {tag}"] = {"pass": bool(ok), "detail": "|E_full| = " +
                                      ", ".join(f"{e:.3e}" for e in E)}
        if a.get("lead_faster") and len(sel) >= 2:
            rat = [abs(r["E_diff"]) / abs(r["E_full"]) if r["E_full"] else math.inf for r in sel]
            ok = all(r2 < r1 for r1, r2 in zip(rat, rat[1:]))
            acc[f"lead_faster {tag}"] = {"pass": bool(ok), "detail": "|E_lead-E_full|/|E_full| = "
                                         + ", ".join(f"{v:.3e}" for v in rat)}
        if _enabled(a, "pde_factor"):
            pr = [r for r in sel if math.isfinite(r["discrepancy"])]
            if pr:
                ok = all(r["discrepancy"] <= a["pde_factor"] * r["pde_err_est"] for r in pr)
                if a.get("pde_decreasing"):
                    ok = ok and all(r2["discrepancy"] < r1["discrepancy"]
                                    for r1, r2 in zip(pr, pr[1:]))
                acc[f"pde {tag}"] = {"pass": bool(ok), "detail": "; ".join(
                    f"t={r['t']:g}: {r['discrepancy']:.3e} vs {a['pde_factor']}x{r['pde_err_est']:.3e}"
                    for r in pr)}
        if _enabled(a, "j_ratio_max"):
            by_t = {r["t"]: r["J10_norm"] for r in sel}
            for t1, t4 in _pairs_4t(ts):
                ratio = by_t[t4] / by_t[t1] if by_t[t1] else 0.0
                acc[f"J ratio {tag} t={t1:g}/{t4:g}"] = {
                    "pass": bool(ratio <= a["j_ratio_max"]),
                    "detail": f"{by_t[t4]:.4e}/{by_t[t1]:.4e} = {ratio:.4f} <= {a['j_ratio_max']:.4f}"}
    return acc
