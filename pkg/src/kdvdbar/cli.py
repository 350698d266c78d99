"""Command-line entry point: ``kdvdbar <subcommand> --config cfg.json``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import KdvDbarError

SUBCOMMANDS = ("scatter", "model", "dbar", "direct", "experiment", "fit")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON experiment config (defaults if omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1, help="concurrent jobs")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="kdvdbar", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("scatter", parents=[common], help="bound states, norming constants, r(w)")
    m = sub.add_parser("model", parents=[common], help="model solution 2H_x and soliton sum")
    m.add_argument("--span", type=float, default=10.0, help="x-window half width around each ray")
    m.add_argument("--points", type=int, default=201)
    sub.add_parser("dbar", parents=[common], help="error term E along the rays")
    d = sub.add_parser("direct", parents=[common], help="pseudo-spectral reference run")
    d.add_argument("--snapshots", action="store_true", help="also dump full field snapshots")
    e = sub.add_parser("experiment", parents=[common], help="full pipeline and report")
    e.add_argument("--no-cache", action="store_true", help="ignore and do not write the cache")
    f = sub.add_parser("fit", parents=[common], help="log-log decay fit of a CSV column")
    f.add_argument("--input", type=Path, help="CSV with t, E columns (default <out>/report.csv)")
    f.add_argument("--column", default="E_full")
    return ap


def _config(args):
    from .harness import ExperimentConfig, load_config
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    out = Path(args.out) if args.out else Path(cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _rays(cfg, sd):
    from .harness import default_rays
    return cfg.rays if cfg.rays is not None else default_rays(cfg, sd)


def cmd_scatter(args) -> int:
    from .harness import scattering_for
    cfg, out = _config(args)
    sd = scattering_for(cfg)
    sd.save(out / "scattering.json")
    print(f"kappas    = {sd.kappas.tolist()}")
    print(f"gammas_sq = {sd.gammas_sq.tolist()}")
    print(f"max|r|    = {float(np.max(np.abs(sd.r_values))):.6e}")
    print(f"wrote {out / 'scattering.json'}")
    return 0


def cmd_model(args) -> int:
    import csv
    from .harness import scattering_for
    from .model_rhp import model_at, soliton_sum
    cfg, out = _config(args)
    sd = scattering_for(cfg)
    path = out / "model.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["c", "t", "x", "H", "H_x", "q_model", "soliton_sum"])
        for c in _rays(cfg, sd):
            for t in cfg.t_ladder:
                for x in np.linspace(c * t - args.span, c * t + args.span, args.points):
                    ms = model_at(sd, x, t)
                    wr.writerow([f"{v:.17g}" for v in (c, t, x, ms.H, ms.H_x, 2 * ms.H_x,
                                                       float(soliton_sum(sd, x, t)))])
    print(f"wrote {path}")
    return 0


def cmd_dbar(args) -> int:
    from .dbar import error_term, write_diagnostics, write_sweep_csv
    from .harness import scattering_for
    from .phase import PhaseContext, RTable
    cfg, out = _config(args)
    sd = scattering_for(cfg)
    table = RTable.from_scattering(sd, N=cfg.N)
    d = cfg.dbar
    results = []
    for c in _rays(cfg, sd):
        for t in cfg.t_ladder:
            ctx = PhaseContext.from_scattering(sd, c * t, t, cfg.C0, N=cfg.N)
            r = error_term(sd, table, ctx, params=cfg.grid_params, tol=d["tol"],
                           method=d["method"], step=d["step"], stencil=d["stencil"])
            logging.getLogger("kdvdbar").info("t=%g x=%g E=%.6e", t, c * t, r.E_full)
            print(f"t={t:g} x={c * t:g} E_full={r.E_full:.12e} E_lead={r.E_lead:.12e}")
            results.append(r)
    write_sweep_csv(out / "e_sweep.csv", results)
    write_diagnostics(out / "dbar_diagnostics.txt", results)
    print(f"wrote {out / 'e_sweep.csv'} and {out / 'dbar_diagnostics.txt'}")
    return 0


def cmd_direct(args) -> int:
    import csv
    from .harness import pde_initial, scattering_for
    from .kdv_direct import PdeParams, evolve_with_estimate, sample, write_snapshots_csv
    cfg, out = _config(args)
    sd = scattering_for(cfg)
    p = cfg.pde
    times = [t for t in cfg.t_ladder if t <= p["t_max"]] or [min(cfg.t_ladder)]
    rays = _rays(cfg, sd)
    probes = {t: [c * t for c in rays] for t in times}
    params = PdeParams(L=p["L"], modes=p["modes"], dt=p["dt"])
    states, est = evolve_with_estimate(pde_initial(cfg.potential), times, params, probes)
    with open(out / "direct.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "q_direct", "err_est"])
        for st, e in zip(states, est):
            xs = np.asarray(probes[st.t])
            for xv, qv, ev in zip(xs, sample(st, xs), e):
                wr.writerow([f"{st.t:.17g}", f"{xv:.17g}", f"{qv:.17g}", f"{ev:.17g}"])
                print(f"t={st.t:g} x={xv:g} q={qv:.15e} est={ev:.3e}")
    if args.snapshots:
        write_snapshots_csv(out / "snapshots.csv", states)
    print(f"wrote {out / 'direct.csv'}")
    return 0


def cmd_experiment(args) -> int:
    from .harness import run_experiment
    cfg, out = _config(args)
    rep = run_experiment(cfg, out_dir=out, threads=args.threads,
                         use_cache=False if args.no_cache else None)
    print(rep.summary(), end="")
    return rep.exit_code


def cmd_fit(args) -> int:
    import csv
    from .harness import fit_decay
    out = Path(args.out) if args.out else None
    path = args.input
    if path is None:
        cfg, out = _config(args)
        path = out / "report.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    groups = {}
    for r in rows:
        groups.setdefault(r.get("c", "all"), []).append(r)
    result = {}
    for c, rs in sorted(groups.items()):
        f = fit_decay([float(r["t"]) for r in rs], [float(r[args.column]) for r in rs])
        result[c] = {"slope": f.slope, "intercept": f.intercept, "residual": f.residual,
                     "ci95": f.ci95, "n": f.n}
        print(f"c={c}: slope {f.slope:.6f} +- {f.ci95:.6f}  intercept {f.intercept:.6f}  "
              f"rms {f.residual:.3e}  n={f.n}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit.json").write_text(json.dumps(result, indent=1, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handler = globals()[f"cmd_{args.command}"]
    try:
        return int(handler(args))
    except KdvDbarError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
