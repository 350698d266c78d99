"""Acceptance criteria 1-8, one test each.

The pipeline-level criteria (5, 6, 7) share one run of the default
experiment: the Gaussian-well datum, ``N = 1``, ``C0 = 1``, the ladder
``t = 5, 10, 20, 40`` on the ray ``x = C0 t``, and the pseudo-spectral
reference up to ``t = 10``.  That run takes a few minutes.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from kdvdbar.dbar import DbarGrid, assemble_B, error_term, neumann_solve
from kdvdbar.harness import ExperimentConfig, fit_rows, run_experiment
from kdvdbar.kdv_direct import PdeParams, evolve, grid_x
from kdvdbar.model_rhp import build_system, model_at, model_matrix, solve_model
from kdvdbar.phase import PhaseContext, RTable, eval_dbar_R, eval_R
from kdvdbar.scattering import ScatteringData, compute_scattering_data, named_potential


def verdict(tag, ok, detail):
    print(f"{tag} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag}: {detail}"


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    cfg = ExperimentConfig(output={"dir": str(out), "cache": False})
    rep = run_experiment(cfg)
    assert not rep.errors, rep.errors
    return cfg, rep


def ray_rows(cfg, rep):
    rows = sorted((r for r in rep.rows if r["c"] == cfg.C0), key=lambda r: r["t"])
    assert [r["t"] for r in rows] == [5.0, 10.0, 20.0, 40.0]
    return rows


def test_c1_one_soliton_round_trip():
    t0 = time.perf_counter()
    p = named_potential("sech2", L=20.0, h=0.01, amplitude=2.0)
    sd = compute_scattering_data(p, 6.0, 0.01, tol=1e-13)
    t = 5.0
    x = np.linspace(4 * t - 10, 4 * t + 10, 2001)
    q = np.array([2 * model_at(sd, xx, t).H_x for xx in x])
    err = float(np.max(np.abs(q + 2 / np.cosh(x - 4 * t) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = (sd.M == 1 and abs(sd.kappas[0] - 1) <= 1e-4 and abs(sd.gammas_sq[0] - 2) <= 1e-3
          and err <= 1e-6 and elapsed <= 10)
    verdict("C1", ok, f"kappa-1 = {sd.kappas[0] - 1:.2e}, gamma^2-2 = {sd.gammas_sq[0] - 2:.2e}, "
            f"sup|2H_x - exact| = {err:.2e}, runtime {elapsed:.2f} s")


def test_c2_direct_solver_oracle():
    p = PdeParams(L=40.0, modes=2 ** 12, dt=1e-3)
    sol = lambda x, t=0.0: -2 / np.cosh(np.clip(x - 4 * t, -300, 300)) ** 2
    st = evolve(sol, 1.0, params=p)[-1]
    err = float(np.max(np.abs(st.q - sol(st.x, 1.0))))
    q0 = sol(grid_x(p.L, p.modes))
    dx = 2 * p.L / p.modes
    m0, e0 = np.sum(q0) * dx, np.sum(q0 ** 2) * dx
    dm = abs(st.mass() - m0) / abs(m0) / st.t
    de = abs(st.energy() - e0) / abs(e0) / st.t
    verdict("C2", err <= 1e-6 and dm <= 1e-6 and de <= 1e-6,
            f"sup error {err:.2e}, mass drift {dm:.2e}/t, energy drift {de:.2e}/t")


def test_c3_model_identities(sd_two_soliton, rng):
    ms = model_at(sd_two_soliton, 0.4, 0.1)
    w = rng.uniform(-4, 4, 20) + 1j * rng.uniform(-4, 4, 20)
    M = model_matrix(ms, w)
    det_err = float(np.max(np.abs(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0] - 2j * w)))
    fd_err = 0.0
    for x, t in [(0.3, 0.0), (1.7, 0.2), (-1.2, 0.05), (6.0, 0.5)]:
        h = 1e-5
        fd = (model_at(sd_two_soliton, x + h, t).H - model_at(sd_two_soliton, x - h, t).H) / (2 * h)
        Hx = model_at(sd_two_soliton, x, t).H_x
        fd_err = max(fd_err, abs(fd - Hx) / abs(Hx))
    logC, finite = [], True
    for x in np.linspace(-400, 400, 321):
        cs = build_system(sd_two_soliton, x, 0.0)
        sol = solve_model(cs)
        finite &= bool(np.all(np.isfinite(sol.A)) and np.isfinite(sol.H_x))
        logC.extend(np.asarray(cs.log_C) / math.log(10))
    span = min(logC), max(logC)
    ok = det_err <= 1e-10 and fd_err <= 1e-7 and finite and span[0] <= -300 and span[1] >= 300
    verdict("C3", ok, f"max|det M - 2iw| = {det_err:.1e}, H_x rel FD err = {fd_err:.1e}, "
            f"log10 C_j over [{span[0]:.0f}, {span[1]:.0f}] all finite = {finite}")


def test_c4_dbar_sanity(sd_default, table_default, rng):
    sd0 = sd_default.reflectionless()
    tab0 = RTable.from_scattering(sd0)
    ctx0 = PhaseContext.from_scattering(sd0, 10.0, 10.0, 1.0)
    ms0 = model_at(sd0, 10.0, 10.0)
    grid = DbarGrid.from_edges(ctx0.delta, 0.01, 1.0, [0, ctx0.delta, 2 * ctx0.delta])
    ev = neumann_solve(assemble_B(ctx0, ms0, tab0, grid), grid)
    res = error_term(sd0, tab0, ctx0, grid=grid)
    trivial = bool(np.all(ev.e1 == 1) and np.all(ev.e2 == 0) and res.E_full == 0.0)

    ctx = PhaseContext.from_scattering(sd_default, 10.0, 10.0, 1.0)
    d = ctx.delta
    wpts = rng.uniform(-2.5, 2.5, 100) + 1j * rng.uniform(0.05 * d, 1.95 * d, 100)

    def fd(h):
        Ru = (eval_R(ctx, table_default, wpts + h) - eval_R(ctx, table_default, wpts - h)) / (2 * h)
        Rv = (eval_R(ctx, table_default, wpts + 1j * h)
              - eval_R(ctx, table_default, wpts - 1j * h)) / (2 * h)
        return 0.5 * (Ru + 1j * Rv)

    exact = eval_dbar_R(ctx, table_default, wpts)
    e1 = float(np.max(np.abs(fd(d * 1e-2) - exact)))
    e2 = float(np.max(np.abs(fd(d * 5e-3) - exact)))
    order = math.log2(e1 / e2)
    w3 = rng.uniform(-3, 3, 100) + 1j * rng.uniform(2 * d, 10 * d, 100)
    zero3 = bool(np.all(eval_dbar_R(ctx, table_default, w3) == 0))
    ok = trivial and 1.8 <= order <= 2.2 and e1 < 2e-3 * np.max(np.abs(exact)) and zero3
    verdict("C4", ok, f"r=0 trivial = {trivial}, FD order {order:.3f} (err {e1:.1e} -> {e2:.1e}), "
            f"dbar R == 0 on Omega3 = {zero3}")


def test_c5_operator_norm_decay(default_run):
    cfg, rep = default_run
    rows = {r["t"]: r for r in ray_rows(cfg, rep)}
    bound = 4.0 ** -0.4
    ratios = {(t, 4 * t): rows[4 * t]["J10_norm"] / rows[t]["J10_norm"] for t in (5.0, 10.0)}
    slow = max(rep.timings["dbar"][f"{cfg.C0}:{t}"] for t in rows)
    ok = all(v <= bound for v in ratios.values()) and slow <= 120
    verdict("C5", ok, ", ".join(f"|J(1,0)|(t={b:g})/|J(1,0)|(t={a:g}) = {v:.4f}"
                                for (a, b), v in ratios.items())
            + f" (bound {bound:.4f}); slowest t {slow:.0f} s")


def test_c6_error_term_decay(default_run):
    cfg, rep = default_run
    rows = ray_rows(cfg, rep)
    E = [abs(r["E_full"]) for r in rows]
    f = fit_rows(rows)[cfg.C0]
    mono = all(b < a for a, b in zip(E, E[1:]))
    rel = [abs(r["E_diff"]) / abs(r["E_full"]) for r in rows]
    faster = all(b < a for a, b in zip(rel, rel[1:]))
    total = sum(rep.timings["dbar"][f"{cfg.C0}:{r['t']}"] for r in rows)
    ok = f.slope <= -1.9 and mono and faster and total <= 900
    verdict("C6", ok, f"slope {f.slope:.3f} +- {f.ci95:.3f}, |E_full| = "
            + ", ".join(f"{e:.3e}" for e in E)
            + "; |E_lead-E_full|/|E_full| = " + ", ".join(f"{v:.1e}" for v in rel)
            + f"; runtime {total:.0f} s")


def test_c7_cross_validation(default_run):
    cfg, rep = default_run
    rows = [r for r in ray_rows(cfg, rep) if r["t"] in (5.0, 10.0)]
    within = all(r["discrepancy"] <= 3 * r["pde_err_est"] for r in rows)
    decreasing = rows[1]["discrepancy"] < rows[0]["discrepancy"]
    verdict("C7", within and decreasing, "; ".join(
        f"t={r['t']:g}: |q_model+E-q_direct| = {r['discrepancy']:.3e}, "
        f"3 x estimate = {3 * r['pde_err_est']:.3e}" for r in rows)
        + f"; decreasing = {decreasing}")


def test_c8_determinism(tmp_path):
    cfg = {"t_ladder": [2.0, 4.0], "pde": {"t_max": 4.0}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = subprocess.run([sys.executable, "-m", "kdvdbar", "experiment", "--config",
                            str(cfg_path), "--out", str(out), "--no-cache"],
                           capture_output=True, text=True)
        assert r.returncode in (0, 1), r.stderr
        blobs.append(((out / "report.csv").read_bytes(), (out / "report.json").read_bytes(),
                      (out / "summary.txt").read_bytes()))
    same = blobs[0] == blobs[1]
    verdict("C8", same and len(blobs[0][0]) > 0,
            f"report.csv/json/summary bitwise identical across two runs = {same}")
