import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import pandas as pd

from case_profiles import build_case, build_mesh
from constants import (
    DIAGNOSTICS_CSV_NAME, EOC_CSV_NAME, EOC_DAT_NAME, FIELD_DAT_NAME, FIELD_VTK_NAME, MATRIX_MTX_NAME,
    REPORT_CSV_NAME, SOLUTION_CSV_NAME, THREADS_ENV,
)
from fem.analysis import (
    ManufacturedCase, breakpoint_diagnostics_1d, check_source_consistency, eoc_table, error_gradu_lp,
    error_w_lq, laplacian_mode_report, limit_diagnostics, recovered_laplacian,
)
from fem.assembly import ProblemSpec, assemble_saddle_system, prepare_saddle
from fem.errors import ContinuationError, DiagnosticError, PBilapError
from fem.mesh import Mesh, metrics, refine_uniform
from fem.solver import NewtonConfig, SolveReport, continuation_solve, solve_p_bilaplacian, transfer_warm_start
from fem.space import FeFunction
from utils.progress import log
from utils.run_config import RunConfig
from utils.utils_io import save_csv_append, save_dataframe, write_gnuplot, write_matrix_market, write_vtk

Progress = Optional[Callable[[str], None]]

# ---------------------------
# Utilities
# ---------------------------

def thread_cap(progress: Progress = None) -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log(f"[WARN] Ignoring {THREADS_ENV}={raw!r}; running levels one at a time.", progress)
        return 1


def _out_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _mesh_ladder(cfg: RunConfig, progress: Progress) -> List[Mesh]:
    """Regenerated meshes at doubled n, or red refinements of the coarsest one."""
    if cfg.refinement == "regenerate":
        meshes = [build_mesh(cfg.case, cfg.n * 2 ** j) for j in range(cfg.levels)]
    else:
        meshes = [build_mesh(cfg.case, cfg.n)]
        for _ in range(cfg.levels - 1):
            meshes.append(refine_uniform(meshes[-1]))
    for j, mesh in enumerate(meshes):
        log(f"🧱 Mesh level {j}: {mesh.num_cells} cells, h_max={metrics(mesh).h_max:.4g}", progress)
    return meshes


def _warm_started_solve(mesh: Mesh, k: int, spec: ProblemSpec, warm_spec: ProblemSpec,
                        ncfg: NewtonConfig, progress: Progress) -> Tuple[FeFunction, FeFunction, SolveReport]:
    """Solve at p, starting from the transferred p = 2 solution when p > 2."""
    initial = None
    if spec.p > 2.0:
        u2, w2, rep2 = solve_p_bilaplacian(mesh, k, warm_spec, ncfg, progress=progress)
        if rep2.converged:
            initial = transfer_warm_start(u2, w2, 2.0, spec.p)
        else:
            log("[WARN] p=2 warm-up did not converge; starting from zero", progress)
    return solve_p_bilaplacian(mesh, k, spec, ncfg, initial=initial, progress=progress)


def _write_fields(cfg: RunConfig, p: float, u: FeFunction, w: FeFunction, progress: Progress) -> Dict[str, str]:
    """VTK, gnuplot and CSV dumps of u_h, w_h and the recovered Laplacian s_h."""
    q = p / (p - 1.0)
    space = u.space
    s = recovered_laplacian(w, q).at_dofs()
    nv = space.mesh.num_vertices

    vtk_path = write_vtk(_out_path(cfg, FIELD_VTK_NAME.format(p=p)), space.mesh.vertices, space.mesh.cells,
                         point_data={"u": u.vertex_values, "w": w.vertex_values, "s": s[:nv]},
                         title=f"{cfg.case} p={p:g} k={space.degree}")

    coords = space.dof_coords
    cols = {name: coords[:, i] for i, name in enumerate("xy"[: space.dim])}
    cols.update({"u": u.coeffs, "w": w.coeffs, "s": s})
    df = pd.DataFrame(cols)
    df = df.sort_values(list("xy"[: space.dim])[::-1], kind="stable").reset_index(drop=True)
    dat_path = write_gnuplot(_out_path(cfg, FIELD_DAT_NAME.format(p=p)), df,
                             comment=f"{cfg.case} p={p:g} k={space.degree}")
    csv_path = save_dataframe(_out_path(cfg, SOLUTION_CSV_NAME.format(p=p)), df)
    log(f"💾 Wrote {vtk_path}, {dat_path}, {csv_path}", progress)
    return {"vtk": vtk_path, "dat": dat_path, "csv": csv_path}


def _report_row(cfg: RunConfig, rep: SolveReport) -> Dict:
    row = {"command": cfg.command, "case": cfg.case}
    row.update(rep.as_row())
    return row


def _dump_matrix(cfg: RunConfig, u: FeFunction, w: FeFunction, spec: ProblemSpec, ncfg: NewtonConfig,
                 progress: Progress) -> None:
    stage = spec.with_epsilon(ncfg.epsilon_schedule[-1])
    matrix, _ = assemble_saddle_system(u, w, stage, u.space, prepare_saddle(u.space, stage))
    path = write_matrix_market(_out_path(cfg, MATRIX_MTX_NAME.format(p=spec.p)), matrix,
                               comment=f"saddle matrix {cfg.case} p={spec.p:g}")
    log(f"💾 Saved MatrixMarket dump {path}", progress)


def _manufactured_errors(case: ManufacturedCase, u: FeFunction, w: FeFunction, p: float) -> Dict:
    q = p / (p - 1.0)
    return {
        "err_w_Lq": error_w_lq(w, case.exact_w, q),
        "err_gradu_Lp": error_gradu_lp(u, case.exact_grad_u, p),
        "err_w_Lq_interior": error_w_lq(w, case.exact_w, q, region=case.interior_box()),
    }


# ---------------------------
# Workflows
# ---------------------------

def run_solve(*, config: RunConfig, progress: Progress = None) -> Tuple[pd.DataFrame, Dict]:
    start_ts = time.time()
    cfg = config
    ncfg = cfg.newton_config()
    spec, case = build_case(cfg.case, cfg.p, cfg.m)
    warm_spec, _ = build_case(cfg.case, 2.0, cfg.m)
    mesh = build_mesh(cfg.case, cfg.n)
    log(f"🧱 Mesh: {mesh.num_cells} cells, h_max={metrics(mesh).h_max:.4g} ({cfg.case}, n={cfg.n})", progress)

    try:
        u, w, rep = _warm_started_solve(mesh, cfg.k, spec, warm_spec, ncfg, progress)
    except PBilapError as e:
        log(f"[ERROR] Solve failed: {e}", progress)
        return pd.DataFrame(), {"converged": False, "exit_code": 1, "message": str(e),
                                "elapsed_secs": round(time.time() - start_ts, 2)}

    files = _write_fields(cfg, cfg.p, u, w, progress)
    report_df = pd.DataFrame([_report_row(cfg, rep)])
    save_csv_append(_out_path(cfg, REPORT_CSV_NAME), report_df.to_dict("records"))

    diag = {"case": cfg.case, "k": cfg.k, "h_max": rep.h_max, "newton_iterations": " ".join(map(str, rep.newton_iterations))}
    diag.update(limit_diagnostics(u, w, spec))
    if case is not None:
        diag.update(_manufactured_errors(case, u, w, cfg.p))
    save_dataframe(_out_path(cfg, DIAGNOSTICS_CSV_NAME), pd.DataFrame([diag]))
    log(f"📊 Diagnostics: stability margin {diag['stability_margin']:.3e}, ||s_h||_Lp {diag['s_lp']:.4g}", progress)

    if cfg.dump_matrix:
        _dump_matrix(cfg, u, w, spec, ncfg, progress)

    return report_df, {
        "converged": rep.converged,
        "newton_iterations": rep.newton_iterations,
        "residual": rep.residual,
        "wall_s": rep.wall_s,
        "files": files,
        "exit_code": 0 if rep.converged else 1,
        "elapsed_secs": round(time.time() - start_ts, 2),
    }


def run_benchmark(*, config: RunConfig, progress: Progress = None) -> Tuple[pd.DataFrame, Dict]:
    start_ts = time.time()
    cfg = config
    ncfg = cfg.newton_config()
    spec, case = build_case(cfg.case, cfg.p, cfg.m)
    warm_spec, _ = build_case(cfg.case, 2.0, cfg.m)

    if cfg.p == 2.0 or cfg.p >= 4.0:
        try:
            err = check_source_consistency(case)
            log(f"🔬 Source check passed: relative error {err:.2e}", progress)
        except DiagnosticError as e:
            log(f"[ALERT] Source check failed, aborting benchmark: {e}", progress)
            return pd.DataFrame(), {"levels": 0, "exit_code": 1, "message": str(e),
                                    "elapsed_secs": round(time.time() - start_ts, 2)}
    else:
        log(f"[WARN] Source check skipped: |s|^(p-2)s is not smooth enough at p={cfg.p:g}", progress)

    meshes = _mesh_ladder(cfg, progress)

    def run_level(j: int, mesh: Mesh) -> Dict:
        try:
            u, w, rep = _warm_started_solve(mesh, cfg.k, spec, warm_spec, ncfg, progress)
        except PBilapError as e:
            log(f"[ERROR] Level {j} failed: {e}", progress)
            return {"level": j, "converged": False}
        row = {"level": j, "converged": rep.converged, "report": rep}
        row.update(_manufactured_errors(case, u, w, cfg.p))
        log(f"✓ Level {j}: dofs={rep.dofs} err_w={row['err_w_Lq']:.4e} err_gradu={row['err_gradu_Lp']:.4e}", progress)
        return row

    workers = min(thread_cap(progress), len(meshes))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_level, range(len(meshes)), meshes))

    done = []
    for row in results:
        if not row["converged"]:
            break
        done.append(row)
    failed = len(done) < len(results)
    if failed:
        log(f"[ALERT] Level {len(done)} did not converge; keeping the {len(done)} finished levels", progress)

    reports = [r["report"] for r in done]
    table = eoc_table(cfg.p, cfg.k, [r.h_max for r in reports], [r.dofs for r in reports],
                      [r["err_w_Lq"] for r in done], [r["err_gradu_Lp"] for r in done],
                      [r["err_w_Lq_interior"] for r in done])
    eoc_csv = save_dataframe(_out_path(cfg, EOC_CSV_NAME.format(case=cfg.case, p=cfg.p, k=cfg.k)), table)
    eoc_dat = write_gnuplot(_out_path(cfg, EOC_DAT_NAME.format(case=cfg.case, p=cfg.p, k=cfg.k)),
                            table[["h_max", "err_w_Lq", "err_gradu_Lp"]],
                            comment=f"log-log error vs h, {cfg.case} p={cfg.p:g} k={cfg.k}")
    if reports:
        save_csv_append(_out_path(cfg, REPORT_CSV_NAME), [_report_row(cfg, r) for r in reports])
    log(f"💾 Wrote {eoc_csv} and {eoc_dat}", progress)

    last = table.iloc[-1] if len(table) else None
    if last is not None and len(table) >= 2:
        log(f"📈 EOC w: {last['eoc_w']:.3f} (predicted {last['rate_w_predicted']:.3f}, "
            f"interior {last['eoc_w_interior']:.3f}), "
            f"EOC ∇u: {last['eoc_u']:.3f} (predicted {last['rate_u_predicted']:.3f})", progress)
        if last["eoc_w"] < last["rate_w_predicted"]:
            # C0 mixed schemes lose w accuracy in a layer along the boundary
            log(f"[WARN] EOC w {last['eoc_w']:.3f} below the predicted {last['rate_w_predicted']:.3f}; "
                f"interior EOC w is {last['eoc_w_interior']:.3f}", progress)

    return table, {
        "levels": len(done),
        "eoc_w": float(last["eoc_w"]) if last is not None else float("nan"),
        "eoc_u": float(last["eoc_u"]) if last is not None else float("nan"),
        "eoc_w_interior": float(last["eoc_w_interior"]) if last is not None else float("nan"),
        "eoc_csv": eoc_csv,
        "exit_code": 1 if failed else 0,
        "elapsed_secs": round(time.time() - start_ts, 2),
    }


def run_psweep(*, config: RunConfig, progress: Progress = None) -> Tuple[pd.DataFrame, Dict]:
    start_ts = time.time()
    cfg = config
    spec, _ = build_case(cfg.case, 2.0, cfg.m)
    mesh = build_mesh(cfg.case, cfg.n)
    h_max = metrics(mesh).h_max
    log(f"🧱 Mesh: {mesh.num_cells} cells, h_max={h_max:.4g} ({cfg.case}, n={cfg.n})", progress)

    error = None
    try:
        steps = continuation_solve(mesh, cfg.k, spec, cfg.continuation_config(), cfg.newton_config(), progress)
    except ContinuationError as e:
        log(f"[ERROR] {e}; keeping {len(e.partial)} finished steps", progress)
        steps, error = e.partial, str(e)

    rows, dumps = [], []
    for step in steps:
        if not step.scheduled:
            continue
        dumps.append(_write_fields(cfg, step.p, step.u, step.w, progress))
        diag = {"case": cfg.case, "k": cfg.k, "h_max": h_max,
                "newton_iters_total": step.report.newton_iters_total}
        diag.update(step.diagnostics)
        if mesh.dim == 1:
            samples = recovered_laplacian(step.w, step.report.q).sample_1d(cfg.samples_per_cell)
            try:
                bp = breakpoint_diagnostics_1d(samples, cell_width=h_max, guard_cells=cfg.guard_cells)
                diag.update(bp.as_row())
            except DiagnosticError as e:
                log(f"[WARN] Breakpoint diagnostics skipped at p={step.p:g}: {e}", progress)
        else:
            diag.update(laplacian_mode_report(step.w, step.report.q, cfg.hist_bins, cfg.mode_tolerance))
        rows.append(diag)
        log(f"📊 p={step.p:g}: diagnostics margin={diag['stability_margin']:.3e} "
            f"||s_h||_inf≈{diag['s_linf_proxy']:.4g}", progress)

    diag_df = pd.DataFrame(rows)
    if rows:
        save_dataframe(_out_path(cfg, DIAGNOSTICS_CSV_NAME), diag_df)
        save_csv_append(_out_path(cfg, REPORT_CSV_NAME),
                        [_report_row(cfg, s.report) for s in steps if s.scheduled])

    summary = {
        "steps": len(rows),
        "p_reached": steps[-1].p if steps else float("nan"),
        "dumps": len(dumps),
        "exit_code": 1 if error else 0,
        "elapsed_secs": round(time.time() - start_ts, 2),
    }
    if error:
        summary["message"] = error
    if mesh.dim == 1 and rows and "num_sign_changes" in rows[-1]:
        summary["num_sign_changes"] = int(rows[-1]["num_sign_changes"])
    return diag_df, summary


WORKFLOWS = {
    "solve": run_solve,
    "benchmark": run_benchmark,
    "psweep": run_psweep,
}
