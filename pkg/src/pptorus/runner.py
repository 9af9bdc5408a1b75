"""Pipeline orchestration behind the command-line verbs.

Each verb fills a :class:`~pptorus.report.Report`; a stage failure is
recorded with its stage name and stops the run.  The exit code is 0 iff
there are no errors and every check passes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import scale_ode, spinor
from .gauge import make_divergence_free, transformed_curve
from .moduli import ModuliCurve, roundtrip
from .ppwave import (
    PPWaveMetric,
    assemble,
    compare_ricci,
    curvature_vanishing_check,
    extract_ids,
    killing_development,
    ricci_closed_form,
    ricci_fd_oracle,
    rigidity_check,
    traced_identity_check,
    tt_residuals,
)
from .report import Report
from .scenario import Scenario
from .torus import FieldCurve, save_snapshot

__all__ = ["RunContext", "StageFailed", "build_pp", "run", "check_ode", "run_spinor", "run_rigidity"]

SNAPSHOT_ENV = "PPWF_SNAPSHOT_DIR"

RUN_CHECKS = ("tt-gauge", "ricci-blocks", "null-blocks", "rho-target", "curvature-vanishing",
              "traced-identity", "killing-development")
ODE_CHECKS = ("zero-spacing",)
SPINOR_CHECKS = ("spinor-parallel", "dirac-witten", "spinor-constraint", "lichnerowicz")


class StageFailed(Exception):
    pass


@dataclass
class RunContext:
    """Where artifacts go and how tolerances are scaled."""

    out_dir: Path
    snapshot_dir: Optional[Path] = None
    tol_scale: float = 1.0
    write_csv: bool = True

    @classmethod
    def from_scenario(cls, sc: Scenario, out_dir=None, snapshot_dir=None, tol_scale: float = 1.0) -> "RunContext":
        out = Path(out_dir) if out_dir is not None else Path(sc.outputs.dir)
        snap = snapshot_dir or os.environ.get(SNAPSHOT_ENV)
        if snap is None and sc.outputs.snapshots:
            snap = out / "snapshots"
        return cls(out, None if snap is None else Path(snap), tol_scale, sc.outputs.csv)


class _Stage:
    """Context manager recording an exception under a stage name."""

    def __init__(self, report: Report, name: str):
        self.report = report
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageFailed):
            return False
        self.report.fail(self.name, exc)
        raise StageFailed(self.name) from exc


def _checks(sc: Scenario, ctx: RunContext, default: tuple, allowed: tuple) -> list:
    return [(n, t * ctx.tol_scale) for n, t in sc.check_list(default) if n in allowed]


@dataclass
class Built:
    pp: PPWaveMetric
    curve: FieldCurve
    rho: np.ndarray
    solution: scale_ode.LambdaSolution
    component: tuple
    gauge_identity: bool
    family: object


def build_pp(sc: Scenario, report: Report) -> Built:
    """gauge -> scale ODE -> assemble for a scenario."""
    grid, sg = sc.torus(), sc.sgrid()
    with _Stage(report, "build"):
        model = sc.curve_model()
        g = model.sample(sg)
        rho = sc.rho_field()
    with _Stage(report, "gauge"):
        gauged, fam = make_divergence_free(g)
        moved = float(np.abs(fam.disp).max())
        identity = moved == 0.0
        if identity:
            # already in gauge: keep the closed-form model for off-grid evaluation
            curve, rho_c = g, np.broadcast_to(rho, (sg.m,) + grid.shape)
        else:
            curve = gauged
            rho_c = transformed_curve(g, rho, fam, lambda s: 1.0, lambda s: 0.0)[1].values
        report.data["gauge"] = {"identity": identity, "max_displacement": moved}
    with _Stage(report, "scale"):
        data = scale_ode.compute_scale_data(curve, rho_c)
        sol = scale_ode.solve_lambda(data, sc.lam.s_star, sc.lam.value, sc.lam.rate)
        comp = sol.component_containing(sc.lam.s_star)
        report.data["scale"] = {"zeros": sol.zeros, "component": [float(sg.s[comp[0]]), float(sg.s[comp[1]])]}
    with _Stage(report, "assemble"):
        pp = assemble(curve, rho_c, sol, component=comp)
    return Built(pp, curve, np.asarray(rho_c), sol, comp, identity, fam)


def _oracle_indices(pp: PPWaveMetric) -> list:
    m = pp.sgrid.m
    return sorted(set(np.linspace(4, m - 5, 5).round().astype(int).tolist()))


def _write_series(ctx: RunContext, report: Report, b: Built, closed) -> None:
    if not ctx.write_csv:
        return
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    path = scale_ode.write_csv(b.solution, ctx.out_dir / "scale.csv")
    report.artifacts.append(path.name)
    i0, i1 = b.component
    target = b.rho[i0:i1 + 1]
    path = ctx.out_dir / "ricci.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "max_abs_ric_si", "max_abs_ric_ij", "max_abs_rho_error"])
        for i, s in enumerate(b.pp.sgrid.s):
            w.writerow([repr(float(s)), repr(float(np.abs(closed.ric_si[i]).max())),
                        repr(float(np.abs(closed.ric_ij[i]).max())),
                        repr(float(np.abs(closed.rho[i] - target[i]).max()))])
    report.artifacts.append(path.name)


def _write_snapshots(ctx: RunContext, report: Report, pp: PPWaveMetric) -> None:
    if ctx.snapshot_dir is None:
        return
    ctx.snapshot_dir.mkdir(parents=True, exist_ok=True)
    m = pp.sgrid.m
    w = pp.w()
    for tag, i in (("first", 0), ("middle", m // 2), ("last", m - 1)):
        save_snapshot(ctx.snapshot_dir / f"lapse_{tag}.ppwf", pp.grid, w[i])
    save_snapshot(ctx.snapshot_dir / "metric_middle.ppwf", pp.grid, pp.g.values[m // 2], symmetric=True)
    report.data["snapshot_dir"] = str(ctx.snapshot_dir)


def run(sc: Scenario, ctx: RunContext) -> Report:
    """Full construction with verification checks."""
    report = Report("run", sc.name, {"tol_scale": ctx.tol_scale})
    checks = _checks(sc, ctx, RUN_CHECKS, RUN_CHECKS + ("moduli-roundtrip",))
    try:
        b = build_pp(sc, report)
        pp = b.pp
        names = {n for n, _ in checks}
        fd = None
        with _Stage(report, "verify"):
            closed = ricci_closed_form(pp)
            if names & {"ricci-blocks", "null-blocks", "curvature-vanishing", "traced-identity"}:
                fd = ricci_fd_oracle(pp, _oracle_indices(pp))
                cmp = compare_ricci(pp, fd, closed)
            for name, tol in checks:
                if name == "tt-gauge":
                    div_r, tr_r = tt_residuals(b.curve.restrict(*b.component))
                    report.add(name, max(div_r, tr_r), tol, divergence=div_r, trace=tr_r)
                elif name == "ricci-blocks":
                    report.add(name, max(cmp["ss"], cmp["si"], cmp["ij"]), tol,
                               **{k: cmp[k] for k in ("ss", "si", "ij")}, richardson=fd.richardson)
                elif name == "null-blocks":
                    report.add(name, max(cmp["vv"], cmp["vs"], cmp["vi"]), tol,
                               **{k: cmp[k] for k in ("vv", "vs", "vi")})
                elif name == "rho-target":
                    i0, i1 = b.component
                    report.add(name, float(np.abs(closed.rho - b.rho[i0:i1 + 1]).max()), tol)
                elif name == "curvature-vanishing":
                    report.add(name, curvature_vanishing_check(fd), tol)
                elif name == "traced-identity":
                    report.add(name, traced_identity_check(fd, pp), tol)
                elif name == "killing-development":
                    ids = extract_ids(pp)
                    dev = killing_development(ids)
                    res = max(ids.upar_residual(), float(np.abs(dev.u.values - pp.u.values).max()),
                              float(np.abs(dev.g.values - pp.g.values).max()))
                    report.add(name, res, tol)
                elif name == "moduli-roundtrip":
                    mc = ModuliCurve.from_data(sc.curve_model().sample(sc.sgrid()), sc.rho_field(),
                                               sc.lam.s_star, sc.lam.value, sc.lam.rate)
                    rep = roundtrip(mc)
                    report.add(name, rep["residual"], tol, **rep["equivalence"])
        with _Stage(report, "output"):
            _write_series(ctx, report, b, closed)
            _write_snapshots(ctx, report, pp)
    except StageFailed:
        pass
    return report


def check_ode(sc: Scenario, ctx: RunContext) -> Report:
    """Scale ODE only: coefficient, solution, zeros and the comparison bounds."""
    report = Report("check-ode", sc.name, {"tol_scale": ctx.tol_scale})
    checks = _checks(sc, ctx, ODE_CHECKS, ODE_CHECKS)
    try:
        with _Stage(report, "build"):
            g = sc.curve_model().sample(sc.sgrid())
            rho = sc.rho_field()
        with _Stage(report, "scale"):
            data = scale_ode.compute_scale_data(g, rho)
            sol = scale_ode.solve_lambda(data, sc.lam.s_star, sc.lam.value, sc.lam.rate)
            coef = data.coefficient
            report.data["coefficient"] = {"min": float(coef.min()), "max": float(coef.max())}
            report.data["zeros"] = sol.zeros
        with _Stage(report, "verify"):
            for name, tol in checks:
                C = float(coef.max())
                c = float(coef.min())
                zr = scale_ode.check_zero_spacing(sol, C=max(C, 0.0), c=c if c > 0 else None, rtol=tol)
                worst = 0.0
                for v in zr.violations:
                    if v.get("bound"):
                        key = "distance" if v["kind"] == "spacing" else "length"
                        worst = max(worst, abs(v[key] - v["bound"]) / v["bound"])
                    else:
                        worst = max(worst, 1.0)
                report.add(name, worst, tol, zr.ok, **zr.as_dict())
        with _Stage(report, "output"):
            if ctx.write_csv:
                ctx.out_dir.mkdir(parents=True, exist_ok=True)
                report.artifacts.append(scale_ode.write_csv(sol, ctx.out_dir / "scale.csv").name)
    except StageFailed:
        pass
    return report


def run_spinor(sc: Scenario, ctx: RunContext) -> Report:
    """Transport a leaf-parallel spinor through the assembled pp-wave and verify it."""
    report = Report("spinor", sc.name, {"tol_scale": ctx.tol_scale})
    checks = _checks(sc, ctx, SPINOR_CHECKS, SPINOR_CHECKS)
    try:
        b = build_pp(sc, report)
        pp = b.pp
        with _Stage(report, "transport"):
            ids = extract_ids(pp)
            cl = spinor.build_clifford(pp.grid.d + 1)
            s0 = sc.spinor.start if sc.spinor.start is not None else float(pp.sgrid.s[0])
            k0 = pp.sgrid.index(s0)
            phi = spinor.leaf_parallel_spinor(pp.g.values[k0], pp.grid, cl)
            curve = spinor.transport(ids, phi, k0, cl)
            if "warning" in curve.meta:
                report.data["warning"] = curve.meta["warning"]
        with _Stage(report, "verify"):
            idx = list(range(0, pp.sgrid.m, sc.spinor.stride))
            rows = spinor.spinor_diagnostics(ids, curve, idx)
            for name, tol in checks:
                if name == "spinor-parallel":
                    report.add(name, max(r["nabla_sup"] for r in rows), tol)
                elif name == "dirac-witten":
                    report.add(name, max(r["G"] for r in rows), tol)
                elif name == "spinor-constraint":
                    report.add(name, max(r["constraint"] for r in rows), tol)
                elif name == "lichnerowicz":
                    res = max(spinor.lichnerowicz_identity(ids, curve, i)["residual"] for i in idx)
                    report.add(name, res, tol)
        with _Stage(report, "output"):
            if ctx.write_csv:
                ctx.out_dir.mkdir(parents=True, exist_ok=True)
                report.artifacts.append(spinor.write_csv(rows, ctx.out_dir / "spinor.csv").name)
    except StageFailed:
        pass
    return report


def run_rigidity(sc: Scenario, ctx: RunContext) -> Report:
    """Mapping-torus rigidity verdict for a periodic curve.

    The period defaults to the curve's own period (periodic-diagonal) or
    the interval length (constant curve).  A curve that is not periodic
    with that period is a precondition error.
    """
    report = Report("rigidity", sc.name, {"tol_scale": ctx.tol_scale})
    try:
        with _Stage(report, "build"):
            g = sc.curve_model().sample(sc.sgrid())
            rho = sc.rho_field()
            period = sc.rigidity.period
            if period is None:
                period = getattr(sc.curve, "period", None) or (sc.s.stop - sc.s.start)
        with _Stage(report, "rigidity"):
            verdict = rigidity_check(g, rho, float(period), tol=1e-9 * ctx.tol_scale)
        report.data["verdict"] = verdict.as_dict()
        report.add("rigidity-verdict", 0.0, 0.0, verdict.verdict in ("RIGID", "OBSTRUCTED"),
                   verdict=verdict.verdict)
        if verdict.verdict == "OBSTRUCTED":
            report.add("zero-certificate", 0.0, 0.0, bool(verdict.certificate.get("found")),
                       first_zero=verdict.certificate.get("first_zero"))
        if verdict.product is not None:
            _write_snapshots(ctx, report, verdict.product)
    except StageFailed:
        pass
    return report
