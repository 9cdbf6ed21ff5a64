"""Command-line entry points.

table      rebuild a published table as CSV, with diff columns wherever
           the source pins down every primitive
scenario   run a declarative JSON scenario through the analysis stages
simulate   raw session simulation to agent-level and summary logs
estimate   recompute estimates from exported session logs
verify     run the cross-module invariant suites

All numeric CSV output uses six significant digits; identical inputs and
seeds produce byte-identical files.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import replace
from pathlib import Path
from statistics import fmean

import click

from . import presets
from .checks import format_report, run_checks
from .dominance import classify_driver, gaps_from_bundles
from .equilibrium import ConvergenceError, solve_two_sided, solve_one_sided
from .estimators import (
    dominance_test,
    estimate_bundle,
    lambda_star_hat,
    make_bins,
    write_estimates_csv,
)
from .outcomes import revenue, revenue_report, welfare_equilibrium, welfare_fixed
from .reduced_forms import bundle
from .simulator import (
    SimConfig,
    mech_tag,
    read_session_csv,
    run_grid,
    write_session_csv,
    write_summary_csv,
)
from .types import (
    DutchExp,
    DutchLinear,
    EntryPrimitives,
    Lognormal,
    MarketPrimitives,
    PointMass,
    PostedBatch,
    PostedImmediate,
    Uniform,
)

OUT_ENV = "CLOCKMATCH_OUT"
TABLE_NAMES = (
    "oa1", "oa2", "oa3", "oa4", "oa5",
    "sim-aggregate", "sim-dominance", "sim-lambda",
)
STAGES = ("reduced-forms", "dominance", "equilibrium", "outcomes", "simulate", "estimate")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "YES" if v else "no"
    if isinstance(v, int):
        return str(v)
    f = float(v)
    if math.isnan(f):
        return "nan"
    return f"{f:.6g}"


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _mech_label(mech) -> str:
    tag = mech_tag(mech)
    if isinstance(mech, DutchExp):
        return f"{tag}(p0={mech.p0:g},delta={mech.delta:g})"
    if isinstance(mech, DutchLinear):
        return f"{tag}(p0={mech.p0:g},slope={mech.slope:g},floor={mech.floor:g})"
    if isinstance(mech, PostedImmediate):
        return f"{tag}(pbar={mech.pbar:g},phi={mech.phi:g})"
    return f"{tag}(pbar={mech.pbar:g})"


@click.group()
@click.option(
    "--out-dir", "outDir", envvar=OUT_ENV, default=".", show_default=True,
    type=click.Path(file_okay=False), help="Directory for emitted CSV files.",
)
@click.pass_context
def main(ctx, outDir):
    """Clock-auction vs posted-price analysis toolkit."""
    ctx.obj = Path(outDir)


# -- table --------------------------------------------------------------


def _table_oa1():
    header = [
        "row", "scenario", "theta", "rho", "delta", "phi", "pbar",
        "q", "pi_n", "tau", "lam_case", "lam",
        "q_printed", "pi_n_printed", "tau_printed", "lam_printed",
        "dq", "dpi_n", "dtau", "dlam",
    ]
    rows = []
    for r in presets.OA1_ROWS:
        prim = r.market()
        rfDA = bundle(prim, r.clock(), presets.TABLE_VALUES)
        rfFP = bundle(prim, r.bench(), presets.TABLE_VALUES)
        v = classify_driver(gaps_from_bundles(rfDA, rfFP))
        p = r.printed
        dlam = None if p["lam"] is None else v.threshold - p["lam"]
        rows.append([
            r.label, r.scenario, r.theta, r.rho, r.delta, r.phi, r.pbar,
            rfDA.q, rfDA.pbarM, rfDA.tau, v.case, v.threshold,
            p["q"], p["piN"], p["tau"], p["lam"],
            rfDA.q - p["q"], rfDA.pbarM - p["piN"], rfDA.tau - p["tau"], dlam,
        ])
    return header, rows, []


def _table_oa2():
    ds = presets.OA2_DELTAS
    header = (
        ["theta"]
        + [f"delta_{d:g}" for d in ds]
        + [f"printed_{d:g}" for d in ds]
        + [f"match_{d:g}" for d in ds]
    )
    rows = []
    for th in presets.OA2_THETAS:
        prim = presets.TABLE_PRIM.at(R=th)
        vals, printed, matches = [], [], []
        for d in ds:
            rfDA = bundle(prim, DutchExp(presets.OA2_RHO, d), presets.TABLE_VALUES)
            rfFP = bundle(
                prim, PostedImmediate(presets.OA2_PBAR, 0.0), presets.TABLE_VALUES
            )
            v = classify_driver(gaps_from_bundles(rfDA, rfFP))
            disp = presets.oa2_display(v.case, v.threshold)
            want = presets.OA2_PRINTED[(th, d)]
            try:
                ok = abs(v.threshold - float(want)) <= 0.005
            except (TypeError, ValueError):
                ok = disp == want
            vals.append(disp)
            printed.append(want)
            matches.append(ok)
        rows.append([th] + vals + printed + matches)
    return header, rows, []


def _table_oa3():
    header = [
        "phi", "tau_da", "tau_fp", "gap", "lam_star",
        "dom_at_0.02", "dom_at_0.05", "dom_at_0.02_exact", "dom_at_0.05_exact",
        "gap_printed", "lam_printed", "dom02_printed", "dom05_printed",
        "dgap", "dlam", "verdicts_match",
    ]
    r = presets.OA3_ROW
    prim = r.market()
    rfDA = bundle(prim, r.clock(), presets.TABLE_VALUES)
    p = presets.OA3_PRINTED
    rows = []
    for i, phi in enumerate(presets.OA3_PHIS):
        rfFP = bundle(prim, PostedImmediate(r.pbar, phi), presets.TABLE_VALUES)
        gaps = gaps_from_bundles(rfDA, rfFP)
        v = classify_driver(gaps)
        # published verdicts evaluate the waiting cost against the
        # two-decimal threshold they print, so the diff column does too
        dom02 = 0.02 >= round(v.threshold, 2)
        dom05 = 0.05 >= round(v.threshold, 2)
        rows.append([
            phi, rfDA.tau, rfFP.tau, gaps.deltaTau, v.threshold,
            dom02, dom05, v.admits(0.02), v.admits(0.05),
            p["gap"][i], p["lamStar"][i], p["dom02"][i], p["dom05"][i],
            gaps.deltaTau - p["gap"][i], v.threshold - p["lamStar"][i],
            dom02 == p["dom02"][i] and dom05 == p["dom05"][i],
        ])
    return header, rows, []


def _one_sided_revenue(prim, entry, mech):
    eq = solve_one_sided(prim, mech, entry)
    rf = bundle(prim.at(D=eq.Dstar), mech, entry.valueDist)
    return revenue(prim.alpha, rf.m, rf.pbarM)


def _table_oa4():
    warn = (
        "revenue map source leaves entry unstated; assuming one-sided driver "
        f"entry against a fixed rider mass of 80, {presets.ENTRY_DEFAULTS_NOTE}, "
        f"driver waiting cost lam={presets.OA4_LAM:g}; printed columns are "
        "reference values, not pass/fail targets"
    )
    prim, entry = presets.frontier_defaults()
    revDA = {
        p0: _one_sided_revenue(prim, entry, DutchExp(p0, presets.OA4_DELTA))
        for p0 in presets.OA4_P0S
    }
    revFP = {
        pb: _one_sided_revenue(prim, entry, PostedImmediate(pb, 0.0))
        for pb in presets.OA4_PBARS
    }
    header = (
        ["p0"]
        + [f"pbar_{pb:g}" for pb in presets.OA4_PBARS]
        + [f"printed_{pb:g}" for pb in presets.OA4_PBARS]
    )
    rows = []
    for i, p0 in enumerate(presets.OA4_P0S):
        ratios = [revDA[p0] / revFP[pb] for pb in presets.OA4_PBARS]
        rows.append([p0] + ratios + list(presets.OA4_PRINTED[i]))
    return header, rows, [warn]


def _table_oa5():
    warn = (
        "welfare table source leaves entry unstated; assuming "
        f"{presets.ENTRY_DEFAULTS_NOTE}, match surplus s={presets.OA5_S:g}, "
        "fixed-thickness columns evaluated at 80 drivers and 80 riders; "
        "printed columns are reference values, not pass/fail targets"
    )
    header = [
        "row", "scenario", "benchmark",
        "w_fixed_da", "w_fixed_bench", "w_eq_da", "w_eq_bench",
        "dw_wait", "dw_volume",
        "wf_da_printed", "wf_bench_printed", "weq_da_printed",
        "weq_bench_printed", "dw_wait_printed", "dw_volume_printed",
    ]
    entry = presets.entry_defaults(lam=presets.OA5_LAM, kappa=presets.OA5_KAPPA)
    prim = presets.TABLE_PRIM
    prim80 = prim.at(D=80.0, R=80.0)
    vd = entry.valueDist
    eqCache = {}

    def solved(mech):
        key = _mech_label(mech)
        if key not in eqCache:
            eq = solve_two_sided(prim, mech, entry)
            rf = bundle(prim.at(D=eq.Dstar, R=eq.Rstar), mech, vd)
            eqCache[key] = (eq, rf)
        return eqCache[key]

    rows = []
    for label, scen, rho, delta, kind in presets.OA5_ROWS:
        da = DutchExp(rho, delta)
        bench = (
            PostedImmediate(presets.OA5_PBAR, 0.0)
            if kind == "immediate" else PostedBatch(presets.OA5_PBAR)
        )
        wf = welfare_fixed(
            bundle(prim80, da, vd), bundle(prim80, bench, vd),
            prim80, presets.OA5_LAM, presets.OA5_KAPPA, presets.OA5_S,
        )
        eqA, rfA = solved(da)
        eqB, rfB = solved(bench)
        we = welfare_equilibrium(
            eqA, eqB, rfA, rfB,
            presets.OA5_LAM, presets.OA5_KAPPA, presets.OA5_S,
        )
        rows.append([
            label, scen, kind,
            wf.welfareA, wf.welfareB, we.welfareA, we.welfareB,
            we.driverWaitTerm + we.riderWaitTerm, we.volumeTerm,
        ] + list(presets.OA5_PRINTED[label]))
    return header, rows, [warn]


_SIM_WARN = (
    "published simulation tables pooled 5 sessions per cell with unstated "
    "seeds; printed columns are reference values, the reproducible content "
    "is orderings and signs"
)


def _sim_records(variant, sessions, seed):
    cfg, mechs = presets.sim_config(variant, sessions=sessions, baseSeed=seed)
    return run_grid(cfg, presets.SIM_CELLS, mechs)


def _cell_means(records, tag):
    """Unweighted means of the per-cell estimates, one scalar per field.

    The aggregate table averages across thickness cells, so a 40-driver
    cell counts the same as a 20-driver cell; its q_pi entry is the
    product of the averaged q and pi columns, not an averaged product.
    """
    bundles = [
        estimate_bundle(records, bin_, tag)
        for bin_ in make_bins(records, presets.SIM_CELLS)
    ]
    mean = lambda attr: fmean(getattr(b, attr) for b in bundles)
    out = {f: mean(f) for f in ("q", "pi", "tau", "pbar", "tauR")}
    out["q_pi"] = out["q"] * out["pi"]
    return out


def _table_sim_aggregate(sessions, seed):
    header = [
        "variant", "mechanism", "q", "pi", "tau", "pbar", "tauR", "q_pi",
        "q_printed", "pi_printed", "tau_printed", "pbar_printed",
        "tauR_printed", "q_pi_printed",
    ]
    rows = []
    for variant in presets.SIM_VARIANTS:
        records = _sim_records(variant, sessions, seed)
        for tag in ("DA", "FPimm", "FPbatch"):
            m = _cell_means(records, tag)
            printed = presets.SIM_AGGREGATE_PRINTED[(variant, tag)]
            rows.append(
                [variant, tag, m["q"], m["pi"], m["tau"], m["pbar"],
                 m["tauR"], m["q_pi"]]
                + list(printed)
            )
    return header, rows, [_SIM_WARN]


def _cell_bundles(records, tags):
    bins = make_bins(records, presets.SIM_CELLS)
    for bin_ in bins:
        yield (int(bin_.D), int(bin_.R)), {
            tag: estimate_bundle(records, bin_, tag) for tag in tags
        }


def _table_sim_dominance(sessions, seed):
    header = [
        "D", "R", "delta_vs_batch", "da_dominates_batch",
        "delta_vs_imm", "da_dominates_imm",
        "delta_batch_printed", "delta_imm_printed",
    ]
    records = _sim_records("baseline", sessions, seed)
    rows = []
    for cell, byTag in _cell_bundles(records, ("DA", "FPimm", "FPbatch")):
        vsB = dominance_test(byTag["DA"], byTag["FPbatch"], presets.SIM_LAM)
        vsI = dominance_test(byTag["DA"], byTag["FPimm"], presets.SIM_LAM)
        pb, pi = presets.SIM_DOMINANCE_PRINTED[cell]
        rows.append([
            cell[0], cell[1],
            vsB.margins[0], vsB.dominates[0],
            vsI.margins[0], vsI.dominates[0],
            pb, pi,
        ])
    return header, rows, [_SIM_WARN]


def _table_sim_lambda(sessions, seed):
    header = [
        "D", "R", "payment_gap", "timing_gap", "lam_star",
        "payment_gap_printed", "timing_gap_printed", "lam_star_printed",
    ]
    records = _sim_records("tradeoff", sessions, seed)
    rows = []
    for cell, byTag in _cell_bundles(records, ("DA", "FPimm")):
        rep = lambda_star_hat(byTag["DA"], byTag["FPimm"])
        pp, pt, pd = presets.SIM_LAMBDA_PRINTED[cell]
        rows.append([
            cell[0], cell[1], rep.deltaPi, rep.deltaTau, rep.display,
            pp, pt, pd,
        ])
    return header, rows, [_SIM_WARN]


@main.command("table")
@click.argument("name", type=click.Choice(TABLE_NAMES))
@click.option("--sessions", default=5, show_default=True,
              help="Sessions per cell for the sim-* tables.")
@click.option("--seed", default=presets.SIM_BASE_SEED, show_default=True,
              help="Base seed for the sim-* tables.")
@click.pass_obj
def cmd_table(outDir, name, sessions, seed):
    """Rebuild one published table as CSV."""
    builders = {
        "oa1": _table_oa1,
        "oa2": _table_oa2,
        "oa3": _table_oa3,
        "oa4": _table_oa4,
        "oa5": _table_oa5,
        "sim-aggregate": lambda: _table_sim_aggregate(sessions, seed),
        "sim-dominance": lambda: _table_sim_dominance(sessions, seed),
        "sim-lambda": lambda: _table_sim_lambda(sessions, seed),
    }
    header, rows, warnings = builders[name]()
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    path = _write_csv(outDir / f"table_{name.replace('-', '_')}.csv", header, rows)
    click.echo(f"wrote {path} ({len(rows)} rows)")


# -- scenario configs ---------------------------------------------------


class ConfigError(click.ClickException):
    exit_code = 2


def _require(raw, path, allowed, required=()):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    for key in raw:
        if key not in allowed:
            raise ConfigError(
                f"{path}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})"
            )
    for key in required:
        if key not in raw:
            raise ConfigError(f"{path}.{key}: required key missing")
    return raw


def _num(raw, path):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {raw!r}")
    return float(raw)


def _parse_dist(raw, path):
    _require(raw, path, {"kind", "lo", "hi", "mu", "sigma", "x"}, required=("kind",))
    kind = raw["kind"]
    try:
        if kind == "uniform":
            _require(raw, path, {"kind", "lo", "hi"}, required=("lo", "hi"))
            return Uniform(_num(raw["lo"], f"{path}.lo"), _num(raw["hi"], f"{path}.hi"))
        if kind == "lognormal":
            _require(raw, path, {"kind", "mu", "sigma"}, required=("mu", "sigma"))
            return Lognormal(_num(raw["mu"], f"{path}.mu"), _num(raw["sigma"], f"{path}.sigma"))
        if kind == "pointmass":
            _require(raw, path, {"kind", "x"}, required=("x",))
            return PointMass(_num(raw["x"], f"{path}.x"))
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    raise ConfigError(f"{path}.kind: unknown distribution kind {kind!r}")


def _parse_mech(raw, path):
    _require(
        raw, path,
        {"kind", "p0", "delta", "slope", "floor", "pbar", "phi"},
        required=("kind",),
    )
    kind = raw["kind"]
    try:
        if kind == "dutch-exp":
            _require(raw, path, {"kind", "p0", "delta"}, required=("p0", "delta"))
            return DutchExp(_num(raw["p0"], f"{path}.p0"), _num(raw["delta"], f"{path}.delta"))
        if kind == "dutch-linear":
            _require(raw, path, {"kind", "p0", "slope", "floor"},
                     required=("p0", "slope", "floor"))
            return DutchLinear(
                _num(raw["p0"], f"{path}.p0"),
                _num(raw["slope"], f"{path}.slope"),
                _num(raw["floor"], f"{path}.floor"),
            )
        if kind == "posted-immediate":
            _require(raw, path, {"kind", "pbar", "phi"}, required=("pbar",))
            return PostedImmediate(
                _num(raw["pbar"], f"{path}.pbar"),
                _num(raw.get("phi", 0.0), f"{path}.phi"),
            )
        if kind == "posted-batch":
            _require(raw, path, {"kind", "pbar"}, required=("pbar",))
            return PostedBatch(_num(raw["pbar"], f"{path}.pbar"))
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    raise ConfigError(f"{path}.kind: unknown mechanism kind {kind!r}")


_GRID_AXES = ("theta", "delta", "rho", "phi", "pbar", "lam", "kappa", "s")
_TOP_KEYS = {
    "name", "primitives", "values", "mechanisms", "grids",
    "lam", "kappa", "s", "entry", "simulator", "stages", "tol",
}


def _parse_primitives(raw, path):
    _require(raw, path, {"A", "beta", "T", "alpha", "D", "R"})
    base = presets.TABLE_PRIM
    try:
        return MarketPrimitives(
            A=_num(raw.get("A", base.A), f"{path}.A"),
            beta=_num(raw.get("beta", base.beta), f"{path}.beta"),
            T=_num(raw.get("T", base.T), f"{path}.T"),
            alpha=_num(raw.get("alpha", base.alpha), f"{path}.alpha"),
            D=_num(raw.get("D", 1.0), f"{path}.D"),
            R=_num(raw.get("R", 1.0), f"{path}.R"),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_entry(raw, path, lam, kappa):
    _require(raw, path, {"Dbar", "Rbar", "costs", "values", "lam", "kappa"},
             required=("Dbar", "Rbar", "costs", "values"))
    try:
        return EntryPrimitives(
            Dbar=_num(raw["Dbar"], f"{path}.Dbar"),
            Rbar=_num(raw["Rbar"], f"{path}.Rbar"),
            costDist=_parse_dist(raw["costs"], f"{path}.costs"),
            valueDist=_parse_dist(raw["values"], f"{path}.values"),
            lam=_num(raw.get("lam", lam), f"{path}.lam"),
            kappa=_num(raw.get("kappa", kappa), f"{path}.kappa"),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_simulator(raw, path, alpha):
    allowed = {
        "variant", "mechanisms", "values", "costs", "cells", "D", "R",
        "horizon", "mu", "muPolicy", "phi", "sessions", "baseSeed",
    }
    _require(raw, path, allowed)
    if "variant" in raw:
        if any(k in raw for k in ("mechanisms", "values", "costs")):
            raise ConfigError(
                f"{path}.variant: give either a named variant or explicit "
                "mechanisms/values/costs, not both"
            )
        vname = raw["variant"]
        if vname not in presets.SIM_VARIANTS:
            raise ConfigError(
                f"{path}.variant: unknown variant {vname!r} "
                f"(known: {', '.join(presets.SIM_VARIANTS)})"
            )
        mechs = presets.SIM_VARIANTS[vname].mechanisms
        values, costs = presets.SIM_VALUES, presets.SIM_COSTS
    else:
        for key in ("mechanisms", "values", "costs"):
            if key not in raw:
                raise ConfigError(f"{path}.{key}: required without a variant")
        if not isinstance(raw["mechanisms"], list) or not raw["mechanisms"]:
            raise ConfigError(f"{path}.mechanisms: need a non-empty list")
        mechs = tuple(
            _parse_mech(m, f"{path}.mechanisms[{i}]")
            for i, m in enumerate(raw["mechanisms"])
        )
        values = _parse_dist(raw["values"], f"{path}.values")
        costs = _parse_dist(raw["costs"], f"{path}.costs")

    if "cells" in raw:
        cellsRaw = raw["cells"]
        if not isinstance(cellsRaw, list) or not cellsRaw:
            raise ConfigError(f"{path}.cells: need a non-empty list of [D, R] pairs")
        cells = []
        for i, c in enumerate(cellsRaw):
            if not isinstance(c, list) or len(c) != 2:
                raise ConfigError(f"{path}.cells[{i}]: expected [D, R]")
            cells.append((int(_num(c[0], f"{path}.cells[{i}][0]")),
                          int(_num(c[1], f"{path}.cells[{i}][1]"))))
        cells = tuple(cells)
    else:
        cells = ((int(_num(raw.get("D", 20), f"{path}.D")),
                  int(_num(raw.get("R", 20), f"{path}.R"))),)

    try:
        cfg = SimConfig(
            D=cells[0][0], R=cells[0][1],
            horizon=_num(raw.get("horizon", 10.0), f"{path}.horizon"),
            mu=_num(raw.get("mu", 5.0), f"{path}.mu"),
            muPolicy=raw.get("muPolicy", "per-driver" if "variant" in raw else "aggregate"),
            mechanism=mechs[0],
            valueDist=values, costDist=costs, alpha=alpha,
            phi=_num(raw.get("phi", 0.0), f"{path}.phi"),
            sessionsPerCell=int(_num(raw.get("sessions", 5), f"{path}.sessions")),
            baseSeed=int(_num(raw.get("baseSeed", presets.SIM_BASE_SEED), f"{path}.baseSeed")),
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    return cfg, mechs, cells


def load_scenario(raw, source="config"):
    """Validate a raw scenario mapping into runnable pieces.

    Everything is checked before anything runs; the first offending
    field aborts with its dotted path.
    """
    _require(raw, source, _TOP_KEYS, required=("mechanisms",))
    name = raw.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{source}.name: expected a non-empty string")

    prim = _parse_primitives(raw.get("primitives", {}), f"{source}.primitives")
    values = (
        _parse_dist(raw["values"], f"{source}.values")
        if "values" in raw else Uniform(0.0, 1.0)
    )
    if not isinstance(raw["mechanisms"], list) or not raw["mechanisms"]:
        raise ConfigError(f"{source}.mechanisms: need a non-empty mechanism list")
    mechs = [
        _parse_mech(m, f"{source}.mechanisms[{i}]")
        for i, m in enumerate(raw["mechanisms"])
    ]

    lam = _num(raw.get("lam", 0.0), f"{source}.lam")
    kappa = _num(raw.get("kappa", 0.0), f"{source}.kappa")
    s = _num(raw.get("s", 0.0), f"{source}.s")

    gridsRaw = _require(raw.get("grids", {}), f"{source}.grids", set(_GRID_AXES))
    grids = {}
    for axis, vals in gridsRaw.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{source}.grids.{axis}: need a non-empty list")
        grids[axis] = [_num(v, f"{source}.grids.{axis}[{i}]") for i, v in enumerate(vals)]

    entry = (
        _parse_entry(raw["entry"], f"{source}.entry", lam, kappa)
        if "entry" in raw else None
    )
    sim = (
        _parse_simulator(raw["simulator"], f"{source}.simulator", prim.alpha)
        if "simulator" in raw else None
    )

    if "stages" in raw:
        if not isinstance(raw["stages"], list):
            raise ConfigError(f"{source}.stages: expected a list")
        stages = []
        for st in raw["stages"]:
            if st not in STAGES:
                raise ConfigError(
                    f"{source}.stages: unknown stage {st!r} (known: {', '.join(STAGES)})"
                )
            stages.append(st)
        if ("equilibrium" in stages or "outcomes" in stages) and entry is None:
            raise ConfigError(
                f"{source}.stages: equilibrium and outcomes stages need an entry section"
            )
        if ("simulate" in stages or "estimate" in stages) and sim is None:
            raise ConfigError(
                f"{source}.stages: simulate and estimate stages need a simulator section"
            )
    else:
        stages = ["reduced-forms", "dominance"]
        if entry is not None:
            stages += ["equilibrium", "outcomes"]
        if sim is not None:
            stages += ["simulate", "estimate"]

    tolRaw = _require(raw.get("tol", {}), f"{source}.tol", {"equilibrium"})
    tol = {k: _num(v, f"{source}.tol.{k}") for k, v in tolRaw.items()}

    return {
        "name": name, "prim": prim, "values": values, "mechanisms": mechs,
        "grids": grids, "lam": lam, "kappa": kappa, "s": s,
        "entry": entry, "sim": sim, "stages": stages, "tol": tol,
    }


def _scenario_points(cfg):
    """Cross product of the grid axes, materialized as concrete runs."""
    axes = [(k, v) for k, v in cfg["grids"].items()]
    if not axes:
        combos = [()]
    else:
        combos = list(itertools.product(*(v for _, v in axes)))
    names = [k for k, _ in axes]
    points = []
    for idx, combo in enumerate(combos):
        sub = dict(zip(names, combo))
        prim = cfg["prim"]
        if "theta" in sub:
            prim = prim.at(R=sub["theta"] * prim.D)
        mechs = []
        for mech in cfg["mechanisms"]:
            if "rho" in sub and hasattr(mech, "p0"):
                mech = replace(mech, p0=sub["rho"])
            if "delta" in sub and hasattr(mech, "delta"):
                mech = replace(mech, delta=sub["delta"])
            if "phi" in sub and hasattr(mech, "phi"):
                mech = replace(mech, phi=sub["phi"])
            if "pbar" in sub and hasattr(mech, "pbar"):
                mech = replace(mech, pbar=sub["pbar"])
            mechs.append(mech)
        points.append({
            "index": idx, "prim": prim, "mechs": mechs,
            "lam": sub.get("lam", cfg["lam"]),
            "kappa": sub.get("kappa", cfg["kappa"]),
            "s": sub.get("s", cfg["s"]),
        })
    return points


def _run_scenario(cfg, outDir):
    name = cfg["name"]
    points = _scenario_points(cfg)
    vd = cfg["values"]
    written = []

    rf = {}
    for pt in points:
        for mech in pt["mechs"]:
            rf[(pt["index"], _mech_label(mech))] = bundle(pt["prim"], mech, vd)

    if "reduced-forms" in cfg["stages"]:
        rows = [
            [
                pt["index"], _mech_label(mech), pt["prim"].theta,
                pt["lam"], pt["kappa"], pt["s"],
                b.q, b.pi, b.tau, b.tauR, b.qR, b.m, b.pbarM,
                ";".join(b.flags),
            ]
            for pt in points
            for mech in pt["mechs"]
            for b in [rf[(pt["index"], _mech_label(mech))]]
        ]
        written.append(_write_csv(
            outDir / f"{name}_reduced_forms.csv",
            ["point", "mechanism", "theta", "lam", "kappa", "s",
             "q", "pi", "tau", "tauR", "qR", "m", "pbarM", "flags"],
            rows,
        ))

    if "dominance" in cfg["stages"]:
        rows = []
        for pt in points:
            clock = pt["mechs"][0]
            rfDA = rf[(pt["index"], _mech_label(clock))]
            for mech in pt["mechs"][1:]:
                rfFP = rf[(pt["index"], _mech_label(mech))]
                gaps = gaps_from_bundles(rfDA, rfFP)
                v = classify_driver(gaps)
                margin = pt["lam"] * gaps.deltaTau - gaps.deltaPi
                rows.append([
                    pt["index"], _mech_label(mech), v.case, v.threshold,
                    gaps.deltaPi, gaps.deltaTau, margin, v.admits(pt["lam"]),
                ])
        written.append(_write_csv(
            outDir / f"{name}_dominance.csv",
            ["point", "benchmark", "case", "threshold",
             "delta_pi", "delta_tau", "margin_at_lam", "admits_at_lam"],
            rows,
        ))

    eqByMech = {}
    if "equilibrium" in cfg["stages"]:
        rows = []
        solverTol = cfg["tol"].get("equilibrium")
        for pt in points:
            for mech in pt["mechs"]:
                key = (pt["index"], _mech_label(mech))
                try:
                    eq = solve_two_sided(
                        pt["prim"], mech, cfg["entry"], tol=solverTol
                    )
                    eqByMech[key] = eq
                    rows.append([
                        pt["index"], _mech_label(mech), True,
                        eq.Dstar, eq.Rstar, eq.iterations, eq.residual,
                    ])
                except ConvergenceError as e:
                    rows.append([
                        pt["index"], _mech_label(mech), False,
                        math.nan, math.nan, len(e.history), math.nan,
                    ])
        written.append(_write_csv(
            outDir / f"{name}_equilibrium.csv",
            ["point", "mechanism", "converged", "Dstar", "Rstar",
             "iterations", "residual"],
            rows,
        ))

    if "outcomes" in cfg["stages"]:
        rows = []
        for pt in points:
            clock = pt["mechs"][0]
            rfDA = rf[(pt["index"], _mech_label(clock))]
            for mech in pt["mechs"][1:]:
                rfFP = rf[(pt["index"], _mech_label(mech))]
                rev = revenue_report(pt["prim"].alpha, rfDA, rfFP)
                wf = welfare_fixed(
                    rfDA, rfFP, pt["prim"], pt["lam"], pt["kappa"], pt["s"]
                )
                row = [
                    pt["index"], _mech_label(mech),
                    rev.ratio, rev.entryGain, rev.matchRateRatio, rev.priceGain,
                    wf.welfareA, wf.welfareB, wf.verdict, wf.sStar,
                ]
                keyA = (pt["index"], _mech_label(clock))
                keyB = (pt["index"], _mech_label(mech))
                if keyA in eqByMech and keyB in eqByMech:
                    eqA, eqB = eqByMech[keyA], eqByMech[keyB]
                    rfAeq = bundle(pt["prim"].at(D=eqA.Dstar, R=eqA.Rstar), clock, vd)
                    rfBeq = bundle(pt["prim"].at(D=eqB.Dstar, R=eqB.Rstar), mech, vd)
                    we = welfare_equilibrium(
                        eqA, eqB, rfAeq, rfBeq, pt["lam"], pt["kappa"], pt["s"]
                    )
                    row += [we.welfareA, we.welfareB, we.verdict, we.sStarStar]
                else:
                    row += [math.nan, math.nan, "", math.nan]
                rows.append(row)
        written.append(_write_csv(
            outDir / f"{name}_outcomes.csv",
            ["point", "benchmark", "revenue_ratio", "entry_gain",
             "match_rate_ratio", "price_gain", "w_clock", "w_bench",
             "verdict", "s_star", "w_eq_clock", "w_eq_bench",
             "verdict_eq", "s_star_star"],
            rows,
        ))

    simRecords = None
    if "simulate" in cfg["stages"]:
        simCfg, simMechs, cells = cfg["sim"]
        simRecords = run_grid(simCfg, cells, simMechs)
        sessions = outDir / f"{name}_sessions.csv"
        summary = outDir / f"{name}_summary.csv"
        sessions.parent.mkdir(parents=True, exist_ok=True)
        write_session_csv(simRecords, sessions)
        write_summary_csv(simRecords, summary)
        written += [sessions, summary]

    if "estimate" in cfg["stages"]:
        _, _, cells = cfg["sim"]
        bins = make_bins(simRecords, cells)
        bundles = [
            estimate_bundle(simRecords, bin_, tag)
            for bin_ in bins
            for tag in sorted({t for t, _ in bin_.members})
        ]
        estPath = outDir / f"{name}_estimates.csv"
        estPath.parent.mkdir(parents=True, exist_ok=True)
        write_estimates_csv(bundles, estPath)
        written.append(estPath)

    return written


def _load_config_file(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}")


PRESET_SCENARIOS = {
    "baseline": {
        "name": "baseline",
        "primitives": {"A": 0.5, "beta": 0.5, "T": 30, "alpha": 0.2, "D": 1, "R": 1},
        "values": {"kind": "uniform", "lo": 0, "hi": 1},
        "mechanisms": [
            {"kind": "dutch-exp", "p0": 0.7, "delta": 0.02},
            {"kind": "posted-immediate", "pbar": 0.5, "phi": 0},
            {"kind": "posted-batch", "pbar": 0.5},
        ],
        "lam": 0.02, "kappa": 0.02, "s": 0.5,
        "entry": {
            "Dbar": 80, "Rbar": 80,
            "costs": {"kind": "uniform", "lo": 0, "hi": 1},
            "values": {"kind": "uniform", "lo": 0, "hi": 1},
        },
        "simulator": {
            "variant": "baseline",
            "cells": [[20, 20], [20, 40], [40, 20], [40, 40]],
        },
    },
    "timing-only": {
        "name": "timing-only",
        "primitives": {"T": 10, "alpha": 0.2, "D": 20, "R": 20},
        "mechanisms": [{"kind": "dutch-linear", "p0": 10.5, "slope": 0.1, "floor": 9.5}],
        "lam": 0.10, "kappa": 0.10,
        "simulator": {
            "variant": "timing-only",
            "cells": [[20, 20], [20, 40], [40, 20], [40, 40]],
        },
        "stages": ["simulate", "estimate"],
    },
    "tradeoff": {
        "name": "tradeoff",
        "primitives": {"T": 10, "alpha": 0.2, "D": 20, "R": 20},
        "mechanisms": [{"kind": "dutch-linear", "p0": 9.0, "slope": 1.0, "floor": 5.0}],
        "lam": 0.10, "kappa": 0.10,
        "simulator": {
            "variant": "tradeoff",
            "cells": [[20, 20], [20, 40], [40, 20], [40, 40]],
        },
        "stages": ["simulate", "estimate"],
    },
}


@main.command("scenario")
@click.argument("path", required=False,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(PRESET_SCENARIOS)),
              help="Run an embedded scenario instead of a config file.")
@click.option("--sessions", type=int, default=None,
              help="Override sessions per cell for the simulate stage.")
@click.option("--seed", type=int, default=None,
              help="Override the base seed for the simulate stage.")
@click.option("--tol", type=float, default=None,
              help="Override the equilibrium solver tolerance.")
@click.pass_obj
def cmd_scenario(outDir, path, preset, sessions, seed, tol):
    """Run a declarative scenario through the analysis stages."""
    if (path is None) == (preset is None):
        raise click.UsageError("give a config path or --preset, not both")
    raw = PRESET_SCENARIOS[preset] if preset else _load_config_file(path)
    cfg = load_scenario(raw, source=preset or path)
    if tol is not None:
        cfg["tol"]["equilibrium"] = tol
    if cfg["sim"] is not None and (sessions is not None or seed is not None):
        simCfg, mechs, cells = cfg["sim"]
        if sessions is not None:
            simCfg = replace(simCfg, sessionsPerCell=sessions)
        if seed is not None:
            simCfg = replace(simCfg, baseSeed=seed)
        cfg["sim"] = (simCfg, mechs, cells)
    written = _run_scenario(cfg, outDir)
    for p in written:
        click.echo(f"wrote {p}")


@main.command("simulate")
@click.argument("path", required=False,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(presets.SIM_VARIANTS)),
              help="Run an embedded simulation variant instead of a config file.")
@click.option("--sessions", type=int, default=None,
              help="Override sessions per cell.")
@click.option("--seed", type=int, default=None, help="Override the base seed.")
@click.pass_obj
def cmd_simulate(outDir, path, preset, sessions, seed):
    """Simulate sessions and write agent-level and summary logs."""
    if (path is None) == (preset is None):
        raise click.UsageError("give a config path or --preset, not both")
    if preset:
        cfg, mechs = presets.sim_config(preset)
        cells = presets.SIM_CELLS
        name = preset
    else:
        raw = _load_config_file(path)
        _require(raw, path, {"name", "primitives", "simulator"},
                 required=("simulator",))
        name = raw.get("name", Path(path).stem)
        prim = _parse_primitives(raw.get("primitives", {}), f"{path}.primitives")
        cfg, mechs, cells = _parse_simulator(
            raw["simulator"], f"{path}.simulator", prim.alpha
        )
    if sessions is not None:
        cfg = replace(cfg, sessionsPerCell=sessions)
    if seed is not None:
        cfg = replace(cfg, baseSeed=seed)
    records = run_grid(cfg, cells, mechs)
    outDir.mkdir(parents=True, exist_ok=True)
    sessionsPath = outDir / f"{name}_sessions.csv"
    summaryPath = outDir / f"{name}_summary.csv"
    write_session_csv(records, sessionsPath)
    write_summary_csv(records, summaryPath)
    click.echo(f"wrote {sessionsPath} ({len(records)} sessions)")
    click.echo(f"wrote {summaryPath}")


@main.command("estimate")
@click.argument("logs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", "bootSeed", type=int, default=2718, show_default=True,
              help="Bootstrap resampling seed.")
@click.pass_obj
def cmd_estimate(outDir, logs, bootSeed):
    """Estimate per-cell reduced forms from session logs."""
    records = []
    for p in logs:
        records.extend(read_session_csv(p))
    seen = {(r.mechTag, r.sessionId) for r in records}
    if len(seen) != len(records):
        raise ConfigError(
            "duplicate (mechanism, session id) pairs across the given logs; "
            "estimates would double-count sessions"
        )
    targets = sorted({(r.D, r.R) for r in records})
    bins = make_bins(records, targets)
    bundles = [
        estimate_bundle(records, bin_, tag, bootSeed=bootSeed)
        for bin_ in bins
        for tag in sorted({t for t, _ in bin_.members})
    ]
    outDir.mkdir(parents=True, exist_ok=True)
    outPath = outDir / "estimates.csv"
    write_estimates_csv(bundles, outPath)
    click.echo(f"wrote {outPath} ({len(bundles)} bundles)")


@main.command("verify")
@click.option("--tol", type=float, default=None,
              help="Override every suite's default tolerance.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--inject-failure", is_flag=True, hidden=True)
@click.pass_context
def cmd_verify(ctx, tol, seed, inject_failure):
    """Run the cross-module invariant suites."""
    results = run_checks(seed=seed, tol=tol, flipPaymentSign=inject_failure)
    click.echo(format_report(results))
    if any(not r.passed for r in results):
        ctx.exit(1)


if __name__ == "__main__":
    main()
