"""Experiment runner: wires plain-text configurations to the module
operations, persists deterministic JSON/CSV reports and field binaries.

Invocation:

    mikado-forge <experiment> --config <file> [--out <dir>] [--seed <u64>]

Config files are one `key = value` per line ('#' comments).  Values parse
as int, float, comma-separated lists, booleans, or strings.  Exit codes:
0 all named checks passed, 1 an assertion failed (the report names it),
2 configuration error, 3 resource/budget exhaustion.  MF_THREADS caps the
FFT worker pool (results are identical for any setting).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import fieldio
from .ball import (
    build_fields,
    energy_defect,
    flux_check,
    grad_energy,
    make_alpha_beta,
    singular_norm_report,
)
from .convexint import (
    BudgetExhausted,
    StepParams,
    assemble_step,
    equation_residual,
    run_iteration,
    sampled_residual,
)
from .driftdiff import (
    SolveConfig,
    TruncationSchedule,
    commutator_check,
    max_principle_sweep,
    moser_gns_check,
    solve,
    uniqueness_probe,
)
from .mikado import build_family, scaling_report, verify_family
from .oscillation import (
    antidivergence,
    improved_holder_check,
    riemann_lebesgue_check,
)
from .ratefit import fit_loglog
from .seeds import cascade_seed, shifted_cosine_seed
from .torus import (
    MollifierSpec,
    ScalarField,
    TorusGrid,
    VectorField,
    dilate,
    divergence,
    gradient,
    lowpass,
    norm,
    random_scalar,
    random_solenoidal,
    set_fft_workers,
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config parsing and deterministic serialisation

def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(text: str) -> dict:
    out: dict = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        out[key] = _parse_value(val)
    return out


def _canon(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        out.append(format(x, ".12e") if math.isfinite(x) else "null")
    elif isinstance(obj, str):
        import json as _json
        out.append(_json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            _canon(str(key), out)
            out.append(":")
            _canon(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        for i, item in enumerate(seq):
            if i:
                out.append(",")
            _canon(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialise {type(obj)}")


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats in fixed %.12e format,
    non-finite floats mapped to null."""
    out: list = []
    _canon(obj, out)
    return "".join(out)


def write_report(path: Path, obj: dict) -> None:
    path.write_text(canonical_json(obj) + "\n", encoding="utf-8")


def write_csv(path: Path, comment: str, columns: dict) -> None:
    """CSV with a header comment documenting the columns."""
    names = list(columns)
    rows = max((len(v) for v in columns.values()), default=0)
    lines = [f"# {comment}", ",".join(names)]
    for i in range(rows):
        cells = []
        for name in names:
            col = columns[name]
            if i < len(col):
                v = col[i]
                cells.append(format(float(v), ".12e")
                             if isinstance(v, (int, float, np.floating)) else str(v))
            else:
                cells.append("")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _need(cfg: dict, key: str, default=None):
    if key in cfg:
        return cfg[key]
    if default is not None:
        return default
    raise ConfigError(f"missing required config key {key!r}")


def _as_list(v) -> list:
    return v if isinstance(v, list) else [v]


# ---------------------------------------------------------------------------
# experiments

def _exp_mikado_verify(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 64))
    p = float(_need(cfg, "p", 1.5))
    factor = float(_need(cfg, "resolution_factor", 8.0))
    mus = [float(m) for m in _as_list(_need(cfg, "mu", 8.0))]
    grid = TorusGrid(dim=d, n=n)
    families = []
    checks = {}
    for mu in mus:
        fam = build_family(d, p, mu, grid, resolution_factor=factor)
        rep = verify_family(fam)
        families.append({
            "mu": mu,
            "measured_M": rep.measured_M,
            "gamma": fam.gamma,
            "div_field_rel": rep.div_field_rel,
            "div_product_rel": rep.div_product_rel,
            "mean_density": rep.mean_density,
            "mean_field": rep.mean_field,
            "product_integral_err": rep.product_integral_err,
            "cross_disjointness": rep.cross_disjointness,
            "product_l1_sum": rep.product_l1_sum,
            "checks": rep.checks,
        })
        for name, ok in rep.checks.items():
            checks[f"mu{mu:g}_{name}"] = bool(ok)
    report = {"experiment": "mikado-verify", "d": d, "N": n, "p": p,
              "families": families, "checks": checks}
    if "scaling_mu_list" in cfg:
        mu_list = [float(m) for m in _as_list(cfg["scaling_mu_list"])]
        r_list = [float(r) for r in _as_list(_need(cfg, "scaling_r", [1.0, 2.0, 3.0]))]
        k = int(_need(cfg, "scaling_k", 0))
        n_s = int(_need(cfg, "scaling_N", 512))
        fits = []
        for r in r_list:
            sr = scaling_report(d, p, r, k, mu_list, n=n_s, resolution_factor=factor)
            fits.append({"r": r, "k": k, "fitted": sr.fitted, "predicted": sr.predicted,
                         "tolerances": sr.tolerances, "pass": sr.passed})
            checks[f"scaling_r{r:g}"] = bool(sr.passed)
            write_csv(out / f"scaling_r{r:g}.csv",
                      "columns: mu, theta_norm, w_norm, theta_h1 (measured)",
                      {"mu": sr.mu_list, "theta_norm": sr.measured_theta,
                       "w_norm": sr.measured_w, "theta_h1": sr.measured_theta_h1})
        report["scaling"] = fits
    return report


def _exp_osc_verify(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 2))
    n = int(_need(cfg, "N", 256))
    p = float(_need(cfg, "p", 2.0))
    lams = [int(x) for x in _as_list(_need(cfg, "lambda", [4, 8, 16, 32]))]
    cases = int(_need(cfg, "cases", 50))
    grid = TorusGrid(dim=d, n=n)

    rl_pass = 0
    rl_worst = 0.0
    for _ in range(cases):
        f = 1.0 + 0.3 * random_scalar(grid, 3, rng)
        gg = random_scalar(grid, 3, rng)
        rep = riemann_lebesgue_check(f, gg, [3, 9, 27])
        rl_pass += rep.passed
        rl_worst = max(rl_worst, max(m / b for m, b in zip(rep.measured, rep.bound) if b > 0))

    base = random_scalar(grid, 2, rng)
    f_tail = 1.0 + 0.5 * lowpass(ScalarField(grid, np.abs(base.values) ** 3), grid.n // 3)
    g_osc = random_scalar(grid, 3, rng)
    hold = improved_holder_check(f_tail, g_osc, lams, p=p)

    anti_mags = []
    for lam in lams:
        h = f_tail * dilate(g_osc, lam)
        h = h - h.mean
        anti_mags.append(norm(antidivergence(h), p=2))
    anti_rate = fit_loglog(lams, anti_mags)

    checks = {
        "riemann_lebesgue_all_cases": rl_pass == cases,
        "holder_bound": hold.passed,
        "holder_rate": hold.fitted_rate <= -1.0 / p + 0.15,
        "antidivergence_rate": abs(anti_rate + 1.0) <= 0.15,
    }
    write_csv(out / "oscillation_rates.csv",
              "columns: lambda, holder_measured, holder_bound, antidiv_norm",
              {"lambda": lams, "holder_measured": hold.measured,
               "holder_bound": hold.bound, "antidiv_norm": anti_mags})
    return {
        "experiment": "osc-verify", "d": d, "N": n, "p": p,
        "riemann_lebesgue": {"cases": cases, "passed": rl_pass, "worst_ratio": rl_worst},
        "improved_holder": {"lambda": lams, "measured": hold.measured,
                            "bound": hold.bound, "fitted_rate": hold.fitted_rate,
                            "C_p": hold.params["C_p"]},
        "antidivergence": {"lambda": lams, "norms": anti_mags, "fitted_rate": anti_rate},
        "checks": checks,
    }


def _ci_seed(cfg: dict, grid: TorusGrid):
    kind = _need(cfg, "seed_kind", "shifted-cosine")
    if kind == "shifted-cosine":
        return shifted_cosine_seed(grid,
                                   u_amp=float(_need(cfg, "u_amp", 0.5)),
                                   flux_shift=float(_need(cfg, "flux_shift", 2048.0)))
    if kind == "cascade":
        return cascade_seed(grid,
                            u_amp=float(_need(cfg, "u_amp", 0.01)),
                            drift_lp=float(_need(cfg, "drift_lp", 4000.0)),
                            flux_amp=float(_need(cfg, "flux_amp", 16384.0)),
                            p=float(_need(cfg, "p", 1.5)))
    raise ConfigError(f"unknown seed_kind {kind!r}")


def _step_report_dict(rep) -> dict:
    return {
        "delta": rep.params.delta, "lambda": rep.params.lam, "mu": rep.params.mu,
        "mode": rep.params.mode, "r": rep.params.r, "q": rep.params.q,
        "family_M": rep.family_M,
        "f0_l1": rep.f0_l1, "f1_l1": rep.f1_l1,
        "increment_lp": rep.increment_lp,
        "increment_lp_bound": rep.increment_lp_bound,
        "mode_increment": rep.mode_increment,
        "smallness_lhs": rep.smallness_lhs,
        "smallness_target": rep.smallness_target,
        "b_increment_w1q": rep.b_increment_w1q,
        "g_parts": rep.g_parts,
        "theta_c": rep.theta_c, "theta_h1": rep.theta_h1,
        "div_b1_rel": rep.div_b1_rel, "mean_u1_rel": rep.mean_u1_rel,
        "residual_out": rep.residual_out,
    }


def _exp_ci_step(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 128))
    p = float(_need(cfg, "p", 1.5))
    mode = str(_need(cfg, "mode", "W1R"))
    r = float(cfg["r"]) if "r" in cfg else (1.1 if mode.startswith("W1R") else None)
    q = float(cfg["q"]) if "q" in cfg else None
    lam = int(_need(cfg, "lambda", 2))
    mu = float(_need(cfg, "mu", 8.0))
    factor = float(_need(cfg, "resolution_factor", 8.0))
    eps_frac = float(_need(cfg, "eps_frac", 0.25))
    grid = TorusGrid(dim=d, n=n)
    t0 = _ci_seed(cfg, grid)
    eps = eps_frac * t0.f_l1()
    fam = build_family(d, p, mu, TorusGrid(dim=d, n=n // lam), resolution_factor=factor)
    params = StepParams(delta=t0.f_l1() / float(_need(cfg, "delta_divisor", 16)),
                        lam=lam, mu=mu, mode=mode, r=r, q=q)
    t1, rep = assemble_step(t0, params, fam, eps_target=eps)
    resid = equation_residual(t1)
    rep.residual_out = resid
    checks = {
        "increment_bound": rep.increment_ok,
        "smallness": rep.smallness_ok,
        "cutoff_budget": rep.cutoff_part_ok,
        "div_b1": rep.div_b1_rel <= 1e-9,
        "mean_u1": rep.mean_u1_rel <= 1e-10,
    }
    report = {"experiment": "ci-step", "d": d, "N": n, "p": p,
              "step": _step_report_dict(rep),
              "sampled_residual": sampled_residual(t1),
              "checks": checks}
    if bool(_need(cfg, "write_fields", False)):
        report["field_hashes"] = {
            "b": fieldio.write_field(out / "b.bin", t1.b),
            "u": fieldio.write_field(out / "u.bin", t1.u),
            "f": fieldio.write_field(out / "f.bin", t1.f),
        }
    if "refine_N" in cfg:
        n2 = int(cfg["refine_N"])
        grid2 = TorusGrid(dim=d, n=n2)
        t0b = _ci_seed(cfg, grid2)
        fam2 = build_family(d, p, mu, TorusGrid(dim=d, n=n2 // lam),
                            resolution_factor=factor)
        params2 = StepParams(delta=t0b.f_l1() / float(_need(cfg, "delta_divisor", 16)),
                             lam=lam, mu=mu, mode=mode, r=r, q=q)
        t1b, _ = assemble_step(t0b, params2, fam2, eps_target=eps)
        resid2 = equation_residual(t1b)
        report["refinement"] = {"N": n2, "residual": resid2,
                                "factor": resid / max(resid2, 1e-300)}
        checks["residual_refinement"] = resid / max(resid2, 1e-300) >= 4.0
    return report


def _exp_ci_run(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 224))
    p = float(_need(cfg, "p", 1.5))
    mode = str(_need(cfg, "mode", "W1R"))
    r = float(cfg["r"]) if "r" in cfg else (1.1 if mode.startswith("W1R") else None)
    q = float(cfg["q"]) if "q" in cfg else None
    K = int(_need(cfg, "K", 3))
    grid = TorusGrid(dim=d, n=n)
    t0 = _ci_seed(cfg, grid)
    eps = float(_need(cfg, "eps_frac", 0.1)) * norm(t0.b, p=p)
    lam_sched = [int(x) for x in _as_list(cfg["lam_schedule"])] if "lam_schedule" in cfg else None
    mu_sched = [float(x) for x in _as_list(cfg["mu_schedule"])] if "mu_schedule" in cfg else None
    b_fin, u_fin, conv = run_iteration(
        t0.b, t0.u, eps, K, mode=mode, p=p, r=r, q=q,
        resolution_factor=float(_need(cfg, "resolution_factor", 8.0)),
        strict=bool(_need(cfg, "strict", False)),
        seed=t0, lam_schedule=lam_sched, mu_schedule=mu_sched)
    for idx, srep in enumerate(conv.steps, start=1):
        step_dir = out / f"step_{idx}"
        step_dir.mkdir(parents=True, exist_ok=True)
        write_report(step_dir / "report.json", _step_report_dict(srep))
    if bool(_need(cfg, "write_fields", False)):
        fieldio.write_field(out / "b_final.bin", b_fin)
        fieldio.write_field(out / "u_final.bin", u_fin)
    report = {
        "experiment": "ci-run", "d": d, "N": n, "p": p, "mode": mode,
        "r": r, "q": q, "K": K, "eps": eps, "status": conv.status,
        "schedule": conv.schedule,
        "f_history": conv.f_history,
        "u_mode_history": conv.u_mode_history,
        "drift_distance": conv.drift_distance,
        "u_mode_initial": conv.u_mode_initial,
        "u_mode_final": conv.u_mode_final,
        "steps": [_step_report_dict(s) for s in conv.steps],
        "checks": {k: bool(v) for k, v in conv.assertions.items()},
    }
    write_csv(out / "f_history.csv", "columns: step index k, ||f_k||_1",
              {"k": list(range(len(conv.f_history))), "f_l1": conv.f_history})
    return report


def _exp_solve(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 32))
    cases = int(_need(cfg, "cases", 20))
    drift_scale = float(_need(cfg, "drift_scale", 2.0))
    grid = TorusGrid(dim=d, n=n)
    cfg_s = SolveConfig(tol=float(_need(cfg, "tol", 1e-10)))
    errs = []
    energy_defects = []
    for _ in range(cases):
        b = random_solenoidal(grid, 3, rng) * drift_scale
        ustar = random_scalar(grid, 3, rng)
        f = -divergence(gradient(ustar) + b * ustar)
        urec = solve(b, f, cfg_s)
        errs.append(norm(urec - ustar, p=2) / norm(ustar, p=2))
        from .driftdiff import energy_check
        ec = energy_check(urec, b, f)
        energy_defects.append(abs(ec["relative_defect"]))
    checks = {
        "manufactured_recovery": max(errs) <= 1e-8,
        "energy_identity": max(energy_defects) <= 1e-8,
    }
    write_csv(out / "recovery.csv", "columns: case, relative_l2_error, energy_defect",
              {"case": list(range(cases)), "relative_l2_error": errs,
               "energy_defect": energy_defects})
    return {"experiment": "solve", "d": d, "N": n, "cases": cases,
            "max_recovery_error": max(errs), "max_energy_defect": max(energy_defects),
            "checks": checks}


def _exp_maxprinc(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 32))
    count = int(_need(cfg, "drifts", 30))
    span = float(_need(cfg, "scale_span", 100.0))
    grid = TorusGrid(dim=d, n=n)
    f = random_scalar(grid, 3, rng)
    scales = np.logspace(0.0, math.log10(span), count)
    drifts = [random_solenoidal(grid, 3, rng) * float(s) for s in scales]
    table = max_principle_sweep(f, drifts, SolveConfig(tol=float(_need(cfg, "tol", 1e-10))))
    checks = {
        "uniform_bound": bool(table["all_bounded"]),
        "no_upward_trend": bool(table["trend_ok"]),
    }
    write_csv(out / "ratios.csv", "columns: drift L2 norm, sup-norm ratio",
              {"b_l2": [r["b_l2"] for r in table["rows"]],
               "ratio": [r["ratio"] for r in table["rows"]]})
    return {"experiment": "maxprinc", "d": d, "N": n,
            "max_ratio": table["max_ratio"], "bound": table["bound"],
            "trend_slope": table["trend_slope"], "trend_stderr": table["trend_stderr"],
            "checks": checks}


def _exp_moser(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 32))
    k_max = int(_need(cfg, "k_max", 3))
    grid = TorusGrid(dim=d, n=n)
    b = random_solenoidal(grid, 3, rng) * float(_need(cfg, "drift_scale", 3.0))
    f = random_scalar(grid, 3, rng)
    u = solve(b, f, SolveConfig(tol=float(_need(cfg, "tol", 1e-10))))
    rows = moser_gns_check(u, b, f, k_max=k_max)
    k1 = next(row for row in rows if row.get("k") == 1)
    checks = {
        "k1_identity": k1["identity_defect_rel"] <= 1e-6,
        "drift_cancellation": all(
            row["drift_term_power_rel"] <= 1e-8
            for row in rows if row.get("status") == "ok"),
        "gns_bound": all(row["gns_ok"] for row in rows if row.get("status") == "ok"),
    }
    return {"experiment": "moser", "d": d, "N": n, "rows": rows, "checks": checks}


def _exp_commutator(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 2))
    n = int(_need(cfg, "N", 64))
    eps_list = [float(e) for e in _as_list(_need(cfg, "eps", [1/8, 1/16, 1/32, 1/64]))]
    grid = TorusGrid(dim=d, n=n)
    b = random_solenoidal(grid, 3, rng)
    u = random_scalar(grid, 3, rng)
    v = random_scalar(grid, 3, rng)
    m = MollifierSpec(epsilon=float(_need(cfg, "mollifier_eps", 0.125)))
    table = commutator_check(b, u, v, m, eps_list,
                             z_per_axis=int(_need(cfg, "z_per_axis", 21)))
    mom = np.array(table["moment_matrix"])
    sign = -1.0 if mom.trace() < 0 else 1.0
    mom_err = float(np.abs(mom - sign * np.eye(d)).max())
    checks = {
        "decay_rate": table["fitted_rate"] >= 0.8,
        "decayed": bool(table["decayed"]),
        "moment_matrix": mom_err <= 1e-6,
    }
    report = {"experiment": "commutator", "d": d, "N": n,
              "table": {k: v for k, v in table.items() if k != "moment_matrix"},
              "moment_matrix": table["moment_matrix"],
              "moment_sign": sign, "moment_error": mom_err,
              "checks": checks}
    if bool(_need(cfg, "rough_contrast", False)):
        r2 = grid.radius_squared()
        rough_mag = 1.0 / (r2 + float(_need(cfg, "rough_core", 0.02)) ** 2)
        comp = ScalarField(grid, rough_mag)
        rough = VectorField.from_components(
            tuple(comp * random_scalar(grid, 2, rng) for _ in range(d)))
        from .torus import leray_project
        rough = leray_project(rough)
        rough_table = commutator_check(rough, u, v, m, eps_list,
                                       z_per_axis=int(_need(cfg, "z_per_axis", 21)))
        report["rough_contrast"] = {k: v for k, v in rough_table.items()
                                    if k != "moment_matrix"}
    write_csv(out / "commutator.csv", "columns: eps, I(eps), |I(eps)|",
              {"eps": table["eps"], "value": table["value"],
               "magnitude": table["magnitude"]})
    return report


def _exp_counterexample(cfg: dict, out: Path, rng) -> dict:
    n_r = int(_need(cfg, "n_r", 64))
    n_sph = int(_need(cfg, "n_sph", 12))
    pair = make_alpha_beta()
    fs = build_fields(pair, n_r=n_r, n_sph=n_sph)
    ed = energy_defect(fs)
    fl = flux_check(fs)
    ge = grad_energy(fs)
    exact = 64.0 * math.pi / 15.0
    norms = singular_norm_report(pair)
    res = pair.constraint_residuals
    checks = {
        "constraints": max(abs(res["int_beta"]), abs(res["int_alpha_beta"]),
                           abs(res["int_alpha2_beta_plus_2"])) <= 1e-8,
        "grad_energy": abs(ge - exact) / exact <= 1e-5,
        "defect_magnitude": ed["defect_magnitude_err"] <= 1e-3,
        "flux": fl["max_abs"] <= 1e-9,
        "lp_partials_monotone": all(row["monotone_growth"] for row in norms["rows"]),
    }
    report = {
        "experiment": "counterexample",
        "alpha_spec": list(pair.alpha_coeffs),
        "beta_spec": list(pair.beta_coeffs),
        "constraints": res,
        "grad_energy": ge,
        "grad_energy_exact": exact,
        "drift_term": ed["drift_term"],
        "defect": ed["defect"],
        "flux": fl,
        "lp_norms": {f"{row['p']:g}": row["full_graded"] for row in norms["rows"]},
        "lp_partials": norms["rows"],
        "checks": checks,
    }
    for row in norms["rows"]:
        write_csv(out / f"lp_partials_p{row['p']:g}.csv",
                  "columns: inner cutoff delta, partial integral of |b|^p over (delta,1]",
                  {"delta": row["cutoffs"], "partial": row["partial"]})
    return report


def _exp_uniqueness(cfg: dict, out: Path, rng) -> dict:
    d = int(_need(cfg, "d", 3))
    n = int(_need(cfg, "N", 32))
    grid = TorusGrid(dim=d, n=n)
    b = random_solenoidal(grid, 3, rng) * float(_need(cfg, "drift_scale", 3.0))
    f = random_scalar(grid, 3, rng)
    sched_a = TruncationSchedule(levels=(4.0, 8.0, 16.0), mode="lowpass")
    sched_b = TruncationSchedule(
        levels=tuple(float(x) for x in _as_list(_need(cfg, "clamp_levels", [2.0, 5.0, 50.0]))),
        mode="clamp")
    probe = uniqueness_probe(b, f, sched_a, sched_b,
                             SolveConfig(tol=float(_need(cfg, "tol", 1e-10))))
    checks = {"schedule_independence": probe["relative"] <= 1e-6}
    return {"experiment": "uniqueness", "d": d, "N": n,
            "distance_h1": probe["distance_h1"], "relative": probe["relative"],
            "checks": checks}


EXPERIMENTS = {
    "mikado-verify": _exp_mikado_verify,
    "osc-verify": _exp_osc_verify,
    "ci-step": _exp_ci_step,
    "ci-run": _exp_ci_run,
    "solve": _exp_solve,
    "maxprinc": _exp_maxprinc,
    "moser": _exp_moser,
    "commutator": _exp_commutator,
    "counterexample": _exp_counterexample,
    "uniqueness": _exp_uniqueness,
}


def run_experiment(experiment: str, cfg: dict, out_dir: str | Path,
                   seed: int = 0) -> tuple[int, dict]:
    """Execute one experiment; returns (exit_code, report)."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"choose from {sorted(EXPERIMENTS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(seed))
    try:
        report = EXPERIMENTS[experiment](cfg, out, rng)
    except BudgetExhausted as exc:
        report = {"experiment": experiment, "error": "budget_exhausted",
                  "achieved": exc.achieved, "target": exc.target,
                  "checks": {"budget": False}}
        report["seed"] = int(seed)
        write_report(out / "report.json", report)
        return 3, report
    report["seed"] = int(seed)
    report["pass"] = all(report.get("checks", {}).values())
    write_report(out / "report.json", report)
    return (0 if report["pass"] else 1), report


def main(argv=None) -> int:
    workers = os.environ.get("MF_THREADS")
    if workers:
        try:
            set_fft_workers(int(workers))
        except ValueError:
            print(f"ignoring malformed MF_THREADS={workers!r}", file=sys.stderr)

    parser = argparse.ArgumentParser(
        prog="mikado-forge",
        description="Experiment runner for the torus drift-diffusion laboratory")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", type=Path, default=None,
                        help="plain-text key = value configuration file")
    parser.add_argument("--out", type=Path, default=Path("mikado-forge-out"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config.read_text()) if args.config else {}
        seed = int(cfg.get("seed", args.seed))
        out_dir = Path(cfg.get("out_dir", args.out / args.experiment))
        code, report = run_experiment(args.experiment, cfg, out_dir, seed)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    failed = [k for k, v in report.get("checks", {}).items() if not v]
    status = "PASS" if code == 0 else f"FAIL ({', '.join(failed) or report.get('error')})"
    print(f"{args.experiment}: {status} -> {out_dir}/report.json")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
