"""Command line entry point: ``kam-gkdv <command> --config run.json``.

Exit codes: 0 success, 1 a domain check failed, 2 configuration error,
3 missing upstream file, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

log = logging.getLogger("kam_gkdv")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4


class MissingUpstream(RuntimeError):
    pass


class CheckFailed(RuntimeError):
    def __init__(self, reasons):
        super().__init__(", ".join(reasons))
        self.reasons = reasons


# ------------------------------------------------------------------ helpers

def _write_json(path: Path, data: dict, cfg_hash: str) -> Path:
    body = {"config_hash": cfg_hash, **data}
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    import numpy as np
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (set, tuple)):
        return list(obj)
    return str(obj)


def _load_upstream(out: Path, name: str, cfg_hash: str) -> dict:
    path = out / name
    if not path.exists():
        raise MissingUpstream(f"{path} not found; run the upstream command first")
    data = json.loads(path.read_text())
    if data.get("config_hash") != cfg_hash:
        raise ValueError(f"{path} was produced with a different configuration")
    return data


def _gnuplot(path: Path, csv_name: str, using: str, title: str, logscale: str = "") -> Path:
    lines = ["set datafile separator ','", f"set title '{title}'"]
    if logscale:
        lines.append(f"set logscale {logscale}")
    lines.append(f"plot '{csv_name}' every ::1 using {using} with linespoints notitle")
    path.write_text("\n".join(lines) + "\n")
    return path


def _update_manifest(path: Path, cfg_hash: str, entry: dict) -> None:
    """One entry per command; a manifest from another configuration is replaced."""
    runs = {}
    if path.exists():
        try:
            old = json.loads(path.read_text())
            if old.get("config_hash") == cfg_hash:
                runs = old.get("runs", {})
        except json.JSONDecodeError:
            pass
    runs[entry["command"]] = entry
    body = {"config_hash": cfg_hash, "runs": runs}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands

def cmd_check_sites(cfg, out: Path, args) -> list:
    from .frequency import (check_C1_C2, check_H1_H2, check_resonant_coeffs, exact_det,
                            exact_twist_matrix)
    from .normal_form import check_hypothesis_S, check_S0_S1

    requested = set(args.checks.split(",")) if args.checks else \
        {"S", "S0S1", "resonant", "det", "H1", "H2"}
    allowed = {"S", "S0S1", "resonant", "C1", "C2", "det", "H1", "H2"}
    if requested - allowed:
        raise ValueError(f"unknown checks {sorted(requested - allowed)}")
    sites, c = cfg.sites, cfg.coeffs
    report, reasons = {}, []
    hyp = check_hypothesis_S(sites)
    report["S"] = {"holds": hyp.holds, "witnesses": hyp.witnesses}
    report["S0S1"] = {"holds": check_S0_S1(sites)}
    resonant = check_resonant_coeffs(c)
    report["resonant"] = {"resonant_coefficients": resonant}
    report["C1C2"] = check_C1_C2(c, sites.nu)
    det = exact_det(exact_twist_matrix(c, sites))
    report["det"] = {"exact": str(det), "nonzero": det != 0}
    J = cfg.trunc["J"]
    if det != 0:
        pairs = [(j, k) for j in range(-J, J + 1) for k in range(-J, J + 1)
                 if j and k and j != k and j not in sites and k not in sites]
        h = check_H1_H2(c, sites, pairs)
        failed = [list(p) for p, ok in h["H2"].items() if not ok]
        report["H1"] = {"holds": h["H1"], "d_at_omega_bar": h["d_at_omega_bar"]}
        report["H2"] = {"holds": not failed, "failing_pairs": failed, "J": J}
    else:
        report["H1"] = {"holds": False, "reason": "twist matrix singular"}
        report["H2"] = {"holds": False, "reason": "twist matrix singular"}
    if "S" in requested and not hyp.holds:
        reasons.append("hypothesis-S")
    if "S0S1" in requested and not report["S0S1"]["holds"]:
        reasons.append("quintic-resonances")
    if "resonant" in requested and resonant:
        reasons.append("resonant-coefficients")
    if "C1" in requested and not report["C1C2"]["C1"]:
        reasons.append("C1")
    if "C2" in requested and not report["C1C2"]["C2"]:
        reasons.append("C2")
    if "det" in requested and det == 0:
        reasons.append("singular-twist")
    if "H1" in requested and not report["H1"]["holds"]:
        reasons.append("H1")
    if "H2" in requested and not report["H2"]["holds"]:
        reasons.append("H2")
    report["requested"] = sorted(requested)
    report["passed"] = not reasons
    report["reasons"] = reasons
    path = _write_json(out / "sites-certificate.json", report, cfg.hash())
    if reasons:
        raise CheckFailed(reasons)
    return [path]


def cmd_normal_form(cfg, out: Path, args) -> list:
    from .normal_form import (check_hypothesis_S, closed_form_quartic, quartic_discrepancies,
                              weak_normal_form)

    if not check_hypothesis_S(cfg.sites).holds:
        raise CheckFailed(["hypothesis-S"])
    nf = weak_normal_form(cfg.coeffs, cfg.sites)
    q = nf.quartic
    report = {"diagnostics": nf.diagnostics,
              "quartic_diag": {str(j): v for j, v in q.diag.items()},
              "quartic_cross": {f"{j},{k}": v for (j, k), v in q.cross.items()},
              "F3_terms": len(nf.F3.F), "F4_terms": len(nf.F4.F),
              "F5_terms": len(nf.F5.F) if nf.F5 else None,
              "closed_form_discrepancies": quartic_discrepancies(
                  q, closed_form_quartic(cfg.coeffs, cfg.sites, ordered_cross=True))}
    return [_write_json(out / "bnf-report.json", report, cfg.hash())]


def cmd_frequencies(cfg, out: Path, args) -> list:
    import numpy as np
    from .frequency import (closed_form_twist, frequency_of_amplitude, spectral_constants,
                            twist_matrices)
    from .normal_form import weak_normal_form

    nf = weak_normal_form(cfg.coeffs, cfg.sites)
    tw = twist_matrices(nf.quartic, cfg.sites, cfg.coeffs)
    cf = closed_form_twist(cfg.coeffs, cfg.sites)
    xi = np.array(cfg.require_xi())
    report = {"M": tw.M, "A": tw.A, "det_M": tw.det_M, "det_M_exact": str(tw.exact_det),
              "condition": tw.condition, "closed_form_M": cf.M,
              "closed_form_minus_pipeline": cf.M - tw.M, "xi": xi}
    if tw.exact_det != 0:
        sc = spectral_constants(cfg.coeffs, cfg.sites, xi)
        report["d_xi"], report["c_xi"] = sc.d_xi, sc.c_xi
        report["omega"] = {str(e): frequency_of_amplitude(xi, tw, cfg.sites, e)
                           for e in cfg.ladder()}
    path = _write_json(out / "frequencies.json", report, cfg.hash())
    if tw.exact_det == 0:
        raise CheckFailed(["singular-twist"])
    return [path]


def _build(cfg, eps, level):
    import numpy as np
    from .normal_form import weak_normal_form
    from .torus import build_approximate_torus
    nf = weak_normal_form(cfg.coeffs, cfg.sites)
    return build_approximate_torus(cfg.coeffs, cfg.sites, np.array(cfg.require_xi()), eps,
                                   level, nf=nf)


def cmd_build(cfg, out: Path, args) -> list:
    from .frequency import SingularTwistError
    from .torus import torus_to_dict
    eps = cfg.require_eps()
    paths = []
    try:
        for level in ("naive", "bnf"):
            t = _build(cfg, eps, level)
            paths.append(_write_json(out / f"torus-{level}.json", torus_to_dict(t), cfg.hash()))
    except SingularTwistError:
        raise CheckFailed(["singular-twist"])
    return paths


def cmd_residual(cfg, out: Path, args) -> list:
    from .torus import fit_slope, residual_functional
    ladder = cfg.ladder()
    rows, report = [], {"levels": {}}
    for level in ("naive", "bnf"):
        norms = []
        for eps in ladder:
            r = residual_functional(_build(cfg, eps, level))
            norms.append(r)
            rows.append((level, eps, r["l2"], r["sup"]))
        entry = {"eps": ladder, "norms": norms}
        if len(ladder) > 1:
            entry["slope_l2"] = fit_slope(ladder, [n["l2"] for n in norms])
            entry["slope_sup"] = fit_slope(ladder, [n["sup"] for n in norms])
        report["levels"][level] = entry
    path = _write_json(out / "residual.json", report, cfg.hash())
    csv_path = out / "residual.csv"
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("level,eps,l2,sup\n")
        for level, eps, l2, sup in rows:
            fh.write(f"{level},{eps!r},{l2!r},{sup!r}\n")
    gp = _gnuplot(out / "residual.gp", "residual.csv", "2:3", "residual vs eps", "xy")
    return [path, csv_path, gp]


def cmd_refine(cfg, out: Path, args) -> list:
    from .torus import refine_torus_newton, torus_from_dict, torus_to_dict
    t = torus_from_dict(_load_upstream(out, "torus-bnf.json", cfg.hash()))
    r = refine_torus_newton(t, L=cfg.trunc["L"], J=cfg.trunc["J"])
    return [_write_json(out / "torus-refined.json", torus_to_dict(r), cfg.hash())]


def cmd_simulate(cfg, out: Path, args) -> list:
    from .simulation import SimConfig, shadow_torus
    from .torus import torus_from_dict

    t = torus_from_dict(_load_upstream(out, "torus-refined.json", cfg.hash()))
    s = cfg.simulation
    T = s["T"] if s["T"] is not None else 1.0 / t.eps
    sim = SimConfig(M=cfg.trunc["M"], dt=float(s["dt"]), T=float(T),
                    integrator=s["integrator"], save_every=int(s["save_every"]))
    traj, dev = shadow_torus(t, sim)
    csv_path = out / "trajectory.csv"
    traj.write_csv(csv_path)
    report = {"energy_drift": traj.energy_drift, "momentum_drift": traj.momentum_drift,
              "action_drift": traj.action_drift(cfg.sites.positive_sites),
              "shadowing_sup_deviation": dev, "T": T, "dt": sim.dt, "M": sim.M,
              "integrator": sim.integrator}
    return [_write_json(out / "simulate.json", report, cfg.hash()), csv_path]


def _floquet_for(cfg, torus, out: Path, tag: str = "") -> list:
    from .floquet import (assemble_linearized, fit_bands, fit_exponents, floquet_exponents,
                          hamiltonian_defect, reduced_constants)
    L, J = cfg.trunc["L_op"], cfg.trunc["J_op"]
    op = assemble_linearized(torus, L, J)
    spec = floquet_exponents(op)
    margin, low = fit_bands(cfg.sites, J)
    fit = fit_exponents(spec, J, margin, low)
    rc = reduced_constants(torus)
    eps = torus.eps
    report = {"eps": eps, "L": L, "J": J, "dimension": op.dimension,
              "fit_m3": fit["m3"], "fit_m1": fit["m1"], "fit_j": fit["j"],
              "max_real_interior": fit["max_real"],
              "reduced_m3": rc.m3, "reduced_m1": rc.m1,
              "predicted_m3": rc.predicted_m3, "predicted_m1": rc.predicted_m1,
              "hamiltonian_defect": hamiltonian_defect(op),
              "unreliable": sorted(spec.unreliable)}
    if eps > 0:
        d_pred = (rc.predicted_m3 - 1) / eps**2
        c_pred = rc.predicted_m1 / eps**2
        report["rel_error_m3"] = abs((fit["m3"] - 1) / eps**2 - d_pred) / abs(d_pred) if d_pred else None
        report["rel_error_m1"] = abs(fit["m1"] / eps**2 - c_pred) / abs(c_pred) if c_pred else None
    sub = out / tag if tag else out
    sub.mkdir(parents=True, exist_ok=True)
    csv_path = sub / "floquet.csv"
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("j,re_mu,im_mu,localization\n")
        for j in sorted(spec.mu):
            mu = spec.mu[j]
            fh.write(f"{j},{mu.real!r},{mu.imag!r},{spec.localization[j]!r}\n")
    gp = _gnuplot(sub / "floquet.gp", "floquet.csv", "1:3", "Im mu_j")
    return [_write_json(sub / "floquet-fit.json", report, cfg.hash()), csv_path, gp]


def cmd_floquet(cfg, out: Path, args) -> list:
    from .torus import refine_torus_newton, torus_from_dict
    if args.eps_ladder:
        paths = []
        for eps in cfg.ladder():
            t = refine_torus_newton(_build(cfg, eps, "bnf"), L=cfg.trunc["L"], J=cfg.trunc["J"])
            paths += _floquet_for(cfg, t, out, f"eps_{eps:g}")
        return paths
    t = torus_from_dict(_load_upstream(out, "torus-refined.json", cfg.hash()))
    return _floquet_for(cfg, t, out)


def cmd_measure(cfg, out: Path, args) -> list:
    from .measure import estimate_cantor_fraction, write_measure_csv, write_violations
    m = cfg.measure
    res = estimate_cantor_fraction(cfg.coeffs, cfg.sites, cfg.ladder(), cfg.a, cfg.tau_value,
                                   L=cfg.trunc["L_measure"], J=cfg.trunc["J_measure"],
                                   n_samples=int(m["n_samples"]), seed=cfg.seed,
                                   gamma_scale=float(m["gamma_scale"]))
    csv_path = out / "measure.csv"
    write_measure_csv(csv_path, res["rows"])
    jsonl = out / "violations.jsonl"
    jsonl.write_text("")
    for eps, s in res["samples"].items():
        tmp = out / ".violations.part"
        write_violations(tmp, s)
        with open(jsonl, "a") as fh:
            fh.write(tmp.read_text())
        tmp.unlink()
    gp = _gnuplot(out / "measure.gp", "measure.csv", "1:(1-$5)", "excluded fraction", "xy")
    report = {"rows": res["rows"], "fitted_exponent": res["fitted_exponent"], "a": cfg.a,
              "tau": cfg.tau_value, "model": "closed_form",
              "model_note": "r_j corrections omitted from the closed-form exponents"}
    return [_write_json(out / "measure.json", report, cfg.hash()), csv_path, jsonl, gp]


COMMANDS = {
    "check-sites": cmd_check_sites, "normal-form": cmd_normal_form,
    "frequencies": cmd_frequencies, "build": cmd_build, "residual": cmd_residual,
    "refine": cmd_refine, "simulate": cmd_simulate, "floquet": cmd_floquet,
    "measure": cmd_measure,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kam-gkdv",
                                description="Quasi-periodic tori of quasi-linear gKdV equations")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--eps", type=float, help="override eps")
    p.add_argument("--seed", type=int, help="override the random seed")
    p.add_argument("--threads", type=int, help="thread count for the linear algebra backend")
    p.add_argument("--eps-ladder", action="store_true",
                   help="floquet: run every eps of the ladder")
    p.add_argument("--checks", help="check-sites: comma list among S,S0S1,resonant,C1,C2,det,H1,H2")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .config import ConfigError, load_config, parse_config
    try:
        cfg = load_config(args.config)
        overrides = {"eps": args.eps, "seed": args.seed}
        if any(v is not None for v in overrides.values()):
            raw = dict(cfg.raw)
            raw.update({k: v for k, v in overrides.items() if v is not None})
            cfg = parse_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    code, paths, reasons = EXIT_OK, [], []
    from .floquet import DegeneracyError
    from .model import ResolutionError
    from .normal_form import HypothesisError
    from .torus import NewtonError
    try:
        paths = COMMANDS[args.command](cfg, out, args)
    except CheckFailed as exc:
        code, reasons = EXIT_CHECK, exc.reasons
    except (HypothesisError, DegeneracyError) as exc:
        code, reasons = EXIT_CHECK, [str(exc)]
    except MissingUpstream as exc:
        code, reasons = EXIT_MISSING, [str(exc)]
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, ResolutionError):
            code = EXIT_NUMERIC
        else:
            code = EXIT_CONFIG
        reasons = [str(exc)]
    except (NewtonError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        code, reasons = EXIT_NUMERIC, [str(exc)]
    import numpy
    import scipy
    from . import __version__
    manifest = {"command": args.command, "config_hash": cfg.hash(), "exit_code": code,
                "reasons": reasons, "outputs": [p.name for p in paths if p is not None],
                "wall_time_s": round(time.time() - start, 3),
                "versions": {"kam_gkdv": __version__, "numpy": numpy.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()},
                "threads": args.threads}
    _update_manifest(out / "manifest.json", cfg.hash(), manifest)
    if reasons:
        print("; ".join(reasons), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
