"""
Command-line front end.

    beamjump simulate|ensemble|verify|picard-compare
             (--config FILE | --preset NAME) [--seed N] [--out DIR]
             [--paths N] [--dt DT]

Exit codes: 0 ok, 2 configuration error, 3 solver fault, 4 check violation,
5 Picard non-convergence. The output directory defaults to ``$BEAMJUMP_OUT``
and then to ``./beamjump-out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import config as cfgmod
from .ensemble_harness import (CheckReport, combine_levels, khasminskii_check, run_ensemble,
                               stability_check, supermartingale_check, write_curves,
                               write_report)
from .errors import ConfigError, NumericalError, PicardError
from .jump_noise import PoissonRealization, sample_realization
from .lyapunov import POperator, lambda_window
from .pathwise_solver import integrate_path
from .presets import PRESETS, get_preset
from .verification import (conservation_check, convolution_suite, identity_suite,
                           isometry_check, picard_compare)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK, EXIT_PICARD = 0, 2, 3, 4, 5
ENV_OUT = "BEAMJUMP_OUT"


def _parser():
    p = argparse.ArgumentParser(prog="beamjump", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "ensemble", "verify", "picard-compare"):
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="INI run configuration")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--paths", type=int)
        s.add_argument("--dt", type=float)
    return p


def _load(args):
    cfg = cfgmod.load(args.config) if args.config else get_preset(args.preset)
    return cfg.with_overrides(args.seed, args.out, args.paths, args.dt)


def _outdir(cfg):
    d = cfg.run.output_dir or os.environ.get(ENV_OUT) or "beamjump-out"
    os.makedirs(d, exist_ok=True)
    return d


def _provenance(cfg, command):
    return {"config_sha256": cfgmod.config_hash(cfg), "seed": cfg.run.seed,
            "command": command, "config_name": cfg.name}


def _finish(outdir, cfg, command, checks, extra_meta=None):
    prov = _provenance(cfg, command)
    meta = dict(prov, **(extra_meta or {}))
    write_report(os.path.join(outdir, "report.json"), checks, meta)
    write_curves(os.path.join(outdir, "curves.csv"), checks, prov)
    failed = [c for c in checks if c.violated]
    _write_manifest(outdir, cfg, prov, ["report.json", "curves.csv"],
                    "fail" if failed else "ok")
    for c in checks:
        print(f"{c.name}: {c.status}" + (f" ({c.reason})" if c.reason else ""))
    return EXIT_CHECK if failed else EXIT_OK


def _write_manifest(outdir, cfg, prov, files, status):
    with open(os.path.join(outdir, "config.ini"), "w") as fh:
        fh.write(cfgmod.emit(cfgmod.portable(cfg)))
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump({**prov, "files": sorted(set(files) | {"config.ini"}), "status": status},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(cfg):
    b = cfgmod.build(cfg)
    a0, b0 = b.u0.sample(b.basis, 1, cfg.run.seed)
    u0 = b.basis.state(a0[0], b0[0])
    rz = sample_realization(b.nu, b.solver.T, cfg.run.seed, 0) if b.nu is not None \
        else PoissonRealization.empty(b.solver.T)
    tr = integrate_path(u0, rz, b.spec, b.nu, b.solver)
    outdir = _outdir(cfg)
    prov = _provenance(cfg, "simulate")
    tr.write(os.path.join(outdir, "trajectory.csv"), b.spec.nl, b.spec.beta, **prov)
    _write_manifest(outdir, cfg, prov, ["trajectory.csv", "trajectory.json"],
                    "exploded" if tr.exploded else "ok")
    if tr.exploded:
        print(f"solver fault: norm exceeded {b.solver.N_cap:g} at t={tr.t[-1]:.6g}",
              file=sys.stderr)
        return EXIT_SOLVER
    print(f"trajectory: {tr.t.size} points, final norm {tr.h_norms()[-1]:.6g}")
    return EXIT_OK


def _ensemble_checks(cfg, dt):
    b = cfgmod.build(cfg, dt=dt)
    h = cfg.harness
    spec, nl = b.spec, b.spec.nl
    P = POperator(spec.beta, b.basis)
    R_g = spec.constants.R_g or 0.0
    lw = lambda_window(spec.beta, b.basis.mu1, R_g, nl.alpha, P) if spec.beta > 0 else 0.0
    lam = h.lambda_factor * lw
    stats = run_ensemble(spec, b.nu, b.u0, b.solver, h.paths, cfg.run.seed, h.output_dt,
                         h.levels, lam)
    out = {}
    if "khasminskii" in h.checks:
        out["khasminskii"] = khasminskii_check(stats, spec, list(h.levels), b.nu)
    if "stability" in h.checks:
        out["stability"] = stability_check(stats, spec, P, nl, h.lambda_factor, h.fit_window)
    if "supermartingale" in h.checks:
        if (spec.constants.K or 0.0) > 0:
            out["supermartingale"] = CheckReport("supermartingale", "skipped",
                                                 "requires K = 0")
        elif lw <= 0:
            out["supermartingale"] = CheckReport("supermartingale", "inapplicable",
                                                 "theorem inapplicable: lambda window is empty")
        else:
            out["supermartingale"] = supermartingale_check(stats)
    return stats, out


def cmd_ensemble(cfg):
    h = cfg.harness
    dts = [cfg.solver.dt] if h.dt_levels == 1 else [cfg.solver.dt, cfg.solver.dt / 2]
    per_level = []
    explosions = []
    for dt in dts:
        stats, checks = _ensemble_checks(cfg, dt)
        per_level.append(checks)
        explosions.append(stats.explosion_count)
    names = list(per_level[0])
    if len(dts) == 1:
        checks = [per_level[0][n] for n in names]
    else:
        checks = [combine_levels(n, [lvl[n] for lvl in per_level]) for n in names]
    if stats.degenerate:
        print("degenerate ensemble: fewer than 2 paths, confidence intervals undefined")
    outdir = _outdir(cfg)
    meta = {"dt_levels": dts, "explosions": explosions, "n_paths": h.paths,
            "summary": stats.summary()}
    code = _finish(outdir, cfg, "ensemble", checks, meta)
    if any(explosions):
        print(f"solver fault: {sum(explosions)} exploded paths", file=sys.stderr)
        return EXIT_SOLVER
    return code


def cmd_verify(cfg):
    b = cfgmod.build(cfg)
    checks = [identity_suite(b.spec, 1000, cfg.run.seed)]
    noise_free = b.nu is None
    if noise_free and b.spec.drift.kind == "zero":
        a0, b0 = b.u0.sample(b.basis, 1, cfg.run.seed)
        checks.append(conservation_check(b.spec, b.basis.state(a0[0], b0[0]), b.solver))
    if not noise_free:
        checks.append(convolution_suite(b.spec, b.nu, b.solver.T, 100, cfg.run.seed))
        x = b.basis.zero()
        if not b.spec.jump.state_independent:
            a0, b0 = b.u0.sample(b.basis, 1, cfg.run.seed)
            x = b.basis.state(a0[0], b0[0])
        checks.append(isometry_check(b.spec, b.nu, x, b.solver.T, cfg.harness.isometry_samples,
                                     cfg.run.seed))
    return _finish(_outdir(cfg), cfg, "verify", checks)


def cmd_picard_compare(cfg):
    b = cfgmod.build(cfg)
    if b.spec.R_trunc is None:
        raise ConfigError("model.r_trunc", "picard-compare needs a truncation radius")
    a0, b0 = b.u0.sample(b.basis, 1, cfg.run.seed)
    u0 = b.basis.state(a0[0], b0[0])
    rep = picard_compare(b.spec, b.nu, u0, b.solver, list(cfg.solver.picard_dt_grid),
                         cfg.run.seed)
    outdir = _outdir(cfg)
    prov = _provenance(cfg, "picard-compare")
    with open(os.path.join(outdir, "comparison.csv"), "w") as fh:
        fh.write("".join(f"# {k}: {v}\n" for k, v in sorted(prov.items())))
        fh.write("dt,gap,order,iterations,measured_ratio,factor\n")
        for row in rep.points:
            od = row.get("order")
            fh.write(f"{row['dt']!r},{row['gap']!r},{'' if od is None else repr(od)},"
                     f"{row['iterations']},{row['measured_ratio']!r},{row['factor']!r}\n")
    for row in rep.points:
        od = row.get("order")
        print(f"dt={row['dt']:<8g} gap={row['gap']:.3e} "
              f"order={'-' if od is None else format(od, '.3f')} "
              f"iterations={row['iterations']} ratio={row['measured_ratio']:.4f} "
              f"factor={row['factor']:.4f}")
    write_report(os.path.join(outdir, "report.json"), [rep], prov)
    _write_manifest(outdir, cfg, prov, ["comparison.csv", "report.json"], rep.status)
    return EXIT_OK if rep.status == "pass" else EXIT_CHECK


COMMANDS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble, "verify": cmd_verify,
            "picard-compare": cmd_picard_compare}


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PicardError as exc:
        print(f"Picard failure: {exc}", file=sys.stderr)
        print(f"contraction factor (sqrt(T) L_f + L_g) / (2 lambda) = {exc.factor:.6g}"
              + (" > 1/2" if exc.factor > 0.5 else ""), file=sys.stderr)
        return EXIT_PICARD
    except NumericalError as exc:
        print(f"solver fault: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
