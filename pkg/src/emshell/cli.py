"""Command-line driver.

Heavy imports happen inside command handlers so --threads can cap the BLAS
pools before numpy loads. Every command writes its artifacts atomically
(tmp + rename) and drops a FAILED marker into the output directory when it
aborts, so partial runs are never mistaken for complete ones.
"""

import argparse
import json
import os
import sys


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="emshell",
        description="electromagnetic scattering from a conducting obstacle"
                    " in a dielectric shell: forward solves, far fields,"
                    " low-frequency verification, inverse experiments")
    ap.add_argument("command", choices=[
        "mesh", "solve", "farfield", "verify-lowfreq", "discriminate",
        "recover", "oracle-check"])
    ap.add_argument("--config", help="path to the JSON run configuration")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None,
                    help="cap BLAS/OpenMP thread pools")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for stochastic steps (noise models)")
    ap.add_argument("--refinement", type=int, default=None,
                    help="override both surface refinement levels")
    ap.add_argument("--freq", default=None,
                    help="override frequencies (comma-separated)")
    return ap.parse_args(argv)


def _write_atomic(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _load_config(args):
    from .config import RunConfig
    from .errors import ConfigError
    if not args.config:
        raise ConfigError("--config is required for this command")
    if not os.path.exists(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    with open(args.config) as f:
        cfg = RunConfig.parse(f.read())
    for note in cfg.normalization_report:
        print(f"note: {note}")
    if args.refinement is not None:
        cfg.obstacle_refinement = args.refinement
        cfg.domain_refinement = args.refinement
    if args.freq:
        cfg.frequencies = sorted(float(x) for x in args.freq.split(","))
    return cfg


def _build_scene(cfg):
    from .forward import ForwardModel
    obstacle, domain, shell = cfg.build_meshes()
    material = cfg.build_material(shell, obstacle)
    model = ForwardModel(obstacle=obstacle, shell=shell)
    return model, material, domain


def cmd_mesh(args):
    from .geometry import write_off, write_tet
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    obstacle, domain, shell = cfg.build_meshes()
    stats = {}
    if obstacle is not None:
        write_off(obstacle, os.path.join(args.out, "obstacle.off"))
        stats["obstacle"] = {"vertices": obstacle.num_vertices,
                             "triangles": obstacle.num_triangles,
                             "area": obstacle.total_area}
    if domain is not None:
        write_off(domain, os.path.join(args.out, "domain.off"))
        stats["domain"] = {"vertices": domain.num_vertices,
                           "triangles": domain.num_triangles,
                           "area": domain.total_area}
    if shell is not None:
        write_tet(shell, os.path.join(args.out, "shell.tet"))
        stats["shell"] = {"cells": shell.num_cells,
                          "volume": shell.total_volume}
    from .config import canonical_dumps
    _write_atomic(os.path.join(args.out, "mesh_stats.json"),
                  canonical_dumps(stats) + "\n")
    print(json.dumps(stats))
    return 0


def cmd_solve(args):
    from .config import canonical_dumps
    from .forward import PlaneWave, assemble_and_solve
    from .kernels import Wavenumber
    cfg = _load_config(args)
    model, material, _ = _build_scene(cfg)
    os.makedirs(args.out, exist_ok=True)
    diags = []
    for f in cfg.frequencies:
        wave = PlaneWave(cfg.direction, cfg.polarization,
                         Wavenumber(f, cfg.eps0, cfg.mu0))
        sol = assemble_and_solve(material, wave, model, tol=cfg.solver_tol)
        entry = {"omega": f, "residual": sol.residual,
                 "iterations": sol.iterations}
        if model.obstacle is not None:
            entry["pec_trace_residual"] = sol.pec_trace_residual()
        diags.append(entry)
        print(json.dumps(entry))
    _write_atomic(os.path.join(args.out, "solve_diagnostics.json"),
                  canonical_dumps({"solves": diags}) + "\n")
    return 0


def cmd_farfield(args):
    from .forward import (DirectionGrid, PlaneWave, assemble_and_solve,
                          write_far_field_csv)
    from .kernels import Wavenumber
    cfg = _load_config(args)
    model, material, _ = _build_scene(cfg)
    os.makedirs(args.out, exist_ok=True)
    grid = DirectionGrid(cfg.farfield_n_theta)
    patterns = []
    for f in cfg.frequencies:
        wave = PlaneWave(cfg.direction, cfg.polarization,
                         Wavenumber(f, cfg.eps0, cfg.mu0))
        sol = assemble_and_solve(material, wave, model, tol=cfg.solver_tol)
        patterns.append(sol.far_field(grid))
    tmp = os.path.join(args.out, "farfield.csv.tmp")
    write_far_field_csv(tmp, patterns)
    os.replace(tmp, os.path.join(args.out, "farfield.csv"))
    print(f"wrote {len(patterns)} patterns to farfield.csv")
    return 0


def cmd_verify_lowfreq(args):
    from .config import canonical_dumps
    from .lowfreq import StaticOperatorContext, remainder_report
    import numpy as np
    cfg = _load_config(args)
    model, material, _ = _build_scene(cfg)
    os.makedirs(args.out, exist_ok=True)
    ctx = StaticOperatorContext(model, material)
    rng = np.random.default_rng(args.seed)
    summary = {}
    checks = []

    if model.shell is not None and model.boundary is not None:
        field = rng.normal(size=(model.shell.num_cells, 3))
        k2 = ctx.magnetic_feedback_residual(field)
        from .densities import VolumeField
        rel = k2.l2_norm() / max(VolumeField(model.shell, field).l2_norm(),
                                 1e-300)
        summary["magnetic_feedback_residual"] = rel
        checks.append(("magnetic feedback annihilation", rel <= 1e-2))

    if model.boundary is not None:
        import numpy as np
        p = np.asarray(cfg.polarization, dtype=float)
        c2 = ctx.obstacle_magnetic_response(
            lambda x: np.broadcast_to(p, np.atleast_2d(x).shape),
            lambda x: np.zeros_like(np.atleast_2d(x)))
        r = model.obstacle.diameter()
        from .forward import DirectionGrid
        cloud = 0.7 * r * DirectionGrid(4).points
        resid = float(np.linalg.norm(c2(cloud), axis=1).max()
                      * material.mu0 / np.linalg.norm(p))
        summary["constant_magnetic_response"] = resid
        checks.append(("constant magnetic response annihilation",
                       resid <= 1e-2))

    if model.shell is not None and len(cfg.frequencies) >= 3:
        rep = remainder_report(ctx, model, material, cfg.direction,
                               cfg.polarization, cfg.frequencies[:5])
        _write_atomic(os.path.join(args.out, "asymptotics.txt"),
                      rep.serialize())
        summary["order_fit_E"] = rep.order_r1.exponent
        summary["order_fit_H"] = rep.order_r2.exponent
        checks.append(("electric remainder order in [1.8, 2.2]",
                       rep.order_r1.annihilated
                       or 1.8 <= rep.order_r1.exponent <= 2.2))
        checks.append(("magnetic remainder order in [0.8, 1.2]",
                       rep.order_r2.annihilated
                       or 0.8 <= rep.order_r2.exponent <= 1.2))

    summary["checks"] = [{"name": n, "passed": bool(ok)} for n, ok in checks]
    _write_atomic(os.path.join(args.out, "verify_lowfreq.json"),
                  canonical_dumps(summary) + "\n")
    ok_all = all(ok for _, ok in checks)
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if ok_all else 1


def cmd_discriminate(args):
    from .config import canonical_dumps, ShapeSpec
    from .forward import DirectionGrid, ForwardModel
    from .geometry import generate_shell_volume_mesh
    from .inverse import dataset_discrepancy, generate_dataset
    from .errors import ConfigError
    cfg = _load_config(args)
    if cfg.compare is None:
        raise ConfigError("discriminate requires a 'compare' block")
    model_a, material_a, _ = _build_scene(cfg)
    grid = DirectionGrid(cfg.farfield_n_theta)
    data_a = generate_dataset(model_a, material_a, cfg.frequencies,
                              cfg.direction, cfg.polarization, grid,
                              description={"label": "primary"})
    # alternative configuration
    alt = cfg.compare
    obstacle_b = (ShapeSpec.parse(alt["obstacle"], "compare.obstacle")
                  if "obstacle" in alt else cfg.obstacle)
    domain_b = (ShapeSpec.parse(alt["domain"], "compare.domain")
                if "domain" in alt else cfg.domain)
    ob = obstacle_b.build(cfg.obstacle_refinement)
    dm = domain_b.build(cfg.domain_refinement)
    shell_b = None if dm is None else generate_shell_volume_mesh(
        dm, ob, cfg.cell_size)
    model_b = ForwardModel(obstacle=ob, shell=shell_b)
    if "eps" in alt:
        import copy
        cfg_b = copy.deepcopy(cfg)
        cfg_b.eps_spec = ({"type": "constant", "value": float(alt["eps"])}
                          if not isinstance(alt["eps"], dict) else alt["eps"])
        material_b = cfg_b.build_material(shell_b, ob)
    else:
        material_b = cfg.build_material(shell_b, ob)
    data_b = generate_dataset(model_b, material_b, cfg.frequencies,
                              cfg.direction, cfg.polarization, grid,
                              description={"label": "alternative"})
    # noise floor: primary configuration on refined meshes
    obstacle_f, domain_f, shell_f = cfg.build_meshes(
        obstacle_refinement=cfg.obstacle_refinement + 1,
        domain_refinement=cfg.domain_refinement + 1)
    model_f = ForwardModel(obstacle=obstacle_f, shell=shell_f)
    material_f = cfg.build_material(shell_f, obstacle_f)
    data_f = generate_dataset(model_f, material_f, cfg.frequencies,
                              cfg.direction, cfg.polarization, grid,
                              description={"label": "floor"})
    report = dataset_discrepancy(data_a, data_b, floor=data_f)
    os.makedirs(args.out, exist_ok=True)
    data_a.save(os.path.join(args.out, "dataset_primary"))
    data_b.save(os.path.join(args.out, "dataset_alternative"))
    _write_atomic(os.path.join(args.out, "discrepancy.json"),
                  canonical_dumps(report.to_dict()) + "\n")
    print(json.dumps(report.to_dict()))
    return 0 if report.verdict == "distinct" else 1


def cmd_recover(args):
    from .config import canonical_dumps
    from .forward import DirectionGrid
    from .inverse import generate_dataset, recover_constant_permittivity
    from .errors import ConfigError
    cfg = _load_config(args)
    if cfg.recovery is None:
        raise ConfigError("recover requires a 'recovery' block")
    model, material, _ = _build_scene(cfg)
    grid = DirectionGrid(cfg.farfield_n_theta)
    data = generate_dataset(model, material, cfg.frequencies, cfg.direction,
                            cfg.polarization, grid,
                            description={"label": "synthetic"})
    noise = float(cfg.recovery.get("noise", 0.0))
    if noise > 0:
        data = data.add_noise(noise, args.seed)
    result = recover_constant_permittivity(data, model,
                                           cfg.recovery["eps_grid"], grid)
    os.makedirs(args.out, exist_ok=True)
    data.save(os.path.join(args.out, "dataset_measured"))
    _write_atomic(os.path.join(args.out, "recovery.json"),
                  canonical_dumps(result.to_dict()) + "\n")
    print(json.dumps(result.to_dict()))
    return 0 if not result.ambiguous else 1


def cmd_oracle_check(args):
    import numpy as np
    from .config import canonical_dumps
    from .forward import DirectionGrid
    from .kernels import Wavenumber
    from .oracles import (MieSeries, mie_pec_far_field,
                          rayleigh_pec_far_field)
    checks = []
    k = Wavenumber(0.5)
    series = MieSeries.pec(1.0, k)
    csca, cext = series.cross_sections()
    opt = abs(cext - csca) / csca
    checks.append(("optical theorem (series)", opt, opt <= 1e-6))
    grid = DirectionGrid(24)
    d = np.array([0.0, 0.0, 1.0])
    p = np.array([1.0, 0.0, 0.0])
    pat = mie_pec_far_field(1.0, k, d, p, grid)
    integ = abs(pat.l2_norm() ** 2 - csca) / csca
    checks.append(("integrated pattern power vs series", integ, integ <= 1e-6))
    ks = Wavenumber(0.05)
    s2 = MieSeries.pec(1.0, ks)
    ratio = s2.cross_sections()[0] / (np.pi * 0.05**4) / (10.0 / 3.0)
    checks.append(("low-frequency cross-section limit", abs(ratio - 1),
                   abs(ratio - 1) <= 0.03))
    kr = Wavenumber(0.01)
    mie_lo = mie_pec_far_field(1.0, kr, d, p, grid)
    ray = rayleigh_pec_far_field(1.0, kr, d, p, grid)
    conv = mie_lo.l2_distance(ray) / ray.l2_norm()
    checks.append(("dipole-limit convention pin", conv, conv <= 5e-3))
    os.makedirs(args.out, exist_ok=True)
    summary = {"checks": [{"name": n, "value": float(v), "passed": bool(ok)}
                          for n, v, ok in checks]}
    _write_atomic(os.path.join(args.out, "oracle_check.json"),
                  canonical_dumps(summary) + "\n")
    ok_all = all(ok for _, _, ok in checks)
    for name, v, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {v:.3e}")
    return 0 if ok_all else 1


_COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "farfield": cmd_farfield,
    "verify-lowfreq": cmd_verify_lowfreq,
    "discriminate": cmd_discriminate,
    "recover": cmd_recover,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None):
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        rc = _COMMANDS[args.command](args)
        marker = os.path.join(args.out, "FAILED")
        if os.path.exists(marker):
            os.remove(marker)
        return rc
    except Exception as exc:
        from .errors import EmshellError
        os.makedirs(args.out, exist_ok=True)
        marker = os.path.join(args.out, "FAILED")
        with open(marker, "w") as f:
            f.write(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, EmshellError):
            return exc.exit_code
        raise


if __name__ == "__main__":
    sys.exit(main())
