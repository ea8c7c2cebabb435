"""Command line front end.

Exit codes: 0 ok, 2 invalid configuration, 3 stability (CFL or
hyperbolicity), 4 convergence or check failure, 5 Holmgren/geometry gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import (
    build_geometry,
    build_grid,
    build_scale,
    eval_field,
    eval_vector,
    load_config,
)
from .discretization import (
    BoundaryControl,
    WaveSolver,
    norm_l2_sigma,
)
from .errors import (
    CflViolation,
    ConfigError,
    GeometryGate,
    HolmgrenViolation,
    HyperbolicityViolation,
    NoConvergence,
    SingularStep,
    StackwaveError,
)
from .follower import FollowerProblem, j2_value, solve_follower
from .io import read_control, read_vector, write_control, write_field, write_json, write_terminal, write_vector
from .leader import (
    ControllabilityTarget,
    DualVariable,
    HierarchicProblem,
    LeaderOptions,
    assemble_leader_optimality_system,
    check_variational_inequality,
    minimize_dual,
)

log = logging.getLogger("stackwave")

EXIT_OK, EXIT_CONFIG, EXIT_STABILITY, EXIT_FAILURE, EXIT_GATE = 0, 2, 3, 4, 5


class CheckFailed(StackwaveError):
    pass


def _exit_code(exc):
    if isinstance(exc, (HolmgrenViolation, GeometryGate)):
        return EXIT_GATE
    if isinstance(exc, (CflViolation, HyperbolicityViolation)):
        return EXIT_STABILITY
    if isinstance(exc, (NoConvergence, SingularStep, CheckFailed)):
        return EXIT_FAILURE
    if isinstance(exc, (ConfigError, ValueError, OSError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


# -- shared setup -------------------------------------------------------------------


class Setup:
    """Objects every command builds from a config."""

    def __init__(self, cfg, nx=None, nt=None):
        self.cfg = cfg
        self.k = build_scale(cfg)
        self.grid = build_grid(cfg, self.k, nx, nt)
        self.geom = build_geometry(cfg)
        self.solver = WaveSolver(self.k, self.grid, n=1, cfl_limit=cfg.grid.cfl or 0.9)
        self.seg1, self.seg2 = self.geom.segments(self.grid.T)

    def control(self, path, segment):
        if path is None:
            return BoundaryControl.zeros(segment, self.grid)
        t, w = read_control(path)
        if t.shape != self.grid.t.shape or not np.allclose(t, self.grid.t):
            raise ConfigError(f"{path}: time samples do not match the grid")
        return BoundaryControl.on(segment, w, self.grid)

    def hierarchic(self):
        c = self.cfg
        return HierarchicProblem(self.solver, self.geom, eval_field(c.v2, self.grid),
                                 c.problem.sigma, c.problem.delta, tol=1e-12,
                                 relaxation=c.solver.relaxation,
                                 max_iter=max(c.solver.max_iter, 500))

    def target(self):
        c = self.cfg
        return ControllabilityTarget(eval_vector(c.target.v0, self.grid),
                                     eval_vector(c.target.v1, self.grid),
                                     c.problem.rho0, c.problem.rho1)


def _out(args, cfg):
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_config(out, cfg):
    write_json(out / "config.json", cfg.model_dump())


# -- commands -------------------------------------------------------------------------


def cmd_simulate(args, cfg):
    s = Setup(cfg)
    g = s.grid
    v0 = eval_vector(cfg.initial.v0, g)
    v1 = eval_vector(cfg.initial.v1, g)
    src = eval_field(cfg.source, g)
    w1 = s.control(args.w1, s.seg1)
    left = w1.samples if w1.side == "left" else np.zeros(g.nt + 1)
    right = w1.samples if w1.side == "right" else np.zeros(g.nt + 1)
    v = s.solver.march_forward(dirichlet=(left, right), source=src, init=(v0, v1))
    term = s.solver.terminal_of(v)
    energy = diag.discrete_energy(v)
    drift = float(np.ptp(energy) / (abs(energy[0]) or 1.0))
    res = diag.residual_pde(s.solver, v, rhs=src, init_velocity=v1)
    out = _out(args, cfg)
    _save_config(out, cfg)
    write_field(out / "state.csv", v)
    write_terminal(out / "terminal.csv", g.y, term)
    write_json(out / "summary.json", {"energy_drift": drift, "residual": res,
                                      "nx": g.nx, "nt": g.nt, "T": g.T})
    return EXIT_OK


def _nash_audit(problem, w2, seed, n=20):
    rng = np.random.default_rng(seed)
    base = j2_value(problem, w2)
    worst = 0.0
    for _ in range(n):
        z = rng.standard_normal(problem.grid.nt + 1)
        for eps in (1e-2, 1e-3):
            worst = max(worst, base - j2_value(problem, w2.samples + eps * z))
    return diag.report("nash_audit", seed, 2 * n, worst, 1e-12)


def cmd_follower(args, cfg):
    s = Setup(cfg)
    w1 = s.control(args.w1, s.seg1)
    prob = FollowerProblem(s.solver, s.geom, w1, eval_field(cfg.v2, s.grid), cfg.problem.sigma)
    sol = solve_follower(prob, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    out = _out(args, cfg)
    _save_config(out, cfg)
    write_control(out / "w1.csv", s.grid.t, w1.samples)
    write_control(out / "w2.csv", s.grid.t, sol.w2.samples)
    write_field(out / "state.csv", sol.v)
    write_field(out / "adjoint.csv", sol.p)
    summary = {"j2": sol.j2, "euler_residual": sol.euler_residual, "iterations": sol.iterations}
    if args.audit:
        summary["nash_audit"] = _nash_audit(prob, sol.w2, args.seed)
    write_json(out / "summary.json", summary)
    if args.audit and not summary["nash_audit"]["pass"]:
        raise CheckFailed("Nash perturbation audit failed")
    return EXIT_OK


def cmd_leader(args, cfg):
    s = Setup(cfg)
    opts = LeaderOptions(tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
                         relaxation=cfg.solver.relaxation,
                         override_holmgren=cfg.solver.override_holmgren or args.override_holmgren,
                         override_mode=cfg.solver.override_mode, seed=args.seed)
    problem = s.hierarchic()
    target = s.target()
    out = _out(args, cfg)
    failure = None
    try:
        res = minimize_dual(problem, target, opts)
    except NoConvergence as exc:
        if not hasattr(exc.best, "summary"):
            raise
        res, failure = exc.best, exc
    _save_config(out, cfg)
    g = s.grid
    write_control(out / "w1.csv", g.t, res.w1.samples)
    write_control(out / "w2.csv", g.t, res.w2.samples)
    write_vector(out / "f0.csv", g.y, res.f_star.f0, "f0")
    write_vector(out / "f1.csv", g.y, res.f_star.f1, "f1")
    write_field(out / "state.csv", res.state)
    write_terminal(out / "terminal.csv", g.y, res.terminal)
    summary = res.summary()
    summary["converged"] = res.converged
    write_json(out / "summary.json", summary)
    if failure is not None:
        raise failure
    return EXIT_OK


def cmd_verify(args, cfg):
    art = Path(args.artifacts)
    if not art.is_dir() or not any(art.iterdir()):
        raise ConfigError(f"no artifacts in {art}")
    s = Setup(cfg)
    g = s.grid
    checks = [diag.transpose_check(s.solver, n_samples=10, seed=args.seed)]
    tol = 1e-8
    if (art / "w2.csv").exists():
        w1 = s.control(art / "w1.csv" if (art / "w1.csv").exists() else None, s.seg1)
        w2 = s.control(art / "w2.csv", s.seg2)
        prob = FollowerProblem(s.solver, s.geom, w1, eval_field(cfg.v2, g), cfg.problem.sigma)
        eu = diag.euler_residual(prob, w2)
        scale = max(1.0, norm_l2_sigma(w2.samples, g.dt))
        checks.append(diag.report("euler", args.seed, 1, eu / scale, max(tol, 10 * cfg.solver.tol)))
    if (art / "f0.csv").exists() and (art / "f1.csv").exists():
        problem = s.hierarchic()
        checks.append(diag.duality_identity_check(problem, n_samples=5, seed=args.seed))
        f = DualVariable(read_vector(art / "f0.csv")[1], read_vector(art / "f1.csv")[1])
        target = s.target()
        rng = np.random.default_rng(args.seed)
        scale = max(f.norm(), 1e-3)
        probes = [f] + [DualVariable(f.f0 + scale * rng.standard_normal(g.nx + 1),
                                     f.f1 + scale * rng.standard_normal(g.nx + 1))
                        for _ in range(20)]
        vi = check_variational_inequality(problem, f, target, probes)
        checks.append(diag.report("variational_inequality", args.seed, len(probes),
                                  max(0.0, -vi) / scale, 1e-6))
        _, residuals = assemble_leader_optimality_system(problem, f)
        checks.append(diag.report("optimality_system", args.seed, len(residuals),
                                  max(residuals.values()), 1e-6))
    ok = all(c["pass"] for c in checks)
    out = Path(args.out) if args.out else art / "verify"
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "summary.json", {"checks": checks, "pass": ok})
    if not ok:
        raise CheckFailed("; ".join(c["check"] for c in checks if not c["pass"]) + " failed")
    return EXIT_OK


def _parse_levels(text):
    levels = []
    for item in text.split(","):
        try:
            nx, nt = item.lower().split("x")
            levels.append((int(nx), int(nt)))
        except ValueError as exc:
            raise ConfigError(f"bad level {item!r}; expected NXxNT") from exc
    return levels


def cmd_convergence(args, cfg):
    k = build_scale(cfg)
    levels = _parse_levels(args.levels) if args.levels else [
        (cfg.grid.nx * 2**i, (cfg.grid.nt or build_grid(cfg, k).nt) * 2**i) for i in range(3)]
    if cfg.scale.family == "constant" and k.value(0.0) == 1.0:
        kind = "standing_wave"
        rep = diag.convergence_study(lambda nx, nt: diag.standing_wave_error(nx, nt, cfg.grid.T),
                                     levels)
    else:
        kind = "manufactured"
        rep = diag.convergence_study(lambda nx, nt: diag.manufactured_error(k, nx, nt), levels)
    out = _out(args, cfg)
    payload = rep.to_dict()
    payload["kind"] = kind
    write_json(out / "report.json", payload)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "follower": cmd_follower,
    "leader": cmd_leader,
    "verify": cmd_verify,
    "convergence": cmd_convergence,
}


def build_parser():
    p = argparse.ArgumentParser(prog="stackwave", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--override-holmgren", action="store_true")
        if name in ("simulate", "follower"):
            sp.add_argument("--w1", help="leader control CSV (t,w)")
        if name == "follower":
            sp.add_argument("--audit", action="store_true", help="re-check the Nash property")
        if name == "verify":
            sp.add_argument("--artifacts", required=True, help="directory written by a run")
        if name == "convergence":
            sp.add_argument("--levels", help="comma-separated NXxNT list")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        code = COMMANDS[args.command](args, cfg)
    except (StackwaveError, ValueError, OSError) as exc:
        code = _exit_code(exc)
        print(f"stackwave {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    log.info("%s finished in %.2f s with exit code %d", args.command,
             time.perf_counter() - started, code)
    return code


def run_config(command, raw_config, out, **flags):
    """Programmatic entry: write ``raw_config`` to ``out`` and run ``command``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "input.json"
    path.write_text(json.dumps(raw_config))
    argv = [command, "--config", str(path), "--out", str(out)]
    for key, val in flags.items():
        opt = "--" + key.replace("_", "-")
        if val is True:
            argv.append(opt)
        elif val not in (None, False):
            argv += [opt, str(val)]
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
