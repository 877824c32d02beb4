"""Command-line interface.

Subcommands: ``validate`` / ``convergence`` / ``clt`` run configuration-driven
studies; ``forward`` and ``backward`` are direct single-run commands writing
path CSVs.  All randomness flows from the explicit seed; ``--threads`` is
accepted for compatibility but computation is vectorized single-process, so
results never depend on it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backward import solve_bsde_n, solve_mfbsde
from .forward import simulate_blocks, solve_limit_forward, solve_sde_n
from .fluctuation import value_law
from .harness import (
    ConfigError,
    emit_report,
    parse_config,
    run_clt_study,
    run_convergence_study,
)
from .model import catalog_model
from .noise import StreamKey, TimeGrid


def _load_model_block(path: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if "model" in doc and isinstance(doc["model"], dict):
        return doc["model"]
    return doc


def _build_model(block: dict):
    block = dict(block)
    name = block.pop("name")
    return catalog_model(name, **block)


def _cmd_validate(args) -> int:
    try:
        cfg = parse_config(Path(args.config).read_text())
    except ConfigError as exc:
        print("invalid configuration:")
        for v in exc.violations:
            print(f"  - {v}")
        return 1
    print(f"ok: {cfg.digest()} ({cfg.study['kind']} study, seed {cfg.study['seed']})")
    return 0


def _load_config(args):
    cfg = parse_config(Path(args.config).read_text())
    if args.seed is not None:
        cfg.study["seed"] = int(args.seed)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _cmd_convergence(args) -> int:
    cfg = _load_config(args)
    report = run_convergence_study(cfg)
    written = emit_report(report, cfg.out_dir)
    for v in report.verdicts:
        status = "pass" if v["passed"] else "FAIL"
        print(f"[{status}] {v['criterion']}: {v['details']}")
    print("wrote:", ", ".join(written))
    return 0 if all(v["passed"] for v in report.verdicts) else 2


def _cmd_clt(args) -> int:
    if args.config is not None:
        cfg = _load_config(args)
    else:
        # direct mode: build a study document from the model block
        if args.model is None or args.n is None or args.seed is None:
            print("direct mode needs --model, --n and --seed", file=sys.stderr)
            return 1
        doc = {
            "model": _load_model_block(args.model),
            "study": {"kind": "clt", "n": int(args.n), "seed": int(args.seed)},
        }
        if args.lattice is not None:
            lat = json.loads(Path(args.lattice).read_text())
            doc["study"]["lattice_times"] = lat.get("times", [0.25, 0.5, 1.0])
            doc["study"]["lattice_probes"] = lat.get("probes", [[0.0]])
        cfg = parse_config(json.dumps(doc))
        if args.out is not None:
            cfg.out_dir = args.out
    if args.n is not None:
        cfg.study["n"] = int(args.n)
    if args.reps is not None:
        cfg.study["reps"] = int(args.reps)
        cfg.study["members"] = int(args.reps)
    report = run_clt_study(cfg)
    written = emit_report(report, cfg.out_dir)
    for v in report.verdicts:
        status = "pass" if v["passed"] else "FAIL"
        print(f"[{status}] {v['criterion']}")
    print("wrote:", ", ".join(written))
    return 0 if all(v["passed"] for v in report.verdicts) else 2


def _write_paths_csv(path: str, grid: TimeGrid, values: np.ndarray) -> None:
    lines = ["rep,t,coord,value"]
    for r in range(values.shape[0]):
        for i, t in enumerate(grid.nodes):
            for c in range(values.shape[2]):
                lines.append(f"{r},{float(t)!r},{c},{float(values[r, i, c])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_forward(args) -> int:
    model = _build_model(_load_model_block(args.model))
    grid = TimeGrid(model.horizon, args.steps)
    root = StreamKey(seed=args.seed)
    law = solve_limit_forward(model, grid, args.env_cloud, root.child("law", 0))
    result = solve_sde_n(
        model, args.n, grid, law,
        root.child("w", 0), root.child("envs", 0),
        out_reps=args.reps,
        env_cloud=args.env_cloud,
    )
    _write_paths_csv(args.out, grid, result.paths.values)
    conv = "converged" if result.provenance["converged"] else "NOT converged"
    print(
        f"wrote {args.out}: {args.reps} replications, N={args.n}, "
        f"picard {result.provenance['picard_sweeps_run']} sweeps ({conv})"
    )
    return 0


def _read_paths_csv(path: str, dim: int):
    rows = Path(path).read_text().strip().splitlines()
    if rows[0] != "rep,t,coord,value":
        raise ValueError(f"{path} is not a forward path CSV")
    data: dict[int, dict[float, list[float]]] = {}
    for line in rows[1:]:
        r, t, c, v = line.split(",")
        data.setdefault(int(r), {}).setdefault(float(t), [0.0] * dim)[int(c)] = float(v)
    nodes = sorted(next(iter(data.values())))
    values = np.array([[data[r][t] for t in nodes] for r in sorted(data)])
    return nodes, values


def _invert_euler_increments(model, law, grid, values):
    """Recover Brownian increments from limit-dynamics paths (needs a
    nonsingular diffusion mean)."""
    R, n1, d = values.shape
    dw = np.empty((R, grid.steps, d))
    for i in range(grid.steps):
        x = values[:, i, :]
        resid = values[:, i + 1, :] - x - law.drift_mean(x, i) * grid.h
        sig = law.diffusion_mean(x, i)
        dw[:, i, :] = np.linalg.solve(sig, resid[..., None])[..., 0]
    return dw


def _cmd_backward(args) -> int:
    model = _build_model(_load_model_block(args.model))
    grid = TimeGrid(model.horizon, args.steps)
    root = StreamKey(seed=args.seed)
    law = solve_limit_forward(model, grid, args.env_cloud, root.child("law", 0))
    limit_mode = args.n == "limit"
    if args.paths != "fresh" and not limit_mode:
        print(
            "path files are supported with --n limit only: externally supplied "
            "paths carry no environment draws",
            file=sys.stderr,
        )
        return 1
    if limit_mode:
        if args.paths != "fresh":
            nodes, values = _read_paths_csv(args.paths, model.dim)
            if len(nodes) != grid.steps + 1:
                print(f"path file has {len(nodes) - 1} steps, expected {grid.steps}", file=sys.stderr)
                return 1
            x_paths = values
            dw = _invert_euler_increments(model, law, grid, values)
        else:
            sim = simulate_blocks(
                model, 1, grid, law, law,
                n_blocks=1, inner=args.reps,
                w_key=root.child("w", 0), env_key=root.child("envs", 0),
            )
            x_paths, dw = sim.xlim[0], sim.dw[0]
        sol = solve_mfbsde(model, law, x_paths, dw, grid, degree=args.degree)
        y, z = sol.y_values, sol.z_values
    else:
        N = int(args.n)
        env_law = law
        if not model.env_free("driver"):
            env_law = value_law(model, law, grid, root.child("vlaw", 0), degree=args.degree)
        sim = simulate_blocks(
            model, N, grid, env_law, law,
            n_blocks=args.reps, inner=args.inner,
            w_key=root.child("w", 0), env_key=root.child("envs", 0),
        )
        sol = solve_bsde_n(model, N, sim, grid, degree=args.degree)
        y, z = sol.designated()
    d = z.shape[-1]
    header = "rep,t,y," + ",".join(f"z_{j + 1}" for j in range(d))
    lines = [header]
    for r in range(y.shape[0]):
        for i, t in enumerate(grid.nodes):
            zs = ",".join(repr(float(z[r, i, j])) for j in range(d))
            lines.append(f"{r},{float(t)!r},{float(y[r, i])!r},{zs}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}: {y.shape[0]} replications ({'limit' if limit_mode else 'N=' + args.n})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfbsde",
        description="Mean-field forward-backward SDE approximation laboratory",
    )
    parser.add_argument("--threads", type=int, default=1, help="accepted for compatibility; results are thread-count independent")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a configuration file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("convergence", help="run a convergence study from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override study.seed")
    p.add_argument("--out", default=None, help="override output directory")
    p.set_defaults(fn=_cmd_convergence)

    p = sub.add_parser("clt", help="run a fluctuation study (config file or direct flags)")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default=None, help="JSON model block (direct mode)")
    p.add_argument("--lattice", default=None, help='JSON file {"times": [...], "probes": [[...]]}')
    p.add_argument("--n", type=int, default=None, help="environment size")
    p.add_argument("--reps", type=int, default=None, help="replications / members")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(fn=_cmd_clt)

    p = sub.add_parser("forward", help="simulate N-environment forward paths")
    p.add_argument("--model", required=True, help="JSON file with the model block")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--env-cloud", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_forward)

    p = sub.add_parser("backward", help="solve the backward equation")
    p.add_argument("--model", required=True)
    p.add_argument("--n", required=True, help="environment size or 'limit'")
    p.add_argument("--paths", default="fresh", help="'fresh' simulates paths internally")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--reps", type=int, default=64)
    p.add_argument("--inner", type=int, default=128)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--env-cloud", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_backward)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
