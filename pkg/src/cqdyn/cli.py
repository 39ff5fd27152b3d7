"""Command-line front end: load configs, run drivers, emit JSON reports.

Every run creates (or reuses) an output directory and writes ``report.json``
containing a reproducibility manifest plus the driver results; histogram-like
data additionally lands in CSV files.  Exit code 0 means every criterion of
the command passed, 1 flags a failed statistical criterion, 2 a
configuration/validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, linalg, measure
from .config import (load_config, scalar_function_from_config, sim_from_config,
                     theory_from_config, zakai_model_from_config)
from .dynamics import (default_bin_edges, run_ensemble, simulate_trajectory,
                       summarize_ensemble, trajectory_to_csv, weighted_density)
from .errors import ConfigError, InconclusiveRunError
from .experiments import (born_rule_test, default_collapse_horizon, lemma_sweep,
                          martingale_sweep, picture_equivalence_test)
from .theory import classify_theory
from .zakai import zakai_joint_check, zakai_kalman_check


def _residual_max(theory, n_states: int = 100, seed: int = 2718) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_states):
        x = linalg.random_state(rng, theory.dim, unit=(k % 2 == 0))
        worst = max(worst, measure.martingale_residual(theory.family, theory.a_op,
                                                       theory.b_op, x))
    return worst


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_classify(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    theory = theory_from_config(cfg["theory"])
    label = classify_theory(theory.family)
    residual = _residual_max(theory)
    ok = residual <= 1e-10
    return (0 if ok else 1), {"family": theory.family.name, "label": label,
                              "residual_max": residual, "passed": ok}


def cmd_simulate(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    theory = theory_from_config(cfg["theory"])
    paths = run_ensemble(theory, sim, parallel=args.parallel)
    summary = summarize_ensemble(paths)
    edges = default_bin_edges(sim)
    field = weighted_density(paths, edges, sim.n_checkpoints)
    _write_csv(os.path.join(outdir, "final_z_hist.csv"),
               ["bin_lo", "bin_hi", "mass", "count"],
               [[edges[i], edges[i + 1], field.mass[i], int(field.counts[i])]
                for i in range(field.n_bins)])
    trajectory_to_csv(simulate_trajectory(theory, sim, 0),
                      os.path.join(outdir, "trajectory_0.csv"))
    summary["total_mass"] = field.total_mass
    return 0, summary


def cmd_born(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    theory = theory_from_config(cfg["theory"])
    exp = cfg.get("experiment", {})
    epsilon = float(exp.get("epsilon", 1e-3))
    if exp.get("auto_horizon"):
        sim = replace(sim, t_final=default_collapse_horizon(theory, sim.z0))
    if sim.psi0 is None:
        raise ConfigError("born experiment needs sim.psi0")
    report = born_rule_test(theory, sim.psi0, sim, epsilon=epsilon,
                            parallel=args.parallel)
    _write_csv(os.path.join(outdir, "outcomes.csv"),
               ["outcome", "eigenvalue", "predicted", "observed_freq"],
               [[i, report.eigenvalues[i], report.predicted[i], report.observed_freq[i]]
                for i in range(len(report.predicted))])
    ok = report.p_value >= 1e-3 and report.uncollapsed_fraction <= 0.1
    out = report.to_dict()
    out["passed"] = ok
    return (0 if ok else 1), out


def cmd_martingale(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    theory = theory_from_config(cfg["theory"])
    report = martingale_sweep(theory, sim, parallel=args.parallel)
    _write_csv(os.path.join(outdir, "mean_weight.csv"),
               ["t", "mean_g", "stderr_g", "n_eff"],
               [[report.times[j], report.mean_g[j], report.stderr_g[j], report.n_eff[j]]
                for j in range(len(report.times))])
    return (0 if report.passed else 1), report.to_dict()


def cmd_equivalence(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    theory = theory_from_config(cfg["theory"])
    bins = int(cfg.get("experiment", {}).get("bins", 20))
    report = picture_equivalence_test(theory, sim, bins=bins, parallel=args.parallel)
    edges = report.bin_edges
    return (0 if report.passed else 1), report.to_dict()


def cmd_zakai(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    exp = cfg.get("experiment", {})
    model = zakai_model_from_config(exp)
    prior = tuple(float(v) for v in exp.get("prior", (0.0, 0.5)))
    checks = exp.get("checks", ["kalman"])
    results: dict = {"checks": list(checks)}
    ok = True
    if "kalman" in checks:
        track = zakai_kalman_check(model, sim, prior=prior)
        results["kalman"] = track.to_dict()
        kal_ok = track.rms_mean_rel <= 0.02 and track.rms_var_rel <= 0.02
        results["kalman"]["passed"] = kal_ok
        ok = ok and kal_ok
        _write_csv(os.path.join(outdir, "kalman_track.csv"),
                   ["t", "filter_mean", "oracle_mean", "filter_var", "oracle_var"],
                   [[track.times[j], track.filter_mean[j], track.oracle_mean[j],
                     track.filter_var[j], track.oracle_var[j]]
                    for j in range(0, len(track.times), max(1, len(track.times) // 200))])
    if "joint" in checks:
        joint = zakai_joint_check(model, sim, bins=int(exp.get("joint_bins", 15)),
                                  prior=prior, parallel=args.parallel)
        results["joint"] = joint.to_dict()
        joint_ok = (joint.tv_distance <= 0.08
                    and abs(joint.mean_g - 1.0) <= 5.0 * joint.stderr_g)
        results["joint"]["passed"] = joint_ok
        ok = ok and joint_ok
        _write_csv(os.path.join(outdir, "z_marginals.csv"),
                   ["z_lo", "z_hi", "direct", "filter"],
                   [[joint.z_edges[i], joint.z_edges[i + 1],
                     joint.z_marginal_direct[i], joint.z_marginal_filter[i]]
                    for i in range(len(joint.z_edges) - 1)])
    results["passed"] = ok
    return (0 if ok else 1), results


def cmd_lemma(cfg: dict, sim, args, outdir) -> tuple[int, dict]:
    exp = cfg.get("experiment", {}) if cfg else {}
    report = lemma_sweep(
        dims=tuple(exp.get("dims", (2, 3, 4))),
        n_random=int(exp.get("n_random", 100)),
        n_samples=int(exp.get("n_samples", 20000)),
        seed=int(exp.get("seed", 1234)))
    return (0 if report.passed else 1), report.to_dict()


_COMMANDS = {
    "classify": (cmd_classify, True),
    "simulate": (cmd_simulate, True),
    "born": (cmd_born, True),
    "martingale": (cmd_martingale, True),
    "equivalence": (cmd_equivalence, True),
    "zakai": (cmd_zakai, False),
    "lemma": (cmd_lemma, False),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqdyn",
                                     description="classical-quantum hybrid dynamics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} driver")
        p.add_argument("--config", required=(name != "lemma"), help="config JSON path")
        p.add_argument("--seed", type=int, default=None, help="override sim seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--traj", type=int, default=None, help="override trajectory count")
        p.add_argument("--dt", type=float, default=None, help="override time step")
        p.add_argument("--parallel", type=int, default=os.cpu_count() or 1,
                       help="worker processes (never affects results)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler, needs_theory = _COMMANDS[args.command]
    started = time.time()
    try:
        cfg = load_config(args.config) if args.config else {}
        sim = None
        if "sim" in cfg:
            sim = sim_from_config(cfg["sim"], seed=args.seed, n_traj=args.traj, dt=args.dt)
        elif needs_theory and args.command != "classify":
            raise ConfigError("config must contain a sim section")
        if needs_theory and "theory" not in cfg:
            raise ConfigError("config must contain a theory section")

        resolved_seed = sim.seed if sim is not None else (args.seed if args.seed is not None else 0)
        outdir = args.out or f"cqdyn-{args.command}-{time.strftime('%Y%m%d-%H%M%S')}-seed{resolved_seed}"
        os.makedirs(outdir, exist_ok=True)

        code, results = handler(cfg, sim, args, outdir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InconclusiveRunError as exc:
        print(f"inconclusive run: {exc}", file=sys.stderr)
        return 1

    manifest = {
        "command": args.command,
        "config_path": os.path.abspath(args.config) if args.config else None,
        "seed": resolved_seed,
        "artifact_version": __version__,
        "out_dir": os.path.abspath(outdir),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    report = {"manifest": manifest, "results": results}
    report_path = os.path.join(outdir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
