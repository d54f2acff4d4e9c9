"""Command-line front end: ``ks robot validate``, ``ks plan``, ``ks ik``, ``ks esdf-bench``.

Exit codes: 0 success, 1 validation failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import esdf as esdf_mod
from .esdf import DenseEsdf, EsdfConfig, collision_recall, propagate, recover_signs
from .ik import random_seeds, solve_ik_collision_free
from .io import FormatError, Scenario, load_scenario, read_depth
from .robot_model import RobotModel, RobotParseError, RobotValidationError, load_robot_file
from .scene import fuse
from .trajopt import PlanningError, PlanProblem, energy, plan, sample_torques, write_trajectory_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit(line: str = "") -> None:
    print(line, flush=True)


# --- robot validate --------------------------------------------------------


def robot_checks(model: RobotModel) -> list[tuple[str, bool, str]]:
    """Post-load invariant checks on the compiled model; (name, passed, detail)."""
    cache, A = model.cache, model.arrays
    out = []
    roots = [i for i in range(model.n_links) if A.parent[i] < 0]
    out.append(("single root", len(roots) == 1, f"{len(roots)} root(s)"))
    n_act = sum(1 for j in model.joints if j.kind != "fixed" and j.mimic is None)
    out.append(("dof matches actuated joints", n_act == model.dof, f"dof={model.dof}"))
    # affects table against a walk up the raw parent array
    ok = True
    for e in range(model.n_links):
        chain, k = set(), e
        while k >= 0:
            chain.add(k)
            k = A.parent[k]
        for j in range(model.dof):
            expect = any(l in chain for l in cache.connected_links[j])
            ok &= bool(cache.affects[j, e]) == expect
    out.append(("affects table matches tree walk", ok, ""))
    level = {l: i for i, lev in enumerate(cache.level_order) for l in lev}
    ok = all(A.parent[l] < 0 or level[A.parent[l]] < level[l] for l in range(model.n_links))
    out.append(("level order is topological", ok, f"{len(cache.level_order)} levels"))
    sl = A.sphere_link
    bad = 0
    for a, b in cache.self_collision_pairs:
        la, lb = sl[a], sl[b]
        bad += la == lb or A.parent[la] == lb or A.parent[lb] == la
    out.append(("self-collision pairs skip same/adjacent links", bad == 0,
                f"{len(cache.self_collision_pairs)} pairs"))
    out.append(("sphere radii positive", bool(np.all(A.sphere_radius > 0)), f"{model.n_spheres} spheres"))
    lims = np.concatenate([A.pos_limits, A.vel_limits, A.acc_limits, A.jerk_limits, A.torque_limits])
    out.append(("limit intervals non-empty", bool(np.all(lims[:, 0] <= lims[:, 1])), ""))
    return out


def cmd_robot_validate(args) -> int:
    try:
        model = load_robot_file(args.path)
    except (OSError, RobotParseError) as exc:
        _emit(f"FAIL parse: {exc}")
        return EXIT_USAGE
    except RobotValidationError as exc:
        _emit(f"FAIL validation: {exc}")
        return EXIT_FAIL
    _emit("PASS load and schema/tree/joint/inertia validation")
    code = EXIT_OK
    for name, ok, detail in robot_checks(model):
        _emit(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
        code = code if ok else EXIT_FAIL
    return code


# --- shared scenario plumbing ----------------------------------------------


def _load(args) -> tuple[Scenario, RobotModel]:
    scenario = load_scenario(args.scenario)
    try:
        model = load_robot_file(scenario.robot)
    except (RobotParseError, RobotValidationError) as exc:
        raise FormatError(f"robot {scenario.robot}: {exc}") from exc
    return scenario, model


def _fuse(scenario: Scenario):
    frames = [read_depth(p) for p in scenario.depth_frames]
    return fuse(scenario.primitives, frames, scenario.tsdf_voxel, capacity=1 << 14)


def build_world(scenario: Scenario) -> DenseEsdf | None:
    if not scenario.has_world:
        return None
    return esdf_mod.build_esdf(_fuse(scenario), scenario.esdf)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _problem_for(spec, model: RobotModel, world, seeds: int, rng_seed: int) -> PlanProblem:
    zeros = np.zeros(model.dof)
    start = (
        spec.start,
        spec.start_velocity if spec.start_velocity is not None else zeros,
        spec.start_acceleration if spec.start_acceleration is not None else zeros,
    )
    return PlanProblem(
        start=start, goals=spec.goals, world=world, weights=spec.weights, segments=spec.segments,
        dt_u=spec.dt_u, payload=spec.payload, seed_count=seeds, enable_dynamics=spec.enable_dynamics,
        rng_seed=rng_seed,
    )


# --- plan ------------------------------------------------------------------


def cmd_plan(args) -> int:
    scenario, model = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(scenario)
    rows = []
    for i, spec in enumerate(scenario.problems):
        if args.no_dynamics:
            spec.enable_dynamics = False
        problem = _problem_for(spec, model, world, args.seeds, scenario.seed + i)
        t0 = time.perf_counter()
        try:
            result = plan(model, problem)
        except PlanningError as exc:
            rows.append({"problem": i, "feasible": False, "kinematic_ok": False, "dynamics_ok": False,
                         "error": str(exc), "solve_time": time.perf_counter() - t0})
            continue
        elapsed = time.perf_counter() - t0
        samples = result.samples
        torques = sample_torques(model, samples, spec.payload)
        dt = problem.dt_u / problem.n_interp
        write_trajectory_csv(out / f"trajectory_{i:03d}.csv", samples,
                             result.torques if spec.enable_dynamics else None)
        report = result.violation_report
        row = {
            "problem": i,
            "feasible": bool(result.feasible),
            "kinematic_ok": report.kinematic_ok,
            "dynamics_ok": report.dynamics_ok,
            "cost_breakdown": result.cost_breakdown,
            "solve_time": elapsed,
            "energy": energy(samples, torques, dt),
            "violations": {k: {"worst": v.worst, "threshold": v.threshold, "t": v.t}
                           for k, v in report.checks.items()},
            "enable_dynamics": spec.enable_dynamics,
        }
        _write_json(out / f"metrics_{i:03d}.json", row)
        rows.append(row)
    n = len(rows)
    count = lambda key: sum(bool(r[key]) for r in rows)  # noqa: E731
    validated = sum(bool(r["kinematic_ok"] and r["dynamics_ok"]) for r in rows)
    summary = {
        "problems": n,
        "feasible": count("feasible"),
        "kinematic_ok": count("kinematic_ok"),
        "dynamics_ok": count("dynamics_ok"),
        "validated": validated,
        "success_rate": count("feasible") / n if n else 0.0,
        "kinematic_rate": count("kinematic_ok") / n if n else 0.0,
        "dynamics_rate": count("dynamics_ok") / n if n else 0.0,
        "validated_rate": validated / n if n else 0.0,
        "seeds": args.seeds,
        "rng_seed": scenario.seed,
    }
    _write_json(out / "summary.json", summary)
    if args.json:
        _emit(json.dumps(summary, sort_keys=True))
    else:
        _emit(f"{summary['feasible']}/{n} feasible, {summary['dynamics_ok']}/{n} within torque limits")
    # torque violations count as failures even when the optimizer ignored dynamics
    return EXIT_OK if validated == n else EXIT_FAIL


# --- ik --------------------------------------------------------------------


def cmd_ik(args) -> int:
    scenario, model = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(scenario)
    solved = 0
    for i, spec in enumerate(scenario.problems):
        seeds = np.vstack([spec.start[None], random_seeds(model, args.seeds - 1, scenario.seed + i)])
        results = solve_ik_collision_free(model, spec.goals, seeds, world)
        rows = [{
            "q": r.q.tolist(),
            "position_error": r.position_error.tolist(),
            "orientation_error": r.orientation_error.tolist(),
            "converged": r.converged,
            "self_collision_free": r.self_collision_free,
            "scene_collision_free": r.scene_collision_free,
        } for r in results]
        best = rows[0]
        ok = best["converged"] and best["self_collision_free"] and best["scene_collision_free"]
        solved += ok
        _write_json(out / f"ik_{i:03d}.json", {"problem": i, "solved": ok, "results": rows})
    n = len(scenario.problems)
    _write_json(out / "summary.json", {"problems": n, "solved": solved, "seeds": args.seeds, "rng_seed": scenario.seed})
    _emit(f"{solved}/{n} IK problems solved")
    return EXIT_OK if solved == n else EXIT_FAIL


# --- esdf bench ------------------------------------------------------------


def _median_time(fn, warmup: int, repeats: int):
    for _ in range(warmup):
        result = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) if times else 0.0, result


def brute_force_sq_dist(seeds: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Integer squared distance from every cell to its nearest seed by exhaustive search."""
    sites = np.argwhere(seeds)
    cells = np.indices(seeds.shape).reshape(3, -1).T
    out = np.empty(len(cells), dtype=np.int64)
    for s in range(0, len(cells), chunk):
        diff = cells[s : s + chunk, None, :] - sites[None]
        out[s : s + chunk] = np.min(np.einsum("nki,nki->nk", diff, diff), axis=1)
    return out.reshape(seeds.shape)


def cmd_esdf_bench(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.esdf is None:
        raise FormatError("esdf-bench needs an 'esdf' box in the scenario")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = [args.seeding] if args.seeding else ["scatter", "gather"]
    t_fuse, tsdf = _median_time(lambda: _fuse(scenario), 0, 1)
    timings, recalls = [], []
    rng = np.random.default_rng(scenario.seed)
    cfg0 = scenario.esdf
    lo = np.asarray(cfg0.origin)
    hi = lo + np.asarray(cfg0.dims) * cfg0.voxel_size
    probes = rng.uniform(lo, hi, size=(args.probes, 3))
    shapes = scenario.reference or (scenario.primitives if not scenario.depth_frames else [])
    analytic = (lambda p: np.min([s.sdf(p) for s in shapes], axis=0)) if shapes else None
    truncation = 4 * scenario.tsdf_voxel
    seed_counts = {}
    for mode in modes:
        cfg = EsdfConfig(cfg0.origin, cfg0.dims, cfg0.voxel_size, mode)
        t_seed, seeds = _median_time(lambda: esdf_mod.seed(tsdf, cfg), args.warmup, args.repeats)
        t_prop, unsigned = _median_time(lambda: propagate(seeds, cfg), args.warmup, args.repeats)
        t_sign, field = _median_time(lambda: recover_signs(unsigned, tsdf), args.warmup, args.repeats)
        seed_counts[mode] = int(seeds.sum())
        for stage, t in (("seed", t_seed), ("propagate", t_prop), ("signs", t_sign)):
            timings.append({"seeding": mode, "stage": stage, "median_s": t, "repeats": args.repeats})
        row = {"seeding": mode, "seeds": int(seeds.sum()), "probes": args.probes, "probe_radius": args.probe_radius,
               "colliding": "", "recall": "", "max_abs_error_m": "", "max_sq_dist_diff_voxels": ""}
        if field.empty:
            row["note"] = "no seeds"
        else:
            if analytic is not None:
                # unobserved interiors beyond the band read as free, so score only the band and outside
                d = analytic(probes)
                scored = probes[d > -truncation]
                rec, n = collision_recall(field, analytic, scored, args.probe_radius)
                row.update(colliding=n, recall=rec)
                near = scored[analytic(scored) < 4 * cfg.voxel_size]
                if len(near):
                    row["max_abs_error_m"] = float(np.max(np.abs(esdf_mod.query(field, near)[0] - analytic(near))))
            if args.brute_force:
                oracle = brute_force_sq_dist(seeds)
                row["max_sq_dist_diff_voxels"] = int(np.max(np.abs(oracle - unsigned.sq_dist)))
        recalls.append(row)
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["seeding", "stage", "median_s", "repeats"])
        w.writeheader()
        w.writerows(timings)
    fields = ["seeding", "seeds", "probes", "probe_radius", "colliding", "recall", "max_abs_error_m",
              "max_sq_dist_diff_voxels", "note"]
    with open(out / "recall.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        w.writerows(recalls)
    summary = {
        "allocated_blocks": int(tsdf.n_allocated),
        "allocated_voxels": int(tsdf.n_allocated) * 512,
        "esdf_voxels": int(np.prod(cfg0.dims)),
        "fuse_s": t_fuse,
        "seeds": seed_counts,
        "rng_seed": scenario.seed,
        "empty": all(v == 0 for v in seed_counts.values()),
    }
    _write_json(out / "summary.json", summary)
    _emit("no seeds: empty scene" if summary["empty"] else
          " ".join(f"{r['seeding']}: seeds={r['seeds']} recall="
                   + (f"{r['recall']:.4f}" if r["recall"] != "" else "n/a") for r in recalls))
    return EXIT_OK


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ks", description="Dynamics-aware motion planning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    robot = sub.add_parser("robot", help="robot description tools")
    rsub = robot.add_subparsers(dest="robot_command", required=True)
    val = rsub.add_parser("validate", help="load a robot description and check its invariants")
    val.add_argument("path")
    val.set_defaults(func=cmd_robot_validate)

    pl = sub.add_parser("plan", help="plan every problem in a scenario")
    pl.add_argument("scenario")
    pl.add_argument("-o", "--out", required=True)
    pl.add_argument("--no-dynamics", action="store_true")
    pl.add_argument("--seeds", type=int, default=4)
    pl.add_argument("--json", action="store_true")
    pl.set_defaults(func=cmd_plan)

    ik = sub.add_parser("ik", help="collision-free IK for every problem's goals")
    ik.add_argument("scenario")
    ik.add_argument("-o", "--out", required=True)
    ik.add_argument("--seeds", type=int, default=32)
    ik.set_defaults(func=cmd_ik)

    eb = sub.add_parser("esdf-bench", help="time and score TSDF-to-ESDF generation")
    eb.add_argument("scenario")
    eb.add_argument("-o", "--out", required=True)
    eb.add_argument("--seeding", choices=["scatter", "gather"])
    eb.add_argument("--brute-force", action="store_true")
    eb.add_argument("--probes", type=int, default=10_000)
    eb.add_argument("--probe-radius", type=float, default=0.03)
    eb.add_argument("--warmup", type=int, default=3)
    eb.add_argument("--repeats", type=int, default=10)
    eb.set_defaults(func=cmd_esdf_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seeds", 1) < 1:
        parser.error("--seeds must be positive")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
