"""Command-line entry point: run a scenario file, emit CSV/JSON artifacts."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import analysis, kernel, sampler, scenario as scenario_mod, subdivision
from .errors import GridWalkError
from .scenario import Scenario, build_spec, start_point, vertex_radius_value


def run_scenario(sc: Scenario, out_dir: Path, dump_paths: bool = False,
                 run_convergence: bool = False) -> dict:
    """Execute one scenario and write its artifacts into out_dir."""
    t_start = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = build_spec(sc)
    radius = vertex_radius_value(sc)
    builder = (subdivision.uniform_subdivision if sc.grid.mode == "uniform"
               else subdivision.adapted_subdivision)
    sub = builder(spec, sc.grid.h, vertex_radius_rule=lambda h: radius,
                  frontier=sc.grid.frontier)
    table = kernel.build_kernel_table(spec, sub, policy=sc.kernel.policy,
                                      n_panels=sc.kernel.quad_panels)

    x0 = start_point(sc, spec)
    stats = analysis.run_ensemble(spec, sub, table, x0, sc.run.horizon,
                                  sc.run.n_paths, sc.run.sample_times,
                                  sc.run.master_seed)

    artifacts = set(sc.output.artifacts)
    if dump_paths:
        artifacts.add("paths")
    if run_convergence:
        artifacts.add("convergence")
    written: list[str] = []

    if "subdivision" in artifacts:
        subdivision.write_nodes_csv(sub, out_dir / "subdivision_nodes.csv")
        subdivision.write_cells_csv(sub, out_dir / "subdivision_cells.csv")
        written += ["subdivision_nodes.csv", "subdivision_cells.csv"]
    if "kernel" in artifacts:
        kernel.write_kernel_csv(table, out_dir / "kernel.csv")
        written.append("kernel.csv")
    if "stats" in artifacts:
        with open(out_dir / "stats.json", "w") as fh:
            json.dump(stats.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append("stats.json")
    if "paths" in artifacts:
        init = sampler.initial_distribution_extending(table, x0)
        paths = [sampler.sample_path(table, init, sc.run.horizon,
                                     (sc.run.master_seed, pid))
                 for pid in range(sc.run.n_paths)]
        sampler.write_paths_csv(paths, sub, out_dir / "paths.csv")
        written.append("paths.csv")
    if "sample_matrix" in artifacts:
        init = sampler.initial_distribution_extending(table, x0)
        run = sampler.run_walks(table, init, sc.run.horizon, sc.run.sample_times,
                                sc.run.n_paths, sc.run.master_seed)
        sampler.write_sample_matrix_csv(run, sub, out_dir / "sample_matrix.csv")
        written.append("sample_matrix.csv")
    if "convergence" in artifacts:
        if sc.convergence is None:
            raise GridWalkError("scenario has no convergence section")
        report = analysis.self_convergence(
            spec, x0, sc.run.horizon, sc.convergence.h_list,
            sc.convergence.n_paths, sc.run.master_seed,
            grid_mode=sc.convergence.grid_mode, policy=sc.kernel.policy,
            n_panels=sc.kernel.quad_panels, frontier=sc.grid.frontier,
        )
        with open(out_dir / "convergence.json", "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append("convergence.json")

    elapsed = time.perf_counter() - t_start
    summary = {
        "thinness_quantifier": sub.thinness_quantifier,
        "step": sub.step,
        "c_delta": sub.c_delta(),
        "kernel_entries": table.n_entries,
        "n_nodes": sub.n_nodes,
        "artifacts": sorted(written),
        "wall_seconds": elapsed,
    }
    print(
        f"|D|_X={summary['thinness_quantifier']:.6g} |D|={summary['step']:.6g} "
        f"c_D={summary['c_delta']:.6g} kernel_entries={summary['kernel_entries']} "
        f"nodes={summary['n_nodes']} wall={elapsed:.2f}s -> {out_dir}"
    )
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridwalk",
        description="Simulate diffusions on metric graphs by grid random walks.",
    )
    sub_parsers = parser.add_subparsers(dest="command", required=True)
    run_p = sub_parsers.add_parser("run", help="run a scenario file")
    run_p.add_argument("scenario", help="path to a scenario JSON file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the scenario master seed")
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--paths", action="store_true",
                       help="also dump raw paths CSV")
    run_p.add_argument("--convergence", action="store_true",
                       help="also run the scenario's convergence study")
    run_p.add_argument("--quad-panels", type=int, default=None,
                       help="override quadrature panel count")
    args = parser.parse_args(argv)

    try:
        text = Path(args.scenario).read_text()
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2
    try:
        sc = scenario_mod.parse_scenario(text)
        sc = scenario_mod.with_overrides(sc, seed=args.seed,
                                         quad_panels=args.quad_panels)
        run_scenario(sc, Path(args.out), dump_paths=args.paths,
                     run_convergence=args.convergence)
    except GridWalkError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
