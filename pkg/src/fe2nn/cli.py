"""Command-line entry point: gen-mesh, gen-data, train, run, compare."""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import Dataset, SamplingSpec, generate_dataset, sample_deformation_gradients
from .errors import (ConfigError, DatasetGenerationFailed, EmptyDataset, Fe2Error, IncompatibleResults,
                     MeshError, SamplingInfeasible, TrainingDiverged)
from .fe2 import ConstitutiveProvider, SimulationResult, compare_runs, run_fe2
from .fem import structured_mesh
from .io import (config_digest, load_json, load_rve, load_run_config, macro_problem_from_config,
                 save_json, save_mesh, save_results)
from .mlp import MlpNetwork, Normalization, TrainingConfig, init_nguyen_widrow, train_lm

EXIT_OK, EXIT_USER, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("fe2nn")


def _hidden(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid hidden layer list {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden layer list must be non-empty positive integers")
    return sizes


def cmd_gen_mesh(args):
    mesh = structured_mesh(args.nx, args.ny, args.width, args.height)
    save_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, {len(mesh.elements)} elements, "
          f"{len(mesh.boundary_nodes)} boundary nodes")
    return EXIT_OK


def cmd_gen_data(args):
    rve = load_rve(args.rve, args.material, args.bc)
    spec = SamplingSpec(args.samples, args.amplitude, args.min_det, args.seed)
    samples = sample_deformation_gradients(spec)
    data, failures = generate_dataset(rve, samples, threads=args.threads)
    data.save(args.out)
    print(f"converged: {len(data)}  failed: {len(failures)}")
    return EXIT_OK


def cmd_train(args):
    data = Dataset.load(args.data)
    cfg = TrainingConfig(max_iterations=args.max_iter, target_mse=args.target_mse, seed=args.seed)
    net = init_nguyen_widrow([4, *args.hidden, 4], seed=args.seed)
    if len(data):
        net.input_norm = Normalization.fit(data.F)
        net.output_norm = Normalization.fit(data.P)
    amplitude = float(np.max(np.abs(data.F - np.eye(2).ravel()))) if len(data) else None
    net.meta = {"seed": args.seed, "dataset_hash": data.digest(), "amplitude": amplitude}
    try:
        trained, report = train_lm(net, data.F, data.P, cfg)
    except TrainingDiverged as err:
        print(f"training diverged: {err}")
        if err.report is not None:
            print(f"iterations: {err.report.iterations_used}  final mse: {err.report.final_mse}")
        return EXIT_SOLVER
    if report.iterations_used == 0:
        trained = net
    else:
        trained.meta.update(final_mse=report.final_mse)
    trained.save(args.out)
    print(f"final mse: {report.final_mse:.6e}  iterations: {report.iterations_used}  ({report.stop_reason})")
    return EXIT_OK


def cmd_run(args):
    cfg = load_run_config(args.config)
    macro = macro_problem_from_config(cfg)
    provenance = {"config_hash": config_digest(cfg)}
    if cfg["mode"] == "direct":
        rve = load_rve(cfg["rve_mesh"], cfg.get("material"), cfg.get("rve_bc", "periodic"))
        provider = ConstitutiveProvider("direct", rve=rve, tangent_policy=cfg.get("tangent_policy", "per_iteration"),
                                        rve_tol=cfg.get("rve_tol", 1e-10), threads=args.threads)
    else:
        net = MlpNetwork.load(cfg["model"])
        provenance["model_hash"] = net.digest()
        provider = ConstitutiveProvider("surrogate", net=net,
                                        tangent_policy=cfg.get("tangent_policy", "per_iteration"),
                                        threads=args.threads)
    result = run_fe2(macro, provider, tol=cfg["tol"], max_iter=cfg.get("max_iter", 50), provenance=provenance)
    save_results(result, cfg["out"])
    status = "converged" if result.converged else f"FAILED: {result.failure}"
    print(f"{len(result.increments)} increments, {status}; online {result.online_seconds:.3f} s")
    return EXIT_OK if result.converged else EXIT_SOLVER


def cmd_compare(args):
    a = SimulationResult.from_dict(load_json(args.a))
    b = SimulationResult.from_dict(load_json(args.b))
    report = compare_runs(a, b)
    if args.out:
        save_json(report.to_dict(), args.out)
    print(report.table())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fe2nn", description=__doc__)
    p.add_argument("--version", action="version", version=f"fe2nn {__version__}")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for Gauss-point and dataset loops")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-mesh", help="structured quad mesh")
    s.add_argument("--nx", type=int, required=True)
    s.add_argument("--ny", type=int, required=True)
    s.add_argument("--width", type=float, default=1.0)
    s.add_argument("--height", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_mesh)

    s = sub.add_parser("gen-data", help="sample F, solve the RVE, write the dataset CSV")
    s.add_argument("--rve", required=True)
    s.add_argument("--material")
    s.add_argument("--bc", choices=["periodic", "affine"], default="periodic")
    s.add_argument("--samples", type=int, default=500)
    s.add_argument("--amplitude", type=float, default=0.15)
    s.add_argument("--min-det", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="Levenberg-Marquardt training of the surrogate")
    s.add_argument("--data", required=True)
    s.add_argument("--hidden", type=_hidden, default=[16, 16])
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--target-mse", type=float, default=1e-7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="FE2 simulation from a run configuration")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="compare two result files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; user errors map to 1 here
        return EXIT_USER if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetGenerationFailed, TrainingDiverged) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (IncompatibleResults, ConfigError, EmptyDataset, MeshError, SamplingInfeasible, ValueError, KeyError,
            OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USER
    except Fe2Error as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
