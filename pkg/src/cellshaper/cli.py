"""Command-line interface.

Subcommands: generate-scenario, baseline, optimize, transfer,
evaluate-config, export-gainmap. Exit codes: 0 success, 2 configuration
error, 3 evaluation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import gp
from .errors import (CellshaperError, ConfigError, CoverageError, EvaluationError,
                     InfeasibleScenarioError, InsufficientSourceError)
from .harness import (build_provider, build_scenario, load_experiment_config,
                      run_baseline, run_optimization, run_transfer_study, write_json)
from .propagation import export_analytic_gainmap, write_gainmap
from .scenario import generate_synthetic_scenario, load_scenario, save_scenario
from .simulator import evaluate_multi_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVAL = 3


def _load_cfg(args):
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    cfg = load_experiment_config(args.config)
    overrides = {}
    if getattr(args, "out_dir", None):
        overrides["out_dir"] = args.out_dir
    if getattr(args, "max_evals", None) is not None:
        overrides["max_evals"] = args.max_evals
    if getattr(args, "case", None):
        overrides["case"] = args.case
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _cmd_generate_scenario(args):
    scn = generate_synthetic_scenario(args.n_sites, args.seed, args.corridors)
    save_scenario(args.output, scn)
    print(f"wrote {args.output}: {len(scn.sites)} sites, {scn.n_antennas} antennas, "
          f"{len(scn.buildings)} buildings, {len(scn.corridors)} corridors")
    return EXIT_OK


def _cmd_baseline(args):
    cfg = _load_cfg(args)
    f_mean, report = run_baseline(cfg)
    print(f"baseline mean objective {f_mean:.3f}, "
          f"geo-mean rate {report.geo_mean_rate:.3e} bit/s")
    return EXIT_OK


def _cmd_optimize(args):
    cfg = _load_cfg(args)
    for seed in cfg.seeds:
        res = run_optimization(cfg, seed)
        print(f"seed {seed}: best f {res.best_f:.3f} "
              f"(baseline {res.baseline_f:.3f}); artifacts in "
              f"{os.path.join(cfg.out_dir, f'seed_{seed}')}")
    return EXIT_OK


def _cmd_transfer(args):
    cfg = _load_cfg(args)
    if args.target_fraction is not None:
        from .harness import TransferSpec
        spec = TransferSpec(source_archive=args.source_archive or
                            (cfg.transfer.source_archive if cfg.transfer else None),
                            target_fraction=args.target_fraction)
        cfg = dataclasses.replace(cfg, transfer=spec)
        source = gp.Dataset.load(spec.source_archive)
        for seed in cfg.seeds:
            out = os.path.join(cfg.out_dir, f"fraction_{args.target_fraction:g}",
                               f"seed_{seed}")
            res = run_optimization(cfg, seed, out_dir=out, source=source)
            print(f"fraction {args.target_fraction:g} seed {seed}: "
                  f"best f {res.best_f:.3f}")
        return EXIT_OK
    src_path = args.source_archive or (cfg.transfer.source_archive if cfg.transfer else None)
    if not src_path:
        raise ConfigError("transfer needs a source archive (config or --source-archive)")
    source = gp.Dataset.load(src_path)
    rows, _ = run_transfer_study(cfg, source)
    for row in rows:
        print(f"fraction {row['fraction']:g} seed {row['seed']}: "
              f"final rate ratio {row['ratio_to_full']:.3f}")
    return EXIT_OK


def _cmd_evaluate_config(args):
    scn = load_scenario(args.scenario)
    with open(args.config_vector) as f:
        doc = json.load(f)
    if "x" in doc:
        x = np.asarray(doc["x"], dtype=float)
    else:
        x = np.concatenate([np.asarray(doc["tilt_deg"], dtype=float),
                            np.asarray(doc["v_hpbw_deg"], dtype=float)])
    if args.config:
        cfg = load_experiment_config(args.config)
        provider = build_provider(dataclasses.replace(cfg, scenario_file=args.scenario), scn)
        sim = cfg.sim
    else:
        from .harness import ExperimentConfig
        cfg = ExperimentConfig(scenario_file=args.scenario)
        provider = build_provider(cfg, scn)
        sim = cfg.sim
    seeds = [int(s) for s in args.seeds.split(",")]
    f_mean, report = evaluate_multi_seed(x, scn, provider, sim, seeds)
    write_json(args.output, {"f_tilde_mean": f_mean, **report.to_dict()})
    print(f"mean objective {f_mean:.3f}; report -> {args.output}")
    return EXIT_OK


def _cmd_export_gainmap(args):
    scn = load_scenario(args.scenario)
    heights = [float(h) for h in args.heights.split(",")]
    from .propagation import AnalyticParams
    gm = export_analytic_gainmap(scn, AnalyticParams(seed=args.seed), args.cell_size,
                                 heights)
    write_gainmap(args.output, gm)
    print(f"wrote {args.output}: {gm.nx}x{gm.ny} cells, {len(gm.heights)} layers, "
          f"{len(gm.antenna_ids)} antennas")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellshaper",
                                description="Antenna tilt/beamwidth optimization toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-scenario", help="write a synthetic deployment JSON")
    g.add_argument("--n-sites", type=int, default=16)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--corridors", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_cmd_generate_scenario)

    for name, fn, extra in [("baseline", _cmd_baseline, ()),
                            ("optimize", _cmd_optimize, ("max_evals", "case")),
                            ("transfer", _cmd_transfer, ("max_evals", "case"))]:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML/JSON experiment config")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out-dir", default=None)
        if "max_evals" in extra:
            s.add_argument("--max-evals", type=int, default=None)
        if "case" in extra:
            s.add_argument("--case", choices=["gue_only", "gue_and_uav"], default=None)
        if name == "transfer":
            s.add_argument("--target-fraction", type=float, default=None,
                           choices=[0.0, 0.5, 1.0])
            s.add_argument("--source-archive", default=None)
        s.set_defaults(func=fn)

    e = sub.add_parser("evaluate-config", help="evaluate a saved config vector")
    e.add_argument("--scenario", required=True)
    e.add_argument("--config-vector", required=True,
                   help="JSON with 'x' or 'tilt_deg'+'v_hpbw_deg'")
    e.add_argument("--config", default=None, help="optional experiment config")
    e.add_argument("--seeds", default="0", help="comma-separated drop seeds")
    e.add_argument("-o", "--output", default="report.json")
    e.set_defaults(func=_cmd_evaluate_config)

    x = sub.add_parser("export-gainmap", help="sample the analytic model to a gain map")
    x.add_argument("--scenario", required=True)
    x.add_argument("--cell-size", type=float, default=20.0)
    x.add_argument("--heights", default="1.5,150.0", help="comma-separated layer heights")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("-o", "--output", required=True)
    x.set_defaults(func=_cmd_export_gainmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, CoverageError, InfeasibleScenarioError,
            InsufficientSourceError) as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        return EXIT_EVAL
    except CellshaperError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
