"""Experiment orchestration: case-study runs, baselines, transfer learning.

Joins the pieces: builds the scenario and gain provider from an experiment
configuration, wraps the simulator objective behind the normalized-domain
adapter, assembles initial datasets (optionally mixing in observations from
a source scenario), runs the optimizer, and emits reproducible artifacts
(history CSV, best-config JSON, final report JSON, convergence CSVs).

All files are written atomically (write-temp-then-rename).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import gp, turbo
from .errors import ConfigError, InsufficientSourceError
from .propagation import (AnalyticGainProvider, AnalyticParams, GainMapProvider,
                          read_gainmap)
from .scenario import (GUE_KIND, UAV_KIND, Scenario, baseline_config, config_dim,
                       generate_synthetic_scenario, load_scenario)
from .simulator import SimParams, evaluate, evaluate_multi_seed

TILT_LO, TILT_HI = -90.0, 90.0
HPBW_LO, HPBW_HI = 1.0, 360.0  # lower edge mapped to 1 deg to avoid the degenerate bound
TRANSFER_FRACTIONS = (1.0, 0.5, 0.0)
FINAL_REPORT_SEEDS = 20


@dataclass
class TransferSpec:
    source_archive: str | None = None  # path to a Dataset JSON from a completed run
    target_fraction: float = 1.0

    def __post_init__(self):
        if self.target_fraction not in (0.0, 0.5, 1.0):
            raise ConfigError("target_fraction must be one of 0.0, 0.5, 1.0")
        if self.target_fraction < 1.0 and not self.source_archive:
            raise ConfigError("target_fraction < 1 requires a source archive")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run from (config, seeds)."""

    scenario_file: str | None = None
    n_sites: int = 16
    scenario_seed: int = 1
    with_corridors: bool = True
    provider_kind: str = "analytic"
    gainmap_file: str | None = None
    analytic: AnalyticParams = field(default_factory=AnalyticParams)
    sim: SimParams = field(default_factory=SimParams)
    case: str = "gue_and_uav"
    seeds: tuple = (0,)
    out_dir: str = "runs"
    max_evals: int = 400          # optimizer evaluations after initialization
    n_init: int = 200
    n_trust_regions: int = 5
    batch_size: int = 4
    n_candidates: int = 0         # 0 -> optimizer default min(5000, 100 d)
    kernel: str = "matern52"
    transfer: TransferSpec | None = None
    final_report_seeds: int = FINAL_REPORT_SEEDS

    def __post_init__(self):
        if self.case not in ("gue_only", "gue_and_uav"):
            raise ConfigError(f"unknown case {self.case!r}")
        if self.provider_kind not in ("analytic", "gainmap"):
            raise ConfigError(f"unknown provider {self.provider_kind!r}")
        if self.provider_kind == "gainmap" and not self.gainmap_file:
            raise ConfigError("gainmap provider requires gainmap_file")

    @property
    def objective_kinds(self):
        return (GUE_KIND,) if self.case == "gue_only" else (GUE_KIND, UAV_KIND)


def _dataclass_from_dict(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    try:
        scn = d.pop("scenario", {})
        kwargs = {
            "scenario_file": scn.get("file"),
            "n_sites": scn.get("n_sites", 16),
            "scenario_seed": scn.get("seed", 1),
            "with_corridors": scn.get("with_corridors", True),
        }
        prov = d.pop("provider", {})
        kwargs["provider_kind"] = prov.pop("kind", "analytic")
        kwargs["gainmap_file"] = prov.pop("gainmap", None)
        if prov:
            kwargs["analytic"] = _dataclass_from_dict(AnalyticParams, prov)
        if "sim" in d:
            kwargs["sim"] = _dataclass_from_dict(SimParams, d.pop("sim"))
        if "transfer" in d:
            kwargs["transfer"] = _dataclass_from_dict(TransferSpec, d.pop("transfer"))
        opt = d.pop("optimizer", {})
        for key in ("max_evals", "n_init", "n_trust_regions", "batch_size",
                    "n_candidates", "kernel"):
            if key in opt:
                kwargs[key] = opt.pop(key)
        if opt:
            raise ConfigError(f"unknown optimizer keys: {sorted(opt)}")
        exp = d.pop("experiment", {})
        for key in ("case", "seeds", "out_dir", "final_report_seeds"):
            if key in exp:
                kwargs[key] = exp.pop(key)
        if exp:
            raise ConfigError(f"unknown experiment keys: {sorted(exp)}")
        if d:
            raise ConfigError(f"unknown top-level config keys: {sorted(d)}")
        if "seeds" in kwargs and not isinstance(kwargs.get("seeds"), (list, tuple)):
            raise ConfigError("experiment.seeds must be a list")
        if isinstance(kwargs.get("seeds"), list):
            kwargs["seeds"] = tuple(kwargs["seeds"])
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_experiment_config(path) -> ExperimentConfig:
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as f:
            return experiment_config_from_dict(tomllib.load(f))
    with open(path) as f:
        return experiment_config_from_dict(json.load(f))


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    if cfg.scenario_file:
        return load_scenario(cfg.scenario_file)
    return generate_synthetic_scenario(cfg.n_sites, cfg.scenario_seed, cfg.with_corridors)


def build_provider(cfg: ExperimentConfig, scn: Scenario):
    if cfg.provider_kind == "gainmap":
        return GainMapProvider(scn, read_gainmap(cfg.gainmap_file))
    return AnalyticGainProvider(scn, cfg.analytic)


# ---------------------------------------------------------------------------
# Normalized-domain adapter

def physical_bounds(scn: Scenario):
    """Per-dimension physical bounds: tilts then vertical HPBWs."""
    n = scn.n_antennas
    lo = np.concatenate([np.full(n, TILT_LO), np.full(n, HPBW_LO)])
    hi = np.concatenate([np.full(n, TILT_HI), np.full(n, HPBW_HI)])
    return lo, hi


def to_physical(x01, lo, hi):
    return lo + np.clip(np.asarray(x01, float), 0.0, 1.0) * (hi - lo)


def to_normalized(x_phys, lo, hi):
    return (np.asarray(x_phys, float) - lo) / (hi - lo)


@dataclass
class _EvalRecord:
    x01: np.ndarray
    f_tilde: float
    n_users: int
    tag: str  # 'init' | 'baseline' | 'bo'

    @property
    def geo_mean_rate(self):
        return math.exp(self.f_tilde / self.n_users)


def make_objective(scn: Scenario, provider, sim: SimParams, kinds, lo, hi, record):
    """Objective closure for the optimizer; appends every evaluation to record."""

    def objective(x01, eval_seed, tag="bo"):
        x_phys = to_physical(x01, lo, hi)
        f, rep = evaluate(x_phys, scn, provider, sim, int(eval_seed) % (2 ** 31 - 1),
                          objective_kinds=kinds)
        record.append(_EvalRecord(np.asarray(x01, float).copy(), f,
                                  rep.n_objective_users, tag))
        return f

    return objective


def build_initial_dataset(n_init: int, target_fraction: float,
                          source: gp.Dataset | None, objective, dim: int,
                          seed: int) -> gp.Dataset:
    """Mix fresh target evaluations with observations copied from a source run.

    ``target_fraction`` of ``n_init`` points are drawn as a Latin hypercube
    and evaluated on the target objective; the remainder are copied verbatim
    (x and recorded y) from the source dataset.
    """
    n_target = int(round(target_fraction * n_init))
    n_source = n_init - n_target
    if n_source > 0:
        if source is None or len(source) < n_source:
            raise InsufficientSourceError(
                f"need {n_source} source observations, have "
                f"{0 if source is None else len(source)}")
        if source.dim != dim:
            raise InsufficientSourceError("source dataset dimension mismatch")

    ds = gp.Dataset(dim)
    ss = np.random.SeedSequence([seed, 0x1D5])
    if n_target > 0:
        x0 = turbo.lhs_points(n_target, dim, int(ss.generate_state(1)[0]))
        eval_rng = np.random.default_rng(ss.spawn(1)[0])
        for x in x0:
            ds.append(x, objective(x, int(eval_rng.integers(0, 2 ** 31)), tag="init"))
    if n_source > 0:
        pick_rng = np.random.default_rng(ss.spawn(2)[1])
        idx = pick_rng.choice(len(source), size=n_source, replace=False)
        for i in sorted(idx):
            ds.append(source.x[i], float(source.y[i]))
    return ds


# ---------------------------------------------------------------------------
# Atomic artifact output

def _atomic_write(path, writer):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(path, lambda f: json.dump(obj, f, indent=1))


def write_convergence_csv(path, records):
    """Per-evaluation objective and best-so-far geometric-mean rate."""
    def writer(f):
        w = csv.writer(f)
        w.writerow(["eval_index", "tag", "f_tilde", "geo_mean_rate", "best_geo_mean_rate"])
        best = -np.inf
        for i, r in enumerate(records):
            best = max(best, r.geo_mean_rate)
            w.writerow([i, r.tag, f"{r.f_tilde:.10g}",
                        f"{r.geo_mean_rate:.10g}", f"{best:.10g}"])
    _atomic_write(path, writer)


def write_history_csv(path, history):
    def writer(f):
        w = csv.writer(f)
        w.writerow(["eval_index", "tr_id", "f_tilde", "best_so_far"])
        for row in history:
            w.writerow([row.eval_index, row.tr_id,
                        f"{row.f_tilde:.10g}", f"{row.best_so_far:.10g}"])
    _atomic_write(path, writer)


# ---------------------------------------------------------------------------
# Runs

@dataclass(eq=False)
class RunResult:
    seed: int
    best_x01: np.ndarray
    best_x_phys: np.ndarray
    best_f: float
    baseline_f: float
    records: list            # every target evaluation, in order
    history: list            # optimizer history rows
    final_report: object
    baseline_report: object


def _final_seeds(run_seed: int, count: int):
    ss = np.random.SeedSequence([run_seed, 0xF17A1])
    return [int(s) for s in ss.generate_state(count)]


def run_baseline(cfg: ExperimentConfig, out_dir=None):
    """Evaluate the uniform -12 deg / 10 deg configuration over cfg.seeds."""
    scn = build_scenario(cfg)
    provider = build_provider(cfg, scn)
    x = baseline_config(scn)
    f_mean, report = evaluate_multi_seed(x, scn, provider, cfg.sim, cfg.seeds,
                                         objective_kinds=cfg.objective_kinds)
    out_dir = out_dir or cfg.out_dir
    write_json(os.path.join(out_dir, "baseline_report.json"),
               {"f_tilde_mean": f_mean, **report.to_dict()})
    return f_mean, report


def run_optimization(cfg: ExperimentConfig, seed: int, out_dir=None,
                     source: gp.Dataset | None = None,
                     scenario_override: Scenario | None = None) -> RunResult:
    """One optimization run: init design (+ baseline point), BO loop, report.

    The uniform baseline is always evaluated and injected into the initial
    design (one extra evaluation), so the run's best observed value can
    never fall below the baseline's observed value.
    """
    scn = scenario_override or build_scenario(cfg)
    provider = build_provider(cfg, scn)
    lo, hi = physical_bounds(scn)
    dim = config_dim(scn)
    kinds = cfg.objective_kinds
    records: list = []
    objective = make_objective(scn, provider, cfg.sim, kinds, lo, hi, records)

    fraction = cfg.transfer.target_fraction if cfg.transfer else 1.0
    if cfg.transfer and cfg.transfer.source_archive and source is None:
        source = gp.Dataset.load(cfg.transfer.source_archive)
    ds = build_initial_dataset(cfg.n_init, fraction, source, objective, dim, seed)

    x01_base = to_normalized(baseline_config(scn), lo, hi)
    f_base = objective(x01_base, _final_seeds(seed, 1)[0], tag="baseline")
    ds.append(x01_base, f_base)

    tcfg = turbo.TurboConfig(
        dim=dim, max_evals=cfg.max_evals, n_init=cfg.n_init,
        n_trust_regions=cfg.n_trust_regions, batch_size=cfg.batch_size,
        n_candidates=cfg.n_candidates, kernel=cfg.kernel)
    result = turbo.optimize(objective, tcfg, initial_dataset=ds, seed=seed)

    # Best over the evaluations made on this scenario (source points excluded).
    best = max((r for r in records), key=lambda r: r.f_tilde)
    best_x_phys = to_physical(best.x01, lo, hi)

    fin_seeds = _final_seeds(seed, cfg.final_report_seeds)
    _, final_report = evaluate_multi_seed(best_x_phys, scn, provider, cfg.sim,
                                          fin_seeds, objective_kinds=kinds)
    _, baseline_report = evaluate_multi_seed(baseline_config(scn), scn, provider,
                                             cfg.sim, fin_seeds, objective_kinds=kinds)

    out_dir = out_dir or os.path.join(cfg.out_dir, f"seed_{seed}")
    n = scn.n_antennas
    write_history_csv(os.path.join(out_dir, "history.csv"), result.history)
    write_convergence_csv(os.path.join(out_dir, "convergence.csv"), records)
    write_json(os.path.join(out_dir, "best_config.json"), {
        "x01": best.x01.tolist(),
        "tilt_deg": best_x_phys[:n].tolist(),
        "v_hpbw_deg": best_x_phys[n:].tolist(),
        "f_tilde_observed": best.f_tilde,
        "baseline_f_tilde": f_base,
    })
    write_json(os.path.join(out_dir, "report.json"), final_report.to_dict())
    write_json(os.path.join(out_dir, "baseline_report.json"), baseline_report.to_dict())
    archive = gp.Dataset(dim, np.array([r.x01 for r in records]),
                         np.array([r.f_tilde for r in records]))
    archive.save(os.path.join(out_dir, "archive.json"))

    return RunResult(seed=seed, best_x01=best.x01, best_x_phys=best_x_phys,
                     best_f=best.f_tilde, baseline_f=f_base, records=records,
                     history=result.history, final_report=final_report,
                     baseline_report=baseline_report)


def remap_corridor_heights(scn: Scenario, hmin: float, hmax: float) -> Scenario:
    """Same geometry, UAV corridors moved to a new altitude band."""
    corridors = tuple(dataclasses.replace(c, hmin=hmin, hmax=hmax)
                      for c in scn.corridors)
    return dataclasses.replace(scn, corridors=corridors)


def _level_reach_iteration(records, level):
    """Index of the first evaluation whose best-so-far rate reaches level."""
    best = -np.inf
    for i, r in enumerate(records):
        best = max(best, r.geo_mean_rate)
        if best >= level:
            return i
    return None


def run_transfer_study(cfg: ExperimentConfig, source_archive: gp.Dataset,
                       target_hmin: float = 40.0, target_hmax: float = 60.0):
    """Optimize the corridor-height-shifted target at three initial-data mixes.

    For each seed and each target fraction (1.0, 0.5, 0.0 of the initial
    dataset evaluated on the target, the rest copied from the source
    archive) the same post-initialization budget is spent. Emits one
    convergence CSV per fraction and a summary table with final
    geometric-mean-rate ratios relative to the fraction-1.0 run.
    """
    base_scn = build_scenario(cfg)
    target_scn = remap_corridor_heights(base_scn, target_hmin, target_hmax)

    rows = []
    results = {}
    for fraction in TRANSFER_FRACTIONS:
        frac_cfg = dataclasses.replace(
            cfg, transfer=TransferSpec(source_archive="<in-memory>",
                                       target_fraction=fraction))
        if fraction == 1.0:
            frac_cfg = dataclasses.replace(cfg, transfer=None)
        for seed in cfg.seeds:
            out = os.path.join(cfg.out_dir, f"fraction_{fraction:g}", f"seed_{seed}")
            res = run_optimization(frac_cfg, seed, out_dir=out,
                                   source=source_archive,
                                   scenario_override=target_scn)
            results[(fraction, seed)] = res

    for fraction in TRANSFER_FRACTIONS:
        def writer(f, fraction=fraction):
            w = csv.writer(f)
            w.writerow(["seed", "eval_index", "tag", "f_tilde", "geo_mean_rate",
                        "best_geo_mean_rate"])
            for seed in cfg.seeds:
                best = -np.inf
                for i, r in enumerate(results[(fraction, seed)].records):
                    best = max(best, r.geo_mean_rate)
                    w.writerow([seed, i, r.tag, f"{r.f_tilde:.10g}",
                                f"{r.geo_mean_rate:.10g}", f"{best:.10g}"])
        _atomic_write(os.path.join(cfg.out_dir, f"convergence_{fraction:g}.csv"), writer)

    for seed in cfg.seeds:
        ref = results[(1.0, seed)]
        ref_final = max(r.geo_mean_rate for r in ref.records)
        ref_iters = _level_reach_iteration(ref.records, 0.95 * ref_final)
        for fraction in TRANSFER_FRACTIONS:
            res = results[(fraction, seed)]
            final = max(r.geo_mean_rate for r in res.records)
            iters = _level_reach_iteration(res.records, 0.95 * ref_final)
            rows.append({
                "fraction": fraction,
                "seed": seed,
                "final_geo_mean_rate": final,
                "ratio_to_full": final / ref_final,
                "evals_to_95pct_of_full": iters,
                "full_run_evals_to_95pct": ref_iters,
            })
    write_json(os.path.join(cfg.out_dir, "transfer_summary.json"), rows)
    return rows, results
