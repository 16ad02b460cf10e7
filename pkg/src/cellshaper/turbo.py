"""Trust-region Bayesian optimization with multiple local GP models.

The optimizer maintains several hyperrectangular trust regions in the
normalized domain [0, 1]^d, each with its own local dataset and GP. Per
iteration every region proposes scrambled low-discrepancy candidates inside
its box (axis lengths rescaled by the region's ARD lengthscales), one joint
Thompson draw scores each region's candidates, and the q best-scoring
candidates across the union of regions are evaluated. Regions grow after 3
consecutive improving batches, shrink after 15 consecutive non-improving
ones, and restart from a fresh space-filling design when their base side
length falls below 2^-7.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

from .errors import NotReadyError
from .gp import Dataset, FittedGP, GPHyperparams, fit_hyperparams


@dataclass
class TurboConfig:
    """Optimizer settings. Defaults follow the standard trust-region recipe."""

    dim: int
    max_evals: int
    n_init: int = 200                    # initial space-filling observations
    n_trust_regions: int = 5
    batch_size: int = 4                  # q, selected across the union of regions
    success_tolerance: int = 3
    failure_tolerance: int = 15
    length_init: float = 0.8
    length_min: float = 2.0 ** -7
    length_max: float = 1.6
    n_candidates: int = 0                # 0 -> min(5000, 100 * dim)
    kernel: str = "matern52"
    fit_starts: int = 3
    fit_max_steps: int = 200
    refit_dense_below: int = 300         # refit involved regions every iteration up to here
    refit_interval_large: int = 5        # ... every this many growth steps above

    def __post_init__(self):
        if not 0 < self.length_min < self.length_init <= self.length_max:
            raise ValueError("need 0 < length_min < length_init <= length_max")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def candidates_per_region(self) -> int:
        return self.n_candidates if self.n_candidates > 0 else min(5000, 100 * self.dim)


@dataclass(eq=False)
class TrustRegion:
    """Local-model state: center, base side length, streak counters, data."""

    tr_id: int
    dim: int
    center: np.ndarray
    length: float
    data: Dataset
    best_value: float
    success_count: int = 0
    fail_count: int = 0
    hyperparams: GPHyperparams | None = None
    model: FittedGP | None = None
    growth_since_fit: int = 0
    n_fits: int = 0

    def state_dict(self) -> dict:
        return {
            "tr_id": self.tr_id,
            "center": self.center.tolist(),
            "length": self.length,
            "best_value": self.best_value,
            "success_count": self.success_count,
            "fail_count": self.fail_count,
            "data": self.data.to_dict(),
            "hyperparams": self.hyperparams.to_dict() if self.hyperparams else None,
        }


class HistoryRow(NamedTuple):
    eval_index: int
    tr_id: int
    f_tilde: float
    best_so_far: float


@dataclass(eq=False)
class TurboResult:
    best_x: np.ndarray
    best_y: float
    history: list
    archive: Dataset
    trust_regions: list

    def save_history_csv(self, path):
        save_history_csv(path, self.history)

    def checkpoint(self) -> dict:
        return {
            "archive": self.archive.to_dict(),
            "trust_regions": [tr.state_dict() for tr in self.trust_regions],
            "best_x": self.best_x.tolist(),
            "best_y": self.best_y,
        }

    def save_checkpoint(self, path):
        with open(path, "w") as f:
            json.dump(self.checkpoint(), f)


def save_history_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["eval_index", "tr_id", "f_tilde", "best_so_far"])
        for row in history:
            w.writerow([row.eval_index, row.tr_id,
                        f"{row.f_tilde:.10g}", f"{row.best_so_far:.10g}"])


def tr_side_lengths(length: float, lengthscales) -> np.ndarray:
    """Per-dimension side lengths: lengthscale-proportional, volume-preserving.

    Computed in the log domain; the product of the returned sides equals
    length^d before any clipping to the domain.
    """
    lam = np.asarray(lengthscales, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lengthscales must be > 0")
    log_geo_mean = np.mean(np.log(lam))
    return np.exp(np.log(lam) + math.log(length) - log_geo_mean)


def tr_bounds(center: np.ndarray, side_lengths: np.ndarray):
    """Hyperrectangle around the center, intersected with [0, 1]^d."""
    lb = np.clip(center - side_lengths / 2.0, 0.0, 1.0)
    ub = np.clip(center + side_lengths / 2.0, 0.0, 1.0)
    return lb, ub


def update_tr(tr: TrustRegion, batch_best: float, cfg: TurboConfig,
              best_x: np.ndarray | None = None) -> TrustRegion:
    """Apply one batch outcome: streak counters, resizing, center update.

    A batch is a success only if it strictly improves the region's best
    value. Resizing (doubling at the success tolerance, halving at the
    failure tolerance) resets both counters.
    """
    if batch_best > tr.best_value:
        tr.success_count += 1
        tr.fail_count = 0
        tr.best_value = float(batch_best)
        if best_x is not None:
            tr.center = np.asarray(best_x, dtype=float).copy()
    else:
        tr.fail_count += 1
        tr.success_count = 0

    if tr.success_count == cfg.success_tolerance:
        tr.length = min(cfg.length_max, 2.0 * tr.length)
        tr.success_count = 0
        tr.fail_count = 0
    elif tr.fail_count == cfg.failure_tolerance:
        tr.length = tr.length / 2.0
        tr.success_count = 0
        tr.fail_count = 0
    return tr


def lhs_points(n: int, dim: int, seed) -> np.ndarray:
    """Scrambled Latin-hypercube sample in [0, 1]^dim."""
    return qmc.LatinHypercube(d=dim, seed=seed).random(n)


def sobol_points(n: int, dim: int, seed) -> np.ndarray:
    """Scrambled Sobol points in [0, 1]^dim (drawn as the next power of 2)."""
    m = max(1, math.ceil(math.log2(max(n, 2))))
    return qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)[:n]


def maybe_restart(tr: TrustRegion, cfg: TurboConfig, seed,
                  evaluate_batch: Callable) -> TrustRegion:
    """Restart the region if its side length fell below the minimum.

    A restarted region gets a fresh Latin-hypercube design of 2*dim points
    over the full domain (evaluated via ``evaluate_batch``), escaping the
    collapsed neighborhood. Otherwise the region is returned unchanged.
    """
    if tr.length >= cfg.length_min:
        return tr
    n_seed = 2 * cfg.dim
    x0 = lhs_points(n_seed, cfg.dim, seed)
    y0 = np.asarray(evaluate_batch(x0), dtype=float)
    data = Dataset(cfg.dim, x0, y0)
    best = int(np.argmax(y0))
    return TrustRegion(tr_id=tr.tr_id, dim=cfg.dim, center=x0[best].copy(),
                       length=cfg.length_init, data=data, best_value=float(y0[best]))


def propose_batch(trs, cfg: TurboConfig, seed) -> tuple:
    """Select the q highest Thompson-scored candidates across all regions.

    Per region: scrambled Sobol candidates inside its lengthscale-shaped
    box, a coordinate perturbation mask with probability min(1, 20/d) per
    coordinate, and one joint posterior draw scoring all candidates.
    Returns (X, tr_indices) with X of shape (q, d).
    """
    for tr in trs:
        if tr.model is None or tr.hyperparams is None:
            raise NotReadyError(f"trust region {tr.tr_id} has no fitted local GP")

    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(trs))
    n_cand = cfg.candidates_per_region
    p_perturb = min(1.0, 20.0 / cfg.dim)

    all_x, all_val, all_tr = [], [], []
    for t_idx, (tr, child) in enumerate(zip(trs, children)):
        rng = np.random.default_rng(child)
        sides = tr_side_lengths(tr.length, tr.hyperparams.lengthscales)
        lb, ub = tr_bounds(tr.center, sides)
        pert = lb + (ub - lb) * sobol_points(n_cand, cfg.dim, rng)
        mask = rng.random((n_cand, cfg.dim)) < p_perturb
        cand = np.broadcast_to(tr.center, (n_cand, cfg.dim)).copy()
        cand[mask] = pert[mask]
        values = tr.model.sample_joint(cand, rng)
        all_x.append(cand)
        all_val.append(values)
        all_tr.append(np.full(n_cand, t_idx, dtype=int))

    x = np.concatenate(all_x)
    values = np.concatenate(all_val)
    tr_idx = np.concatenate(all_tr)
    order = np.argsort(-values, kind="stable")[:cfg.batch_size]
    return x[order], tr_idx[order]


def _allocate_regions(archive: Dataset, cfg: TurboConfig) -> list:
    """Build initial regions: centers at the top points, local data nearest."""
    n = len(archive)
    n_tr = min(cfg.n_trust_regions, n)
    order = np.argsort(-archive.y)
    k = min(n, max(2, math.ceil(len(archive) / cfg.n_trust_regions)))
    regions = []
    for t in range(n_tr):
        seed_idx = int(order[t])
        center_pt = archive.x[seed_idx]
        d2 = ((archive.x - center_pt) ** 2).sum(axis=1)
        nearest = np.argsort(d2, kind="stable")[:k]
        data = Dataset(cfg.dim, archive.x[nearest], archive.y[nearest])
        best = int(np.argmax(data.y))
        regions.append(TrustRegion(tr_id=t, dim=cfg.dim, center=data.x[best].copy(),
                                   length=cfg.length_init, data=data,
                                   best_value=float(data.y[best])))
    return regions


def _fit_region(tr: TrustRegion, cfg: TurboConfig, seed):
    """(Re)fit a region's local GP per the refit cadence."""
    if tr.model is not None and tr.growth_since_fit == 0:
        return
    if tr.model is not None and len(tr.data) > cfg.refit_dense_below \
            and tr.growth_since_fit < cfg.refit_interval_large:
        # Large local model: reuse hyperparameters, recondition on new data.
        tr.model = FittedGP(tr.data, tr.hyperparams)
        return
    if tr.n_fits == 0:
        tr.hyperparams = fit_hyperparams(tr.data, kernel_kind=cfg.kernel,
                                         n_starts=cfg.fit_starts,
                                         max_steps=cfg.fit_max_steps, seed=seed)
    else:
        # Warm refit: previous hyperparameters compete with the defaults.
        tr.hyperparams = fit_hyperparams(tr.data, kernel_kind=cfg.kernel,
                                         n_starts=2, max_steps=cfg.fit_max_steps,
                                         seed=seed, warm=tr.hyperparams)
    tr.model = FittedGP(tr.data, tr.hyperparams)
    tr.n_fits += 1
    tr.growth_since_fit = 0


def optimize(objective: Callable, cfg: TurboConfig,
             initial_dataset: Dataset | None = None, seed: int = 0) -> TurboResult:
    """Run the full trust-region BO loop.

    ``objective(x, eval_seed) -> float`` evaluates one normalized point;
    ``eval_seed`` is a deterministic per-evaluation seed (sources of
    evaluation noise should key off it). If ``initial_dataset`` is given it
    seeds the archive and the regions' local data without consuming budget;
    otherwise ``cfg.n_init`` Latin-hypercube points are evaluated first.
    ``cfg.max_evals`` caps the number of objective calls made here.
    """
    ss = np.random.SeedSequence(seed)
    seed_init, seed_fit, seed_prop, seed_restart, seed_evals = (
        s.generate_state(1)[0] for s in ss.spawn(5))
    eval_seed_rng = np.random.default_rng(seed_evals)

    archive = Dataset(cfg.dim) if initial_dataset is None else initial_dataset.copy()
    history: list = []
    evals_used = 0
    best_so_far = -np.inf if len(archive) == 0 else float(np.max(archive.y))
    best_eval = (None, -np.inf)  # best among points evaluated in this run

    def evaluate_batch(x, tr_id=-1):
        nonlocal evals_used, best_so_far, best_eval
        x = np.atleast_2d(x)
        out = np.empty(len(x))
        for i, xi in enumerate(x):
            eseed = int(eval_seed_rng.integers(0, 2 ** 63 - 1))
            yi = float(objective(xi, eseed))
            out[i] = yi
            archive.append(xi, yi)
            best_so_far = max(best_so_far, yi)
            if yi > best_eval[1]:
                best_eval = (xi.copy(), yi)
            history.append(HistoryRow(evals_used, tr_id, yi, best_so_far))
            evals_used += 1
        return out

    if initial_dataset is None:
        n0 = min(cfg.n_init, cfg.max_evals)
        if n0 > 0:
            evaluate_batch(lhs_points(n0, cfg.dim, seed_init), tr_id=-1)
    if len(archive) == 0:
        raise ValueError("no initial observations: provide a dataset or a budget")
    if evals_used < cfg.max_evals and len(archive) < 2:
        raise ValueError("need at least 2 initial observations to run BO iterations")

    regions = _allocate_regions(archive, cfg)
    fit_rng = np.random.default_rng(seed_fit)
    prop_rng = np.random.default_rng(seed_prop)
    restart_rng = np.random.default_rng(seed_restart)

    iteration = 0
    while evals_used < cfg.max_evals and regions:
        iteration += 1
        for tr in regions:
            _fit_region(tr, cfg, int(fit_rng.integers(0, 2 ** 31)))

        x_batch, tr_pick = propose_batch(regions, cfg, int(prop_rng.integers(0, 2 ** 31)))
        remaining = cfg.max_evals - evals_used
        if remaining < len(x_batch):
            x_batch, tr_pick = x_batch[:remaining], tr_pick[:remaining]

        for t_idx in np.unique(tr_pick):
            tr = regions[t_idx]
            sel = tr_pick == t_idx
            xs = x_batch[sel]
            ys = evaluate_batch(xs, tr_id=tr.tr_id)
            tr.data.extend(xs, ys)
            tr.growth_since_fit += 1
            ib = int(np.argmax(ys))
            update_tr(tr, float(ys[ib]), cfg, best_x=xs[ib])

        survivors = []
        for tr in regions:
            if tr.length >= cfg.length_min:
                survivors.append(tr)
                continue
            if cfg.max_evals - evals_used >= 2 * cfg.dim:
                rs = int(restart_rng.integers(0, 2 ** 31))
                survivors.append(maybe_restart(
                    tr, cfg, rs, lambda x, _id=tr.tr_id: evaluate_batch(x, tr_id=_id)))
            # else: not enough budget to reseed -> drop the region
        regions = survivors

    if best_eval[0] is not None:
        best_x, best_y = best_eval
    else:
        i = int(np.argmax(archive.y))
        best_x, best_y = archive.x[i].copy(), float(archive.y[i])
    return TurboResult(best_x=best_x, best_y=best_y, history=history,
                       archive=archive, trust_regions=regions)
