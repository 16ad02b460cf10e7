"""System-level evaluation of an antenna configuration.

Pipeline per user drop: received-signal-strength association, wideband
downlink SINR with every non-serving sector contributing interference
(full-buffer), Shannon rate with equal round-robin time share per serving
cell, and the proportional-fairness sum-log-rate objective.

``evaluate`` is a pure function of its arguments; concurrent evaluations of
different configurations are safe.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import propagation, scenario as sc
from .errors import EvaluationError
from .scenario import Scenario, UserDrop, apply_config, sample_users

OUTAGE_SINR_DB = -5.0


@dataclass(frozen=True)
class SimParams:
    """Radio bookkeeping defaults: 10 MHz at 2 GHz, -174 dBm/Hz noise, 46 dBm cells."""

    bandwidth_hz: float = 10e6
    noise_density_dbm_hz: float = -174.0
    tx_power_dbm: float = 46.0  # default for generated scenarios; antennas carry their own
    carrier_hz: float = 2e9
    rate_floor_bps: float = 1e-3
    drops_per_eval: int = 1

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be > 0")

    @property
    def noise_power_dbm(self) -> float:
        """Thermal noise over the full bandwidth (-104 dBm at defaults)."""
        return self.noise_density_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


@dataclass(eq=False)
class EvalReport:
    """Per-user table plus aggregates for one evaluated configuration."""

    kinds: tuple                 # per-user kind ('gue' | 'uav')
    positions: np.ndarray        # (n, 3)
    serving: np.ndarray          # serving antenna id per user
    sinr_db: np.ndarray
    rate_bps: np.ndarray
    objective: float             # sum of ln(rate) over objective users
    n_objective_users: int
    objective_kinds: tuple
    per_kind: dict = field(default_factory=dict)

    @property
    def geo_mean_rate(self) -> float:
        """Geometric-mean rate over the objective users: exp(f / n)."""
        return math.exp(self.objective / self.n_objective_users)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "n_objective_users": self.n_objective_users,
            "objective_kinds": list(self.objective_kinds),
            "geo_mean_rate_bps": self.geo_mean_rate,
            "per_kind": self.per_kind,
        }

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    def save_user_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["user_id", "kind", "x", "y", "z", "serving", "sinr_db", "rate_bps"])
            for i in range(len(self.kinds)):
                w.writerow([i, self.kinds[i],
                            f"{self.positions[i, 0]:.3f}", f"{self.positions[i, 1]:.3f}",
                            f"{self.positions[i, 2]:.3f}", int(self.serving[i]),
                            f"{self.sinr_db[i]:.6f}", f"{self.rate_bps[i]:.6e}"])


def _rss_matrix(drop: UserDrop, scn: Scenario, provider) -> np.ndarray:
    """(n_users, n_antennas) received signal strength in dBm."""
    tx = np.array([a.tx_power_dbm for a in scn.antennas])
    gains = propagation.total_gain_matrix(scn, drop.positions, provider)
    return tx[None, :] + gains


def associate(drop: UserDrop, scn: Scenario, provider) -> np.ndarray:
    """Serving antenna id per user: argmax received power, lowest id on ties."""
    if scn.n_antennas == 0:
        raise EvaluationError("scenario has no antennas")
    if drop.n_users == 0:
        return np.zeros(0, dtype=int)
    rss = _rss_matrix(drop, scn, provider)
    if not np.all(np.isfinite(rss)):
        bad = int(np.nonzero(~np.isfinite(rss).all(axis=1))[0][0])
        raise EvaluationError("non-finite received power", user_index=bad)
    cols = np.argmax(rss, axis=1)  # first (lowest) index wins ties
    ids = np.array([a.id for a in scn.antennas])
    return ids[cols]


def _sinr_from_rss(rss_dbm: np.ndarray, serving_col: np.ndarray,
                   noise_dbm: float) -> np.ndarray:
    """Linear-domain SINR computation from the RSS matrix, returned in dB."""
    p_mw = 10.0 ** (rss_dbm / 10.0)
    idx = np.arange(len(serving_col))
    sig = p_mw[idx, serving_col]
    interf = p_mw.sum(axis=1) - sig
    noise_mw = 10.0 ** (noise_dbm / 10.0)
    return 10.0 * np.log10(sig / (interf + noise_mw))


def all_sinr_db(drop: UserDrop, serving: np.ndarray, scn: Scenario, provider,
                params: SimParams) -> np.ndarray:
    """Downlink SINR in dB for every user under a fixed association."""
    rss = _rss_matrix(drop, scn, provider)
    col_of = {a.id: i for i, a in enumerate(scn.antennas)}
    cols = np.array([col_of[int(s)] for s in serving], dtype=int)
    return _sinr_from_rss(rss, cols, params.noise_power_dbm)


def sinr_db(user_index: int, serving: np.ndarray, drop: UserDrop, scn: Scenario,
            provider, params: SimParams) -> float:
    """Single-user SINR; same bookkeeping as the vectorized path."""
    return float(all_sinr_db(drop, serving, scn, provider, params)[user_index])


def rates_bps(sinr_db_vec: np.ndarray, serving: np.ndarray,
              params: SimParams) -> np.ndarray:
    """Shannon rate with equal time share among a cell's users, floored."""
    serving = np.asarray(serving)
    _, inverse, counts = np.unique(serving, return_inverse=True, return_counts=True)
    share = 1.0 / counts[inverse]
    linear = 10.0 ** (np.asarray(sinr_db_vec) / 10.0)
    r = share * params.bandwidth_hz * np.log2(1.0 + linear)
    return np.maximum(r, params.rate_floor_bps)


def rate_bps(user_index: int, user_sinr_db: float, serving: np.ndarray,
             params: SimParams) -> float:
    """Single-user rate under the given association."""
    n_shared = int(np.sum(np.asarray(serving) == serving[user_index]))
    linear = 10.0 ** (user_sinr_db / 10.0)
    r = params.bandwidth_hz * np.log2(1.0 + linear) / n_shared
    return float(max(r, params.rate_floor_bps))


def kpi_percentiles(report: EvalReport) -> dict:
    """10th/50th percentile rates and outage fraction per user kind."""
    out = {}
    kinds = np.array(report.kinds)
    for kind in (sc.GUE_KIND, sc.UAV_KIND):
        mask = kinds == kind
        if not np.any(mask):
            continue
        r = report.rate_bps[mask]
        out[kind] = {
            "count": int(mask.sum()),
            "p10_rate_bps": float(np.percentile(r, 10)),
            "p50_rate_bps": float(np.percentile(r, 50)),
            "outage": float(np.mean(report.sinr_db[mask] < OUTAGE_SINR_DB)),
            "log_rate_sum": float(np.log(r).sum()),
        }
    return out


def _single_drop_report(scn: Scenario, provider, params: SimParams, seed: int,
                        objective_kinds) -> EvalReport:
    drop = sample_users(scn, seed)
    if drop.n_users == 0:
        raise EvaluationError("user drop is empty")
    serving = associate(drop, scn, provider)
    s = all_sinr_db(drop, serving, scn, provider, params)
    r = rates_bps(s, serving, params)
    kinds = np.array(drop.kinds)
    obj_mask = np.isin(kinds, list(objective_kinds))
    n_obj = int(obj_mask.sum())
    if n_obj == 0:
        raise EvaluationError(f"no users of kinds {objective_kinds} in the drop")
    objective = float(np.log(r[obj_mask]).sum())
    report = EvalReport(kinds=drop.kinds, positions=drop.positions, serving=serving,
                        sinr_db=s, rate_bps=r, objective=objective,
                        n_objective_users=n_obj, objective_kinds=tuple(objective_kinds))
    report.per_kind = kpi_percentiles(report)
    return report


def _pool_reports(reports) -> EvalReport:
    """Concatenate per-drop user tables; aggregates recomputed on the pool."""
    kinds = tuple(k for rep in reports for k in rep.kinds)
    positions = np.concatenate([rep.positions for rep in reports])
    serving = np.concatenate([rep.serving for rep in reports])
    s = np.concatenate([rep.sinr_db for rep in reports])
    r = np.concatenate([rep.rate_bps for rep in reports])
    objective = float(sum(rep.objective for rep in reports))
    n_obj = int(sum(rep.n_objective_users for rep in reports))
    pooled = EvalReport(kinds=kinds, positions=positions, serving=serving,
                        sinr_db=s, rate_bps=r, objective=objective,
                        n_objective_users=n_obj,
                        objective_kinds=reports[0].objective_kinds)
    pooled.per_kind = kpi_percentiles(pooled)
    return pooled


def evaluate(x, scn: Scenario, provider, params: SimParams, seed: int,
             objective_kinds=(sc.GUE_KIND, sc.UAV_KIND)):
    """Evaluate a configuration vector on one (or more) seeded user drops.

    Returns ``(f_tilde, report)``. With ``params.drops_per_eval > 1`` the
    drops use seeds seed, seed+1, ...; f_tilde is the mean of the per-drop
    sum-log-rate values and the report pools all drops' users (its own
    ``objective`` is the pooled sum, keeping the geometric-mean identity).
    Evaluation noise comes only from user-drop randomness.
    """
    cfg_scn = apply_config(scn, x)
    n_drops = max(1, int(params.drops_per_eval))
    reports = [_single_drop_report(cfg_scn, provider, params, seed + i, objective_kinds)
               for i in range(n_drops)]
    f_tilde = float(np.mean([rep.objective for rep in reports]))
    report = reports[0] if n_drops == 1 else _pool_reports(reports)
    return f_tilde, report


def evaluate_multi_seed(x, scn: Scenario, provider, params: SimParams, seeds,
                        objective_kinds=(sc.GUE_KIND, sc.UAV_KIND)):
    """Evaluate one configuration over several explicit drop seeds.

    Returns ``(mean f_tilde, pooled report)``; used for final reporting.
    """
    cfg_scn = apply_config(scn, x)
    reports = [_single_drop_report(cfg_scn, provider, params, int(s), objective_kinds)
               for s in seeds]
    f_mean = float(np.mean([rep.objective for rep in reports]))
    return f_mean, _pool_reports(reports)
