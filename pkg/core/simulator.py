"""
Simulator — workload-recursion simulation of the FCFS PH/M/c+D queue.

Between arrivals every remaining load V_i drains at unit rate down to 0. An
arrival sees the offered wait w = min_i V_i; it joins when w < τ, adding an
Exp(μ) service to the least-loaded server (lowest index on ties), and is
lost otherwise. Lost customers leave at once; with deterministic patience
and a known workload this yields the same load path as waiting τ first.

Virtual-wait statistics (atom, mass at or beyond τ, ECDF, mean) are time
averages of min_i V_i(t) over the measured horizon, so they estimate the
stationary virtual wait for any PH arrival stream. Arrival-level fractions
(zero wait, lost) are reported alongside. Standard errors come from batch
means because successive workload states are correlated.

Replications draw from independent jump-ahead PCG64 streams and may run in a
process pool; accumulators are merged in replication order, so results do
not depend on the worker count.
"""
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from core.config import (DEFAULT_ARRIVALS, DEFAULT_BATCHES, DEFAULT_GRID,
                         DEFAULT_REPLICATIONS, DEFAULT_SEED, DEFAULT_TOLERANCES,
                         DEFAULT_WARMUP_FLOOR, MIN_MEASURED_ARRIVALS,
                         WARMUP_SERVICE_FACTOR, Tolerances)
from core.phase_type import QueueModel, ph_mean, ph_sample_batch
from core.waiting import VirtualWaitDistribution

STAT_ROWS = ("atom0", "loss", "arrival_atom0", "arrival_loss", "mean_virtual_wait")
META_ROWS = ("tau", "seed", "measured_arrivals", "replications", "batches")


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation sizes. warmup_arrivals None picks
    max(1e5, 50·c·(1/μ)/mean inter-arrival); grid None picks DEFAULT_GRID+1
    evenly spaced points on [0, τ].
    """
    seed: int = DEFAULT_SEED
    warmup_arrivals: int = None
    measured_arrivals: int = DEFAULT_ARRIVALS
    replications: int = DEFAULT_REPLICATIONS
    grid: tuple = None
    batches: int = DEFAULT_BATCHES
    workers: int = 1

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.measured_arrivals < MIN_MEASURED_ARRIVALS:
            raise ValueError(f"measured_arrivals must be >= {MIN_MEASURED_ARRIVALS}, "
                             f"got {self.measured_arrivals}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.warmup_arrivals is not None and self.warmup_arrivals < 0:
            raise ValueError("warmup_arrivals must be >= 0")
        if not 2 <= self.batches <= self.measured_arrivals:
            raise ValueError(f"batches must lie in [2, measured_arrivals], got {self.batches}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))

    def resolve_warmup(self, model: QueueModel) -> int:
        if self.warmup_arrivals is not None:
            return int(self.warmup_arrivals)
        by_service = WARMUP_SERVICE_FACTOR * model.c * (1.0 / model.mu) / ph_mean(model.ph)
        return int(max(DEFAULT_WARMUP_FLOOR, math.ceil(by_service)))

    def resolve_grid(self, tau: float) -> np.ndarray:
        if self.grid is None:
            return np.linspace(0.0, tau, DEFAULT_GRID + 1)
        grid = np.asarray(self.grid, dtype=float)
        if np.any(grid < 0) or np.any(grid > tau) or np.any(np.diff(grid) < 0):
            raise ValueError(f"grid points must be nondecreasing and lie in [0, {tau}]")
        return grid


@dataclass
class SimEstimate:
    """Pooled estimates with batch-means standard errors."""
    tau: float
    atom0_hat: float
    atom0_se: float
    loss_hat: float
    loss_se: float
    arrival_atom0_hat: float
    arrival_atom0_se: float
    arrival_loss_hat: float
    arrival_loss_se: float
    mean_wait_hat: float
    mean_wait_se: float
    ecdf_v: np.ndarray
    ecdf: np.ndarray
    mean_load: np.ndarray
    mean_load_se: np.ndarray
    seed: int = DEFAULT_SEED
    measured_arrivals: int = 0
    replications: int = 0
    batches: int = DEFAULT_BATCHES
    extra: dict = field(default_factory=dict)


# ──────────────────────────────────────────────
# Workload recursion
# ──────────────────────────────────────────────
def workload_trace(c: int, tau: float, interarrivals, services) -> dict:
    """
    Run the recursion over given inter-arrival and service draws.

    Interval j is the time between arrival j−1 (or time 0, empty system) and
    arrival j; the snapshot `start_loads[j]` is taken at its start.

    Returns:
        dict of arrays: start_loads (n×c), offered (n), admitted (n, bool),
        server (n, −1 when lost)
    """
    ia = np.asarray(interarrivals, dtype=float).tolist()
    sv = np.asarray(services, dtype=float).tolist()
    n = len(ia)
    loads = [0.0] * c
    start = []
    offered = [0.0] * n
    server = [-1] * n
    servers = range(c)
    for j in range(n):
        a = ia[j]
        start.extend(loads)
        for i in servers:
            x = loads[i] - a
            loads[i] = x if x > 0.0 else 0.0
        w = min(loads)
        offered[j] = w
        if w < tau:
            idx = loads.index(w)
            loads[idx] += sv[j]
            server[j] = idx
    server = np.array(server, dtype=int)
    return {
        "start_loads": np.array(start, dtype=float).reshape(n, c),
        "offered": np.array(offered, dtype=float),
        "admitted": server >= 0,
        "server": server,
    }


def _segment_integral(level: np.ndarray, a: np.ndarray) -> np.ndarray:
    """∫ of a load draining from `level` at unit rate with floor 0, over length a."""
    return np.where(a <= level, level * a - 0.5 * a * a, 0.5 * level * level)


def _sum_min(sorted_vals: np.ndarray, prefix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Σ_j min(x, s_j) for each x, given sorted s and its prefix sums."""
    k = np.searchsorted(sorted_vals, x, side="left")
    below = np.where(k > 0, prefix[np.maximum(k - 1, 0)], 0.0)
    return below + x * (sorted_vals.shape[0] - k)


def _occupation(upper: np.ndarray, lower: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Time spent with the virtual wait in (0, x] summed over segments [lower, upper]."""
    su, sl = np.sort(upper), np.sort(lower)
    return (_sum_min(su, np.cumsum(su), grid) - _sum_min(sl, np.cumsum(sl), grid))


def _replication(model: QueueModel, cfg: SimConfig, r: int) -> dict:
    """One replication on stream PCG64(seed).jumped(r + 1); returns raw accumulators."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed).jumped(r + 1))
    warm = cfg.resolve_warmup(model)
    n_total = warm + cfg.measured_arrivals
    ia = ph_sample_batch(model.ph, rng, n_total)
    services = rng.exponential(1.0 / model.mu, n_total)
    trace = workload_trace(model.c, model.tau, ia, services)

    tau = model.tau
    a = ia[warm:]
    start = trace["start_loads"][warm:]
    offered = trace["offered"][warm:]
    w0 = start.min(axis=1)
    w_end = np.maximum(w0 - a, 0.0)

    zero_t = np.maximum(a - w0, 0.0)
    tail_t = np.maximum(w0 - np.maximum(w_end, tau), 0.0)
    wait_int = _segment_integral(w0, a)
    load_int = _segment_integral(start, a[:, None])
    arr_zero = (offered == 0.0).astype(float)
    arr_lost = (offered >= tau).astype(float)

    grid = cfg.resolve_grid(tau)
    occupied = _occupation(w0, w_end, grid)

    splits = np.array_split(np.arange(cfg.measured_arrivals), cfg.batches)
    batch = {key: np.array([vals[idx].sum(axis=0) for idx in splits])
             for key, vals in (("time", a), ("zero", zero_t), ("tail", tail_t),
                               ("wait", wait_int), ("load", load_int),
                               ("arr_zero", arr_zero), ("arr_lost", arr_lost))}
    batch["count"] = np.array([idx.shape[0] for idx in splits], dtype=float)
    return {
        "time": float(a.sum()), "zero": float(zero_t.sum()), "tail": float(tail_t.sum()),
        "wait": float(wait_int.sum()), "load": load_int.sum(axis=0),
        "arr_zero": float(arr_zero.sum()), "arr_lost": float(arr_lost.sum()),
        "occupied": occupied, "batch": batch, "warmup": warm,
    }


def _batch_se(numer: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """Standard error of a ratio estimator from per-batch numerators and denominators."""
    means = numer / (denom[:, None] if numer.ndim > 1 else denom)
    n = means.shape[0]
    return np.std(means, axis=0, ddof=1) / np.sqrt(n)


def run_sim(model: QueueModel, cfg: SimConfig, progress: bool = False) -> SimEstimate:
    """
    Simulate `cfg.replications` independent runs and pool them.

    Args:
        model: queue model
        cfg: seeds and sizes
        progress: show a tqdm bar over replications

    Returns:
        SimEstimate with time-average virtual-wait statistics, arrival-level
        fractions and batch-means standard errors
    """
    reps = range(cfg.replications)
    bar = tqdm(total=cfg.replications, desc="Simulating", unit="rep", disable=not progress)
    results = []
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_replication, model, cfg, r) for r in reps]
            for fut in futures:
                results.append(fut.result())
                bar.update(1)
    else:
        for r in reps:
            results.append(_replication(model, cfg, r))
            bar.update(1)
    bar.close()

    def total(key):
        return sum(res[key] for res in results)

    def stacked(key):
        return np.concatenate([res["batch"][key] for res in results])

    time = total("time")
    arrivals = float(cfg.measured_arrivals * cfg.replications)
    grid = cfg.resolve_grid(model.tau)
    ecdf = (total("zero") + total("occupied")) / time
    ecdf = np.clip(np.maximum.accumulate(ecdf), 0.0, 1.0)

    bt, bc = stacked("time"), stacked("count")
    return SimEstimate(
        tau=model.tau,
        atom0_hat=total("zero") / time,
        atom0_se=float(_batch_se(stacked("zero"), bt)),
        loss_hat=total("tail") / time,
        loss_se=float(_batch_se(stacked("tail"), bt)),
        arrival_atom0_hat=total("arr_zero") / arrivals,
        arrival_atom0_se=float(_batch_se(stacked("arr_zero"), bc)),
        arrival_loss_hat=total("arr_lost") / arrivals,
        arrival_loss_se=float(_batch_se(stacked("arr_lost"), bc)),
        mean_wait_hat=total("wait") / time,
        mean_wait_se=float(_batch_se(stacked("wait"), bt)),
        ecdf_v=grid,
        ecdf=ecdf,
        mean_load=np.asarray(total("load")) / time,
        mean_load_se=_batch_se(stacked("load"), bt),
        seed=cfg.seed,
        measured_arrivals=cfg.measured_arrivals,
        replications=cfg.replications,
        batches=cfg.batches,
        extra={"warmup_arrivals": results[0]["warmup"], "total_time": time},
    )


# ──────────────────────────────────────────────
# Comparison with the analytic law
# ──────────────────────────────────────────────
def _z(hat: float, target: float, se: float) -> float:
    if se > 0:
        return (hat - target) / se
    return 0.0 if hat == target else math.copysign(math.inf, hat - target)


def compare(analytic: VirtualWaitDistribution, emp: SimEstimate,
            tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """
    KS distance of the CDFs conditional on 0 < V < τ, z-scores for the atom
    and the mass at or beyond τ, and the verdict at tol_ks / tol_z.

    Raises:
        ValueError: different τ, or ECDF grid points outside [0, τ]
    """
    tau = analytic.tau
    if not math.isclose(emp.tau, tau, rel_tol=1e-12):
        raise ValueError(f"grid mismatch: simulation tau {emp.tau} != analytic tau {tau}")
    v = np.asarray(emp.ecdf_v, dtype=float)
    if v.shape[0] == 0 or np.any(v < 0) or np.any(v > tau) or v.shape != np.shape(emp.ecdf):
        raise ValueError("grid mismatch: ECDF points must lie in [0, tau]")

    emp_cont = 1.0 - emp.atom0_hat - emp.loss_hat
    emp_cond = (np.asarray(emp.ecdf) - emp.atom0_hat) / emp_cont if emp_cont > 0 \
        else np.zeros_like(v)
    ana_cond = analytic.conditional_cdf(v, tol)
    ks = float(np.abs(emp_cond - ana_cond).max())

    z_atom = _z(emp.atom0_hat, analytic.atom0, emp.atom0_se)
    z_loss = _z(emp.loss_hat, analytic.tail, emp.loss_se)
    checks = {
        "ks": ks <= tol.tol_ks,
        "atom0": abs(z_atom) <= tol.tol_z,
        "loss": abs(z_loss) <= tol.tol_z,
    }
    return {
        "ks": ks,
        "ks_at": float(v[int(np.argmax(np.abs(emp_cond - ana_cond)))]),
        "atom0": {"analytic": analytic.atom0, "simulated": emp.atom0_hat,
                  "stderr": emp.atom0_se, "z": z_atom},
        "loss": {"analytic": analytic.tail, "simulated": emp.loss_hat,
                 "stderr": emp.loss_se, "z": z_loss},
        "arrival_loss": emp.arrival_loss_hat,
        "mean_wait": {"analytic": analytic.mean(), "simulated": emp.mean_wait_hat,
                      "stderr": emp.mean_wait_se},
        "tol_ks": tol.tol_ks,
        "tol_z": tol.tol_z,
        "checks": checks,
        "passed": all(checks.values()),
    }


def estimate_from_distribution(dist: VirtualWaitDistribution, grid) -> SimEstimate:
    """Noise-free SimEstimate of an analytic law, sampled on `grid`."""
    grid = np.asarray(grid, dtype=float)
    c = dist.c
    return SimEstimate(
        tau=dist.tau, atom0_hat=dist.atom0, atom0_se=0.0,
        loss_hat=dist.tail, loss_se=0.0,
        arrival_atom0_hat=dist.atom0, arrival_atom0_se=0.0,
        arrival_loss_hat=dist.tail, arrival_loss_se=0.0,
        mean_wait_hat=dist.mean(), mean_wait_se=0.0,
        ecdf_v=grid, ecdf=dist.cdf(grid),
        mean_load=np.full(c, np.nan), mean_load_se=np.full(c, np.nan))


# ──────────────────────────────────────────────
# CSV
# ──────────────────────────────────────────────
def _g(x) -> str:
    return f"{x:.17g}"


def write_estimate_csv(est: SimEstimate, path) -> Path:
    """`stat,estimate,stderr` rows, a blank line, then the `ecdf_v,ecdf_value` block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = dict(zip(STAT_ROWS, (
        (est.atom0_hat, est.atom0_se),
        (est.loss_hat, est.loss_se),
        (est.arrival_atom0_hat, est.arrival_atom0_se),
        (est.arrival_loss_hat, est.arrival_loss_se),
        (est.mean_wait_hat, est.mean_wait_se),
    )))
    stats = [(name, *values[name]) for name in STAT_ROWS]
    stats += [(f"mean_load_{i + 1}", est.mean_load[i], est.mean_load_se[i])
              for i in range(est.mean_load.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stat", "estimate", "stderr"])
        for name, value, se in stats:
            writer.writerow([name, _g(value), _g(se)])
        for name in META_ROWS:
            value = _g(est.tau) if name == "tau" else str(int(getattr(est, name)))
            writer.writerow([name, value, ""])
        writer.writerow([])
        writer.writerow(["ecdf_v", "ecdf_value"])
        for x, y in zip(est.ecdf_v, est.ecdf):
            writer.writerow([_g(x), _g(y)])
    return path


def read_estimate_csv(path) -> SimEstimate:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["stat", "estimate", "stderr"]:
        raise ValueError(f"{path}: missing stat header")
    blank = rows.index([])
    stats = {r[0]: (r[1], r[2]) for r in rows[1:blank]}
    if rows[blank + 1] != ["ecdf_v", "ecdf_value"]:
        raise ValueError(f"{path}: missing ecdf header")
    ecdf = np.array([[float(x) for x in r] for r in rows[blank + 2:] if r])

    def num(name):
        return float(stats[name][0]), float(stats[name][1])

    loads = sorted((k for k in stats if k.startswith("mean_load_")),
                   key=lambda k: int(k.rsplit("_", 1)[1]))
    atom, atom_se = num("atom0")
    loss, loss_se = num("loss")
    a_atom, a_atom_se = num("arrival_atom0")
    a_loss, a_loss_se = num("arrival_loss")
    wait, wait_se = num("mean_virtual_wait")
    return SimEstimate(
        tau=float(stats["tau"][0]),
        atom0_hat=atom, atom0_se=atom_se, loss_hat=loss, loss_se=loss_se,
        arrival_atom0_hat=a_atom, arrival_atom0_se=a_atom_se,
        arrival_loss_hat=a_loss, arrival_loss_se=a_loss_se,
        mean_wait_hat=wait, mean_wait_se=wait_se,
        ecdf_v=ecdf[:, 0], ecdf=ecdf[:, 1],
        mean_load=np.array([num(k)[0] for k in loads]),
        mean_load_se=np.array([num(k)[1] for k in loads]),
        seed=int(stats["seed"][0]),
        measured_arrivals=int(stats["measured_arrivals"][0]),
        replications=int(stats["replications"][0]),
        batches=int(stats["batches"][0]),
    )
