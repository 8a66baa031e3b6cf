"""Synthetic evaluation protocol.

Scan pairs are cut from one source cloud: each side loses an independent
random 5% of the points and ``n_cut`` points from opposite ends of a random
cut axis; the data side gets Gaussian noise and the model side a random rigid
motion. The true overlap is then ``0.95 (0.95 N - 2 n) / (0.95 N - n)``.

A trial starts each algorithm from the ground truth disturbed by a random
perturbation ``(R_p R_g, t_p + t_g)`` and counts as a success iff
``eps_R <= 0.01`` and ``eps_t <= d`` (raw translation error).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import RigidTransform, as_cloud, mean_resolution
from .pipeline import RegistrationParams, register

log = logging.getLogger(__name__)

KEEP_FRACTION = 0.95
MAX_CUT_FRACTION = 0.4
SUCCESS_ROT = 0.01


def overlap_ratio(n_points, n_cut):
    """True overlap of a generated pair for a source of ``n_points`` points."""
    a = KEEP_FRACTION * n_points
    return KEEP_FRACTION * (a - 2 * n_cut) / (a - n_cut)


def n_cut_for_overlap(n_points, xi):
    """Inverse of :func:`overlap_ratio`, rounded to the nearest integer."""
    if not 0 < xi <= KEEP_FRACTION:
        raise ValueError(f"overlap must lie in (0, {KEEP_FRACTION}], got {xi}")
    a = KEEP_FRACTION * n_points
    n = int(round(a * (KEEP_FRACTION - xi) / (2 * KEEP_FRACTION - xi)))
    if n >= MAX_CUT_FRACTION * n_points:
        raise ValueError(f"overlap {xi} needs n_cut={n}, beyond {MAX_CUT_FRACTION} N")
    return n


def random_rotation(rng) -> np.ndarray:
    """Uniformly distributed rotation (normalised Gaussian quaternion)."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def euler_rotation(ax, ay, az) -> np.ndarray:
    """``Rz(az) @ Ry(ay) @ Rx(ax)``, angles in radians."""
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def sample_surface(n_points=5000, seed=0) -> np.ndarray:
    """Deterministic sample of a bumpy, asymmetric closed surface.

    Stand-in for a scanned object: a star-shaped blob with several low-order
    lobes and anisotropic scaling, so no rigid motion other than the identity
    maps it onto itself. Points are area-uniform (rejection on the surface
    element) and centred at the origin.
    """
    rng = np.random.default_rng(seed)

    def radius(theta, phi):
        return (
            1.0
            + 0.22 * np.sin(2 * theta) * np.cos(3 * phi)
            + 0.15 * np.cos(3 * theta + 0.4)
            + 0.10 * np.sin(theta) * np.sin(5 * phi + 1.0)
            + 0.08 * np.cos(theta) * np.cos(2 * phi - 0.7)
        )

    scale = np.array([1.4, 1.0, 0.75])

    def surface(theta, phi):
        r = radius(theta, phi)
        st = np.sin(theta)
        return np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], -1) * scale

    def area_element(theta, phi, h=1e-5):
        pt = (surface(theta + h, phi) - surface(theta - h, phi)) / (2 * h)
        pp = (surface(theta, phi + h) - surface(theta, phi - h)) / (2 * h)
        return np.linalg.norm(np.cross(pt, pp), axis=-1)

    grid_t, grid_p = np.meshgrid(np.linspace(1e-3, np.pi - 1e-3, 200), np.linspace(0, 2 * np.pi, 400))
    bound = 1.05 * area_element(grid_t, grid_p).max()

    out = []
    count = 0
    while count < n_points:
        theta = rng.uniform(0.0, np.pi, 4 * n_points)
        phi = rng.uniform(0.0, 2 * np.pi, 4 * n_points)
        accept = rng.uniform(0.0, bound, theta.size) < area_element(theta, phi)
        pts = surface(theta[accept], phi[accept])
        out.append(pts)
        count += len(pts)
    pts = np.concatenate(out)[:n_points]
    return pts - pts.mean(axis=0)


@dataclass(eq=False)
class SimulatedPair:
    data: np.ndarray
    model: np.ndarray
    ground_truth: RigidTransform
    xi_true: float
    d: float
    noise_sigma: float
    n_cut: int
    seed: int


def generate_pair(source, n_cut, noise_sigma=None, rng_seed=0) -> SimulatedPair:
    """Cut a partially overlapping, ground-truthed scan pair from ``source``.

    ``noise_sigma=None`` means half the mean resolution of the model shape.
    """
    src = as_cloud(source, "source", min_points=4)
    n = len(src)
    n_cut = int(n_cut)
    if n_cut < 0 or n_cut >= MAX_CUT_FRACTION * n:
        raise ValueError(f"n_cut must lie in [0, {MAX_CUT_FRACTION} N); got {n_cut} for N={n}")
    if noise_sigma is not None and noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")

    rng = np.random.default_rng(rng_seed)
    keep = int(round(KEEP_FRACTION * n))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    proj = src @ axis

    data_keep = np.sort(rng.choice(n, keep, replace=False))
    model_keep = np.sort(rng.choice(n, keep, replace=False))
    # data loses its top end along the axis, model its bottom end
    data_order = np.argsort(-proj[data_keep], kind="stable")
    model_order = np.argsort(proj[model_keep], kind="stable")
    data_cut = data_keep[data_order[:n_cut]]
    model_cut = model_keep[model_order[:n_cut]]
    if n_cut and proj[data_cut].min() <= proj[model_cut].max():
        raise ValueError(f"n_cut={n_cut} makes the two cut regions intersect")
    data_idx = np.sort(data_keep[data_order[n_cut:]])
    model_idx = np.sort(model_keep[model_order[n_cut:]])

    truth = RigidTransform(random_rotation(rng), rng.uniform(-1.0, 1.0, 3) * np.abs(src).max())
    model = src[model_idx] @ truth.rotation.T + truth.translation
    d = mean_resolution(model)
    sigma = 0.5 * d if noise_sigma is None else float(noise_sigma)
    data = src[data_idx] + rng.normal(0.0, 1.0, (len(data_idx), 3)) * sigma

    return SimulatedPair(
        data=data,
        model=model,
        ground_truth=truth,
        xi_true=overlap_ratio(n, n_cut),
        d=d,
        noise_sigma=sigma,
        n_cut=n_cut,
        seed=int(rng_seed),
    )


def random_perturbation(angle_range_deg=5.0, trans_range=1.0, d=1.0, rng_seed=0) -> RigidTransform:
    """Euler angles ~ U[-a, a] degrees, translation components ~ U[-r d, r d]."""
    if angle_range_deg < 0 or trans_range < 0:
        raise ValueError("ranges must be >= 0")
    rng = np.random.default_rng(rng_seed)
    angles = np.deg2rad(rng.uniform(-angle_range_deg, angle_range_deg, 3))
    t = rng.uniform(-trans_range, trans_range, 3) * d
    return RigidTransform(euler_rotation(*angles), t)


def perturb(truth: RigidTransform, perturbation: RigidTransform) -> RigidTransform:
    """Initial guess ``(R_p R_g, t_p + t_g)``.

    Not group composition: the translation offsets are simply added.
    """
    return RigidTransform(perturbation.rotation @ truth.rotation, perturbation.translation + truth.translation)


def relative_errors(estimated: RigidTransform, truth: RigidTransform, d: float):
    """``(eps_R, eps_t_raw, eps_t_norm)``; ``eps_R`` is a Frobenius norm."""
    if not d > 0:
        raise ValueError("d must be > 0")
    eps_r = float(np.linalg.norm(estimated.rotation - truth.rotation, "fro"))
    eps_t = float(np.linalg.norm(estimated.translation - truth.translation))
    return eps_r, eps_t, eps_t / d


def is_success(eps_r, eps_t_raw, d):
    return eps_r <= SUCCESS_ROT and eps_t_raw <= d


@dataclass(frozen=True, eq=False)
class PairConfig:
    source: np.ndarray
    n_cut: int
    noise_sigma: Optional[float] = None
    angle_range_deg: float = 5.0
    trans_range: float = 1.0


@dataclass
class TrialReport:
    config: int
    trial: int
    seed: int
    n_cut: int
    xi_true: float
    d: float
    algorithm: str
    eps_r: float
    eps_t_raw: float
    eps_t_norm: float
    success: bool
    iterations: int
    converged: bool
    xi_estimated: float
    assignment_violations: int
    monotonicity_violations: int
    runtime: float = 0.0


CSV_FIELDS = [f for f in TrialReport.__dataclass_fields__ if f != "runtime"]


@dataclass
class CampaignReport:
    seed: int
    trials_per_config: int
    algorithms: list
    configs: list
    params: dict
    trials: list = field(default_factory=list)

    def summary(self, include_timing=False):
        rows = []
        for ci, cfg in enumerate(self.configs):
            for algo in self.algorithms:
                sel = [t for t in self.trials if t.config == ci and t.algorithm == algo]
                er = np.array([t.eps_r for t in sel])
                et = np.array([t.eps_t_raw for t in sel])
                row = {
                    "config": ci,
                    "n_cut": cfg["n_cut"],
                    "xi_true": cfg["xi_true"],
                    "algorithm": algo,
                    "trials": len(sel),
                    "success_rate": sum(t.success for t in sel) / len(sel),
                    "eps_r_mean": float(er.mean()),
                    "eps_r_median": float(np.median(er)),
                    "eps_t_mean": float(et.mean()),
                    "eps_t_median": float(np.median(et)),
                }
                if include_timing:
                    row["runtime_mean"] = float(np.mean([t.runtime for t in sel]))
                rows.append(row)
        return rows

    def success_rate(self, config, algorithm):
        sel = [t.success for t in self.trials if t.config == config and t.algorithm == algorithm]
        return sum(sel) / len(sel)

    def to_dict(self, include_timing=False):
        trials = []
        for t in self.trials:
            row = asdict(t)
            if not include_timing:
                row.pop("runtime")
            trials.append(row)
        return {
            "seed": self.seed,
            "trials_per_config": self.trials_per_config,
            "algorithms": list(self.algorithms),
            "configs": self.configs,
            "params": self.params,
            "summary": self.summary(include_timing),
            "trials": trials,
        }

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    def to_csv(self):
        """One row per (config, trial, algorithm); wall-clock time is left out so
        identical seeds give identical bytes."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for t in self.trials:
            row = []
            for name in CSV_FIELDS:
                v = getattr(t, name)
                row.append(repr(v) if isinstance(v, float) else str(v))
            writer.writerow(row)
        return buf.getvalue()


def trial_seed(rng_seed, config_index, trial):
    return int(np.random.SeedSequence(rng_seed, spawn_key=(config_index, trial)).generate_state(1)[0])


def run_trial(config: PairConfig, config_index, trial, algorithms, params, rng_seed):
    """Generate one pair and run every algorithm on it from the same start."""
    seed = trial_seed(rng_seed, config_index, trial)
    pair = generate_pair(config.source, config.n_cut, config.noise_sigma, seed)
    pert = random_perturbation(config.angle_range_deg, config.trans_range, pair.d, seed + 1)
    init = perturb(pair.ground_truth, pert)
    reports = []
    for algo in algorithms:
        p = RegistrationParams(**{**params, "algorithm": algo})
        try:
            res = register(pair.data, pair.model, init, p)
            T, iters, conv, xi, av, mv, rt = (res.transform, res.iterations, res.converged, res.xi_final,
                                              res.assignment_violations, res.monotonicity_violations, res.runtime)
        except Exception as exc:  # a failed trial must never abort a campaign
            log.warning("trial %d/%d %s failed: %s", config_index, trial, algo, exc)
            T, iters, conv, xi, av, mv, rt = init, 0, False, float("nan"), 0, 0, 0.0
        er, et, etn = relative_errors(T, pair.ground_truth, pair.d)
        reports.append(TrialReport(
            config=config_index, trial=trial, seed=seed, n_cut=pair.n_cut, xi_true=pair.xi_true, d=pair.d,
            algorithm=algo, eps_r=er, eps_t_raw=et, eps_t_norm=etn, success=is_success(er, et, pair.d),
            iterations=iters, converged=conv, xi_estimated=xi, assignment_violations=av,
            monotonicity_violations=mv, runtime=rt,
        ))
    return reports


def _run_trial_job(args):
    return run_trial(*args)


def default_workers():
    cap = os.environ.get("HSA_ICP_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def run_monte_carlo(configs, algorithms: Sequence[str], trials: int, params: Optional[RegistrationParams] = None,
                    rng_seed: int = 0, workers: Optional[int] = None) -> CampaignReport:
    """Run ``trials`` trials per pair configuration for every algorithm.

    Trial ``k`` of configuration ``j`` draws everything from a seed derived
    from ``(rng_seed, j, k)``, so the report does not depend on ``workers`` or
    on scheduling order.
    """
    if isinstance(configs, PairConfig):
        configs = [configs]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    algorithms = list(algorithms)
    base = (params or RegistrationParams()).to_dict()
    base.pop("algorithm")
    workers = default_workers() if workers is None else max(1, int(workers))

    jobs = [(cfg, j, k, algorithms, base, rng_seed) for j, cfg in enumerate(configs) for k in range(trials)]
    if workers == 1:
        results = [_run_trial_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_job, jobs))

    cfg_meta = []
    for cfg in configs:
        n = len(cfg.source)
        cfg_meta.append({
            "n_points": n,
            "n_cut": int(cfg.n_cut),
            "xi_true": overlap_ratio(n, cfg.n_cut),
            "noise_sigma": cfg.noise_sigma,
            "angle_range_deg": cfg.angle_range_deg,
            "trans_range": cfg.trans_range,
        })
    report = CampaignReport(rng_seed, trials, algorithms, cfg_meta, base)
    for chunk in results:
        report.trials.extend(chunk)
    return report
