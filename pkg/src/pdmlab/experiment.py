"""Orchestration of configured experiments: runs, sweeps, finite-N studies, certificates."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .closedloop import Trajectory, convergence_report, distance_to_set, integrate, integrate_batch
from .config import ConfigError, ExperimentConfig, StochasticConfig
from .equilibria import EquilibriumSet, dedupe, nash_set, perturbed_equilibrium
from .passivity import (
    antistorage_for,
    certify,
    check_delta_antipassivity,
    check_delta_passivity,
    memoryless_deficit,
    pbr_surplus_bound,
    pdm_certificate,
    storage_eval,
    storage_for,
)
from .stochastic import choose_rate_bound, estimate_payoff_box, simulate_finite_population, sup_deviation

CSV_FORMAT = "%.17g"
SPEED_THRESHOLD = 1e-2


def equilibrium_set(cfg: ExperimentConfig) -> EquilibriumSet:
    """The set trajectories are measured against: perturbed equilibria for logit, else Nash."""
    game = cfg.build_game()
    kind = cfg.equilibrium.kind
    if kind == "auto":
        kind = "perturbed" if cfg.protocol.kind == "logit" else "nash"
    if kind == "perturbed":
        if cfg.protocol.kind != "logit":
            raise ConfigError("equilibrium.kind perturbed needs a logit protocol")
        return perturbed_equilibrium(game, cfg.protocol.eta)
    return nash_set(game, cfg.equilibrium.grid_resolution, cfg.equilibrium.tol)


def _chunks(n_items: int, jobs: int) -> list[np.ndarray]:
    jobs = max(1, min(jobs, n_items))
    return [c for c in np.array_split(np.arange(n_items), jobs) if c.size]


def _integrate_rows(args):
    cfg_dict, rows = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    X0 = cfg.build_initial_states()[rows]
    q0 = None if cfg.pdm.q0 is None else np.tile(cfg.pdm.q0, (len(rows), 1))
    return integrate_batch(cfg.build_pdm(), cfg.build_protocol(), X0, q0, cfg.integrator.T, cfg.integrator.h)


def integrate_all(cfg: ExperimentConfig, jobs: int = 1) -> list[Trajectory]:
    """Integrate every initial condition, optionally across ``jobs`` worker processes.

    Each initial condition is integrated independently, so results do not
    depend on how they are split across workers.
    """
    n_ic = len(cfg.build_initial_states())
    chunks = _chunks(n_ic, jobs)
    payload = [(cfg.to_dict(), c) for c in chunks]
    if len(chunks) == 1:
        parts = [_integrate_rows(payload[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_integrate_rows, payload))
    return [tr for part in parts for tr in part]


def trajectory_table(traj: Trajectory, dist: np.ndarray, gap: np.ndarray, storage: np.ndarray) -> tuple[str, np.ndarray]:
    n = traj.x.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    header += ["dist_to_eq", "payoff_gap", "storage"]
    table = np.column_stack([traj.t, traj.x, traj.q, traj.p, dist, gap, storage])
    return ",".join(header), table


def write_csv(path: Path, header: str, table: np.ndarray) -> None:
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=CSV_FORMAT)


def json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=json_default) + "\n")


@dataclass
class RunReport:
    """Summary of a ``run``: per-run terminal diagnostics and emitted files."""

    runs: list
    certificate: dict
    equilibria: dict
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"runs": self.runs, "certificate": self.certificate, "equilibria": self.equilibria, "files": self.files}


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None, jobs: int = 1) -> RunReport:
    """Integrate all initial conditions, write one CSV per run and a JSON summary."""
    out = Path(out_dir or cfg.output_dir)
    pdm, protocol = cfg.build_pdm(), cfg.build_protocol()
    game = pdm.game
    eqset = equilibrium_set(cfg)
    trajs = integrate_all(cfg, jobs)
    sf = storage_for(protocol, game.mass)
    af = antistorage_for(pdm)
    pdm_cert = pdm_certificate(pdm) if cfg.checks.get("passivity") else None
    out.mkdir(parents=True, exist_ok=True)
    runs, files = [], []
    for k, tr in enumerate(trajs):
        rep = convergence_report(tr, eqset, game)
        S = storage_eval(sf, tr.x, tr.p)
        tr.storage = S
        header, table = trajectory_table(tr, rep.distance, rep.payoff_gap, S)
        path = out / f"{cfg.name}_{k}.csv"
        write_csv(path, header, table)
        files.append(str(path))
        entry = {
            "run_index": k,
            "x0": tr.x[0],
            "x_final": tr.x[-1],
            "terminal_distance": rep.terminal_distance,
            "terminal_payoff_gap": rep.terminal_gap,
            "terminal_storage": float(S[-1]),
            "time_to_1e-2": rep.time_to(SPEED_THRESHOLD),
            "projection_total": tr.projection_total,
        }
        if cfg.checks.get("passivity"):
            surplus = pbr_surplus_bound(protocol.eta) if protocol.family == "pbr" else 0.0
            pr = check_delta_passivity(tr, sf, surplus)
            entry["passivity"] = {"passed": pr.passed, "max_violation": pr.max_violation, "tolerance": pr.tolerance}
            if af is not None and pdm_cert is not None and pdm_cert.deficit is not None:
                ar = check_delta_antipassivity(tr, af, pdm_cert.deficit)
                entry["antipassivity"] = {"passed": ar.passed, "max_violation": ar.max_violation, "tolerance": ar.tolerance}
        runs.append(entry)
    report = RunReport(runs, certify(pdm, protocol), eqset.to_dict(), files)
    summary = out / f"{cfg.name}_summary.json"
    report.files.append(str(summary))
    write_json(summary, {"experiment": cfg.name, **report.to_dict()})
    return report


def sweep_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None, jobs: int = 1, limit_radius: float = 1e-3) -> dict:
    """Integrate all initial conditions and record the distinct limit points.

    ``limit_points`` are the deduplicated terminal states. ``equilibria_reached``
    lists the equilibria within ``limit_radius`` of some terminal state, and
    ``unsettled_runs`` counts runs that end farther than that from every one.
    """
    out = Path(out_dir or cfg.output_dir)
    trajs = integrate_all(cfg, jobs)
    eqset = equilibrium_set(cfg)
    finals = np.array([tr.x[-1] for tr in trajs])
    x0s = np.array([tr.x[0] for tr in trajs])
    dist = distance_to_set(finals, eqset)
    limits = dedupe(finals, limit_radius)
    settled = dist < limit_radius
    reached = [pt for pt in eqset.points if np.any(np.max(np.abs(finals[settled] - pt), axis=1) < limit_radius)]
    n = finals.shape[1]
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(["run"] + [f"x0_{i + 1}" for i in range(n)] + [f"xT_{i + 1}" for i in range(n)] + ["dist_to_eq"])
    path = out / f"{cfg.name}_sweep.csv"
    write_csv(path, header, np.column_stack([np.arange(len(trajs)), x0s, finals, dist]))
    summary = {
        "experiment": cfg.name,
        "runs": len(trajs),
        "limit_points": limits,
        "limit_radius": limit_radius,
        "equilibria_reached": reached,
        "unsettled_runs": int(np.count_nonzero(~settled)),
        "max_terminal_distance": float(dist.max()),
        "equilibria": eqset.to_dict(),
        "files": [str(path), str(out / f"{cfg.name}_sweep.json")],
    }
    write_json(out / f"{cfg.name}_sweep.json", summary)
    return summary


def _finite_task(args):
    cfg_dict, N, seed, rho, x0, T = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    pdm, protocol = cfg.build_pdm(), cfg.build_protocol()
    q0 = cfg.pdm.q0
    mean = integrate(pdm, protocol, x0, q0, T, cfg.integrator.h)
    jump = simulate_finite_population(N, protocol, pdm, x0, q0, T, rho, seed, cfg.integrator.h)
    return N, seed, sup_deviation(jump, mean), jump.states[-1]


def finite_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[Path] = None,
    jobs: int = 1,
    Ns: Optional[list] = None,
    seeds: Optional[int] = None,
    horizon: Optional[float] = None,
) -> dict:
    """Finite-population runs for every ``(N, seed)``; rows sorted by ``(N, seed)``."""
    out = Path(out_dir or cfg.output_dir)
    st = cfg.stochastic
    if st is None:
        st = StochasticConfig()
    Ns = list(Ns or st.N)
    n_seeds = seeds or st.seeds
    T = float(horizon or st.T)
    pdm, protocol = cfg.build_pdm(), cfg.build_protocol()
    if st.x0 is not None:
        x0 = np.asarray(st.x0, dtype=float)
    else:
        x0 = cfg.build_initial_states()[0]
    box = estimate_payoff_box(pdm, protocol, x0, cfg.pdm.q0, T, cfg.integrator.h)
    rho = choose_rate_bound(protocol, box, mass=pdm.mass)
    eqset = equilibrium_set(cfg)
    tasks = [(cfg.to_dict(), N, st.seed_base + s, rho, x0, T) for N in Ns for s in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_finite_task, tasks))
    else:
        results = [_finite_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    table = np.array([[N, seed, dev, float(distance_to_set(xT, eqset))] for N, seed, dev, xT in results])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}_finite.csv"
    write_csv(path, "N,seed,sup_deviation,terminal_distance_to_eq", table)
    medians = {int(N): float(np.median(table[table[:, 0] == N, 2])) for N in Ns}
    summary = {
        "experiment": cfg.name,
        "rho": rho,
        "payoff_box": [box[0], box[1]],
        "x0": x0,
        "T": T,
        "median_sup_deviation": medians,
        "files": [str(path), str(out / f"{cfg.name}_finite.json")],
    }
    write_json(out / f"{cfg.name}_finite.json", summary)
    return summary


def certify_experiment(cfg: ExperimentConfig) -> dict:
    return certify(cfg.build_pdm(), cfg.build_protocol())


def equilibria_experiment(cfg: ExperimentConfig) -> dict:
    return equilibrium_set(cfg).to_dict()


__all__ = [
    "RunReport",
    "certify_experiment",
    "equilibria_experiment",
    "equilibrium_set",
    "finite_experiment",
    "integrate_all",
    "memoryless_deficit",
    "run_experiment",
    "sweep_experiment",
]
