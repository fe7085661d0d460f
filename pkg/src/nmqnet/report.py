"""Running configured experiments and writing their results to disk."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dynamics import default_observables, evolve_master
from .filtering import run_ensemble
from .io_relations import equivalence_check, output_relation
from .kernels import commutator_table, gauge_coefficients, is_markovian
from .network import WaveguideKind


@dataclass
class RunResult:
    config: RunConfig
    header: list[str] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trajectory_header: list[str] | None = None
    trajectory_rows: list[list] | None = None


def _c(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _observables(cfg: RunConfig, n: int) -> dict:
    known = default_observables(n)
    names = cfg.observables or list(known)
    missing = [o for o in names if o not in known]
    if missing:
        raise ValueError(f"unknown observables {missing}; available: {list(known)}")
    return {o: known[o] for o in names}


def _classify(cfg, net, res):
    verdict = is_markovian(net)
    res.summary["markovian"] = verdict.markovian
    res.summary["reason"] = verdict.reason
    if verdict.witness:
        j, l, term = verdict.witness
        res.summary["witness"] = {"j": j, "l": l, "weight": _c(term.weight), "delay": term.delay, "phase": term.phase}


def _kernels(cfg, net, res):
    res.header = ["j", "l", "delay", "weight_re", "weight_im", "phase"]
    for (j, l), kern in commutator_table(net).items():
        for t in kern:
            res.rows.append([j, l, t.delay, t.weight.real, t.weight.imag, t.phase])
    coeffs = gauge_coefficients(net).matrix()
    res.summary["markov_coefficients"] = [[_c(v) for v in row] for row in coeffs]
    res.summary["markovian"] = is_markovian(net).markovian


def _simulate(cfg, net, res):
    obs = _observables(cfg, net.n_atoms)
    out = evolve_master(
        net, cfg.rho0(), cfg.t_end, cfg.dt, cfg.mode, cfg.exchange, obs, cfg.strict_positivity, cfg.substeps
    )
    res.header = ["time"] + list(obs)
    res.rows = [[t] + [out.expectations[o][k] for o in obs] for k, t in enumerate(out.times)]
    res.summary["residuals"] = out.residuals.as_dict()


def _filter(cfg, net, res, keep_trajectories=False):
    obs = _observables(cfg, net.n_atoms)
    ens = run_ensemble(
        net,
        cfg.rho0(),
        cfg.t_end,
        cfg.dt,
        cfg.trajectories,
        cfg.seed,
        cfg.workers,
        cfg.mode,
        cfg.strict_positivity,
        obs,
        keep_trajectories,
        substeps=cfg.substeps,
    )
    res.header = ["time"]
    for o in obs:
        res.header += [f"{o}_mean", f"{o}_stderr"]
    for k, t in enumerate(ens.times):
        row = [t]
        for o in obs:
            row += [ens.mean[o][k], ens.stderr[o][k]]
        res.rows.append(row)
    res.summary["trajectories"] = ens.M
    res.summary["residuals"] = {
        "positivity_excursions": ens.excursions,
        "min_eigenvalue": ens.min_eigenvalue,
        "max_purity": ens.max_purity,
    }
    if keep_trajectories:
        res.trajectory_header = ["trajectory", "time"] + list(obs)
        res.trajectory_rows = [
            [m, t] + [ens.trajectories[o][m, k] for o in obs]
            for m in range(ens.M)
            for k, t in enumerate(ens.times)
        ]


def _equivalence(cfg, net, res):
    from .config import atom_from_dict

    multi = atom_from_dict(cfg.equivalence["multi"])
    single = atom_from_dict(cfg.equivalence["single"])
    out = equivalence_check(multi, single, net.kind)
    res.summary["verdict"] = out.verdict
    res.summary["residuals"] = [_c(r) for r in out.residuals]
    res.summary["max_residual"] = out.max_residual
    ports = [net.port] if net.kind is WaveguideKind.SEMI_INFINITE else ["infinite-left", "infinite-right"]
    weights = {}
    for port in ports:
        w = [output_relation(net.with_atoms([a]), port).weights[1] for a in (multi, single)]
        weights[str(getattr(port, "value", port))] = {"multi": _c(w[0]), "single": _c(w[1])}
    res.summary["markov_weights"] = weights


_RUNNERS = {
    "classify": _classify,
    "kernels": _kernels,
    "simulate": _simulate,
    "filter": _filter,
    "equivalence": _equivalence,
}


def run_experiment(cfg: RunConfig, keep_trajectories: bool = False) -> RunResult:
    net = cfg.build_network()
    res = RunResult(cfg)
    start = time.perf_counter()
    if cfg.experiment == "filter":
        _filter(cfg, net, res, keep_trajectories)
    else:
        _RUNNERS[cfg.experiment](cfg, net, res)
    res.summary = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        **res.summary,
        "wall_clock_s": time.perf_counter() - start,
        "config": cfg.to_dict(),
    }
    return res


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return _c(obj)
    return obj


def emit_results(result: RunResult, out_dir) -> dict[str, Path]:
    """Write ``<name>_<experiment>.csv`` (when tabular) and ``..._summary.json``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    stem = f"{result.config.name}_{result.config.experiment}"
    written = {}
    if result.header:
        written["csv"] = out_dir / f"{stem}.csv"
        _write_csv(written["csv"], result.header, result.rows)
    if result.trajectory_rows is not None:
        written["trajectories"] = out_dir / f"{stem}_trajectories.csv"
        _write_csv(written["trajectories"], result.trajectory_header, result.trajectory_rows)
    written["summary"] = out_dir / f"{stem}_summary.json"
    written["summary"].write_text(json.dumps(_jsonable(result.summary), indent=2) + "\n")
    return written
