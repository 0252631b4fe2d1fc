"""Command-line front end: transport runs, exact references, analysis."""

from __future__ import annotations

import csv
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .analysis import GapTable, fit_nu, fit_z
from .checkpoint import CheckpointError, checkpoint_filename, restore_track, save_checkpoint
from .config import ConfigError, config_digest, load_config
from .exact import chi0_exact_1d, exact_diagonalize, exact_low_spectrum_1d, gap_1d
from .lattice import Lattice, TfimHamiltonian
from .observables import magnetization_moments
from .reference import build_reference_state
from .sampler import sample
from .transport import TransportPlan, _stable_seed, transport_eigenstate

RESULT_COLUMNS = [
    "run_id", "track", "lambda", "energy", "energy_stderr", "variance",
    "v_score", "infidelity", "m2", "m4", "converged", "iterations",
]


@click.group()
def main():
    """Adiabatic eigenstate transport for the transverse-field Ising model."""


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _track_job(args):
    plan, track, ckpt_dir, digest, resume_states = args
    counter = {"step": len(resume_states)}

    def write(state):
        path = Path(ckpt_dir) / checkpoint_filename(state.track, counter["step"])
        save_checkpoint(path, state, digest, plan.seed, counter["step"])
        counter["step"] += 1

    try:
        states = transport_eigenstate(plan, track, on_checkpoint=write, resume=resume_states or None)
        return track.label, states, None
    except Exception:
        return track.label, None, traceback.format_exc()


def _write_results(path, run_id: str, plan: TransportPlan, results: dict):
    rows = []
    for label in sorted(results):
        ref = build_reference_state(plan.lattice, next(t for t in plan.tracks if t.label == label).excitation)
        for step, state in enumerate(results[label]):
            scfg = replace(plan.sampler, seed=_stable_seed(plan.seed, label, step, "moments"))
            batch = sample(state.parameters, ref, scfg)
            m2, m4 = magnetization_moments(batch)
            rows.append({
                "run_id": run_id,
                "track": label,
                "lambda": state.coupling,
                "energy": state.energy,
                "energy_stderr": state.energy_stderr,
                "variance": state.variance,
                "v_score": state.v_score,
                "infidelity": None,
                "m2": m2,
                "m4": m4,
                "converged": state.converged,
                "iterations": state.iterations,
            })
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run file (YAML).")
@click.option("--resume", is_flag=True, help="Continue from checkpoints in the output directory.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--output-dir", type=click.Path(), default=None, help="Override the output directory.")
@click.option("--full-summation", is_flag=True, help="Exact basis summation instead of Metropolis sampling.")
@click.option("--workers", type=int, default=1, help="Process count for parallel tracks.")
def transport(config_path, resume, seed, output_dir, full_summation, workers):
    """Carry all configured tracks across the coupling grid."""
    try:
        cfg = load_config(config_path)
    except FileNotFoundError:
        _fail(f"config file not found: {config_path}", 2)
    except ConfigError as exc:
        _fail(str(exc), 2)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=output_dir)
    if full_summation:
        cfg = replace(cfg, sampler=replace(cfg.sampler, mode="full-summation"))

    digest = config_digest(cfg)
    run_id = cfg.run_id()
    plan = cfg.plan()
    out = Path(cfg.output_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"run_id": run_id, "digest": digest}, indent=2) + "\n")

    resumed = {}
    if resume:
        for track in plan.tracks:
            try:
                resumed[track.label] = restore_track(ckpt_dir, track.label, plan, digest)
            except CheckpointError as exc:
                _fail(str(exc), 1)

    n_points = len(plan.grid)
    jobs = []
    results = {}
    for track in plan.tracks:
        prior = resumed.get(track.label, [])
        if len(prior) >= n_points:
            results[track.label] = prior[:n_points]
        else:
            jobs.append((plan, track, str(ckpt_dir), digest, prior))

    errors = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_track_job, jobs))
    else:
        outcomes = [_track_job(j) for j in jobs]
    for label, states, err in outcomes:
        if err is None:
            results[label] = states
        else:
            errors[label] = err

    _write_results(out / "results.csv", run_id, plan, results)
    for label, state_list in sorted(results.items()):
        last = state_list[-1]
        click.echo(f"{label}: {len(state_list)} points, final energy {last.energy:.6f} (v-score {last.v_score:.2e})")
    if errors:
        for label, err in sorted(errors.items()):
            click.echo(f"track {label} failed:\n{err}", err=True)
        sys.exit(1)


def _parse_couplings(spec: str) -> np.ndarray:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("coupling range must be start:stop:count")
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(start, stop, num)
    return np.array([float(s) for s in spec.split(",")])


@main.command()
@click.option("--dimension", type=int, default=1, help="Lattice dimension.")
@click.option("--extent", "-L", type=int, required=True, help="Linear size.")
@click.option("--couplings", required=True, help="Comma list or start:stop:count.")
@click.option("--what", type=click.Choice(["spectrum", "chi0", "gap"]), default="spectrum")
@click.option("--count", type=int, default=6, help="Levels per coupling for spectrum output.")
@click.option("--output", type=click.Path(), default=None, help="CSV destination (default stdout).")
def exact(dimension, extent, couplings, what, count, output):
    """Reference values from closed-form or exact diagonalization."""
    try:
        grid = _parse_couplings(couplings)
    except ValueError as exc:
        _fail(str(exc), 2)
    if dimension == 2 and what == "chi0":
        _fail("closed-form susceptibility is only available in one dimension", 1)
    if dimension not in (1, 2):
        _fail("dimension must be 1 or 2", 2)

    rows = []
    if what == "spectrum":
        header = ["lambda", "level", "value", "stderr"]
        for lam in grid:
            levels = (exact_low_spectrum_1d(extent, float(lam), count=count)
                      if dimension == 1
                      else exact_diagonalize(TfimHamiltonian(Lattice(2, extent), float(lam)), count=count).eigenvalues)
            for i, e in enumerate(levels):
                rows.append([repr(float(lam)), i, repr(float(e)), "0.0"])
    else:
        header = ["lambda", "value", "stderr"]
        for lam in grid:
            if what == "chi0":
                value = chi0_exact_1d(extent, float(lam))
            elif dimension == 1:
                value = gap_1d(extent, float(lam))
            else:
                ev = exact_diagonalize(TfimHamiltonian(Lattice(2, extent), float(lam)), count=2).eigenvalues
                value = float(ev[1] - ev[0])
            rows.append([repr(float(lam)), repr(float(value)), "0.0"])

    dest = open(output, "w", newline="") if output else sys.stdout
    try:
        writer = csv.writer(dest)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if output:
            dest.close()


@main.command()
@click.option("--dimension", type=int, default=1)
@click.option("--extent", "-L", type=int, required=True)
@click.option("--coupling", type=float, required=True)
@click.option("--count", type=int, default=6, help="Number of levels.")
def ed(dimension, extent, coupling, count):
    """Low spectrum by exact diagonalization, with degeneracy grouping."""
    if dimension not in (1, 2):
        _fail("dimension must be 1 or 2", 2)
    lattice = Lattice(dimension, extent)
    result = exact_diagonalize(TfimHamiltonian(lattice, coupling), count=count)
    writer = csv.writer(sys.stdout)
    writer.writerow(["level", "energy", "degenerate_group"])
    for g, group in enumerate(result.degenerate_groups()):
        for idx in group:
            writer.writerow([idx, repr(float(result.eigenvalues[idx])), g])


def _load_gap_csv(path: Path, size: int | None):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = list(reader.fieldnames or [])
    if {"run_id", "track", "lambda", "energy"} <= set(cols):
        by_lam = {}
        for row in rows:
            by_lam.setdefault(float(row["lambda"]), {})[row["track"]] = float(row["energy"])
        if size is None:
            raise ValueError(f"{path}: results tables need an explicit --sizes entry")
        out = []
        for lam in sorted(by_lam):
            tracks = by_lam[lam]
            if "ground" not in tracks or len(tracks) < 2:
                raise ValueError(f"{path}: gap extraction needs a ground track and at least one excited track")
            excited = min(v for k, v in tracks.items() if k != "ground")
            out.append((size, lam, excited - tracks["ground"]))
        return out
    missing = [c for c in ("lambda", "value") if c not in cols]
    if missing:
        raise ValueError(f"{path}: missing required columns: {', '.join(missing)}")
    if size is None and "size" not in cols:
        raise ValueError(f"{path}: no size column and no --sizes entry")
    return [
        (int(row["size"]) if "size" in cols else size, float(row["lambda"]), float(row["value"]))
        for row in rows
    ]


@main.command()
@click.argument("tables", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--sizes", default=None, help="Comma list of system sizes, one per input file.")
@click.option("--lambda-c", type=float, required=True, help="Critical coupling.")
@click.option("--degree", type=int, default=8, help="Collapse polynomial degree.")
@click.option("--z-fixed", type=float, default=None, help="Skip the gap-decay fit and use this exponent.")
@click.option("--report", type=click.Path(), default="fit_report.json", help="Where to write the fit report.")
@click.option("--collapse-out", type=click.Path(), default=None, help="Optional collapsed-coordinates CSV.")
def analyze(tables, sizes, lambda_c, degree, z_fixed, report, collapse_out):
    """Fit critical exponents from gap tables or transport results."""
    size_list = [int(s) for s in sizes.split(",")] if sizes else [None] * len(tables)
    if len(size_list) != len(tables):
        _fail("--sizes must list one size per input file", 2)
    rows = []
    try:
        for path, size in zip(tables, size_list):
            rows.extend(_load_gap_csv(Path(path), size))
    except ValueError as exc:
        _fail(str(exc), 1)
    table = GapTable.from_rows(rows)
    if np.unique(table.sizes).shape[0] < 2:
        _fail("collapse needs tables at two or more system sizes", 1)

    if z_fixed is None:
        crit_sizes, _, _ = table.at_coupling(lambda_c, tol=1e-6)
        if crit_sizes.shape[0] < 3:
            _fail("gap-decay fit needs the critical coupling in at least three tables (or pass --z-fixed)", 1)
        z_hat, z_err = fit_z(table, lambda_c)
    else:
        z_hat, z_err = float(z_fixed), 0.0
    fit = fit_nu(table, z_hat, lambda_c, degree=degree)

    payload = {
        "lambda_c": lambda_c,
        "degree": degree,
        "z": {"exponent": z_hat, "uncertainty": z_err, "fixed": z_fixed is not None},
        "nu": {"exponent": fit.exponent, "uncertainty": fit.uncertainty},
        "ssr": fit.ssr,
        "ssr_curve": [[float(g), float(v)] for g, v in zip(fit.ssr_grid, fit.ssr_values)],
    }
    Path(report).write_text(json.dumps(payload, indent=2) + "\n")
    click.echo(f"z  = {z_hat:.4f} +- {z_err:.4f}")
    click.echo(f"nu = {fit.exponent:.4f} +- {fit.uncertainty:.4f}")

    if collapse_out:
        Lf = table.sizes.astype(float)
        x = (table.couplings - lambda_c) * Lf ** (1.0 / fit.exponent)
        y = table.gaps * Lf**z_hat
        with open(collapse_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["size", "x", "y"])
            for s, xi, yi in zip(table.sizes, x, y):
                writer.writerow([int(s), repr(float(xi)), repr(float(yi))])


if __name__ == "__main__":
    main()
