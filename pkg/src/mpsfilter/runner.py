"""Experiment execution: artifact directories, per-run traces, summaries.

``run`` materializes an ExperimentConfig into a directory containing

* ``manifest.json``  -- the config, round-trippable via config_from_manifest
* ``trace_N{n}_M{m}.csv`` -- one measurement trace per (N, M) pair, with
  the seconds column zeroed so reruns are byte-identical
* ``state_N{n}_M{m}.mps`` / ``.npy`` -- the final filtered state
* ``summary.json`` -- final metrics, window trace distances, energy
  profiles and correlations, per-N scaling fits, and recorded failures
* ``timing.json`` -- real wall-clock seconds (kept out of summary.json)

Chains at different N are independent and can run in a process pool.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import pathlib
import re
import time

import numpy as np

from . import analysis, exact, filtering
from . import mps as mps_mod
from .config import (ExperimentConfig, config_from_manifest,
                     manifest_from_config, resolve_schedule)
from .hamiltonian import Model, build_ising, build_xyz
from .states import build_initial_state

__all__ = [
    "OUTPUT_ROOT_ENV",
    "analyze",
    "build_model",
    "resolve_output_dir",
    "run",
]

OUTPUT_ROOT_ENV = "MPSFILTER_OUTPUT_ROOT"

# window size for reduced-density-matrix summaries
WINDOW_LENGTH = 4

# runs whose accumulated discarded weight stays below this enter the fits
FIT_WEIGHT_TOL = 1e-4

# dense final states are converted to MPS for profile/correlation
# summaries only up to this chain length
EXACT_ANALYSIS_N_MAX = 14

_INT_FINAL = {"step", "max_bond", "d_tr"}


def build_model(name: str, n: int, params: dict) -> Model:
    """Model instance for a config's model name and parameter dict."""
    if name == "ising":
        return build_ising(n, params["J"], params["g"], params["h"])
    if name == "xyz":
        return build_xyz(n, params["Jx"], params["Jy"], params["Jz"],
                         params["h"])
    raise ValueError(f"unknown model {name!r}")


def _config_slug(cfg: ExperimentConfig) -> str:
    manifest = manifest_from_config(cfg)
    manifest.pop("output", None)
    blob = json.dumps(manifest, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:10]


def resolve_output_dir(cfg: ExperimentConfig, output=None) -> pathlib.Path:
    """Artifact directory: explicit argument, then the config's output
    key, then $MPSFILTER_OUTPUT_ROOT/exp_<hash>, then ./runs/exp_<hash>."""
    if output is not None:
        return pathlib.Path(output)
    if cfg.output is not None:
        return pathlib.Path(cfg.output)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    base = pathlib.Path(root) if root else pathlib.Path("runs")
    return base / f"exp_{_config_slug(cfg)}"


def _vector_window_rho(v: np.ndarray, n: int, first: int,
                       length: int) -> np.ndarray:
    """Reduced density matrix of ``length`` adjacent sites of a dense
    state (site 0 is the least significant bit)."""
    m = v.reshape(2 ** (n - first - length), 2 ** length, 2 ** first)
    return np.einsum("aib,ajb->ij", m, m.conj())


def _final_dict(trace) -> dict:
    # real wall times live in timing.json; keeping them out of the
    # summary makes reruns byte-identical
    row = trace.final
    return {k: (int(v) if k in _INT_FINAL else float(v))
            for k, v in row.items() if k != "seconds"}


def _execute_chain(payload) -> dict:
    """Run all orders at one chain length and write its artifacts.

    Top-level so process pools can pickle it.  Failures are captured and
    reported, never raised.
    """
    manifest, n, orders, outdir = payload
    cfg = config_from_manifest(manifest)
    out = pathlib.Path(outdir)
    t0 = time.perf_counter()
    try:
        model = build_model(cfg.model, n, cfg.param_dict)
        spec = cfg.initial_state
        if spec == "energy_target":
            spec = f"energy_target({cfg.e0!r})"
        start = build_initial_state(spec, model, seed=cfg.seed)
        if cfg.backend == "mps":
            results = filtering.cheby_filter_multi(
                start, model, orders, cfg.d_max, cfg.e0,
                alpha=cfg.alpha, record_every=cfg.record_every)
        else:
            vec = exact.mps_to_vector(start)
            results = filtering.cheby_filter_exact_traced(
                vec, model, orders, cfg.e0,
                alpha=cfg.alpha, record_every=cfg.record_every)
    except Exception as err:
        return {"runs": [], "timings": [],
                "errors": [{"N": n, "error": f"{type(err).__name__}: {err}"}],
                "chain_seconds": time.perf_counter() - t0}

    runs = []
    timings = []
    for m_order in sorted(results):
        state, trace = results[m_order]
        csv_name = f"trace_N{n}_M{m_order}.csv"
        trace.save_csv(out / csv_name, zero_seconds=True)
        entry = {
            "N": n,
            "M": m_order,
            "backend": cfg.backend,
            "csv": csv_name,
            "final": _final_dict(trace),
            "flags": list(trace.flags),
        }
        if cfg.backend == "mps":
            state_name = f"state_N{n}_M{m_order}.mps"
            mps_mod.save(state, out / state_name)
        else:
            state_name = f"state_N{n}_M{m_order}.npy"
            np.save(out / state_name, state)
        entry["state"] = state_name

        if n >= WINDOW_LENGTH:
            first = (n - WINDOW_LENGTH) // 2
            if cfg.backend == "mps":
                rho = mps_mod.window_density_matrix(state, first,
                                                    WINDOW_LENGTH)
            else:
                rho = _vector_window_rho(state, n, first, WINDOW_LENGTH)
            entry[f"trace_distance_L{WINDOW_LENGTH}"] = float(
                analysis.trace_distance_inf_T(rho))

        analyzable = state
        if cfg.backend == "exact":
            analyzable = (exact.vector_to_mps(state, n)
                          if n <= EXACT_ANALYSIS_N_MAX else None)
        if analyzable is not None:
            entry["profile"] = [float(x) for x in
                                analysis.energy_profile(analyzable, model)]
            n_c = (n - 2) // 2
            entry["correlations"] = [
                [int(x), float(v)] for x, v in
                analysis.energy_correlations(analyzable, model, n_c)]

        runs.append(entry)
        timings.append({"N": n, "M": m_order,
                        "seconds": float(trace.final["seconds"])})
    return {"runs": runs, "timings": timings, "errors": [],
            "chain_seconds": time.perf_counter() - t0}


def _scaling_fits(runs) -> list:
    """Per-N power-law fits of final variance against filter order."""
    by_n = {}
    for entry in runs:
        final = entry["final"]
        if final["discarded"] <= FIT_WEIGHT_TOL and final["variance"] > 0:
            by_n.setdefault(entry["N"], []).append(
                (entry["M"], final["variance"]))
    fits = []
    for n in sorted(by_n):
        points = sorted(by_n[n])
        if len(points) < 3:
            continue
        ms = [p[0] for p in points]
        vs = [p[1] for p in points]
        fit = analysis.fit_power(ms, vs)
        fits.append({"N": n, **fit.to_dict()})
    return fits


def run(cfg: ExperimentConfig, output=None, dry_run: bool = False
        ) -> pathlib.Path:
    """Execute the experiment and return its artifact directory.

    ``dry_run`` validates the config and writes the manifest only.  Chain
    failures are recorded in summary.json under "errors"; they do not
    abort the remaining chains.
    """
    outdir = resolve_output_dir(cfg, output)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = manifest_from_config(cfg)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if dry_run:
        return outdir

    t0 = time.perf_counter()
    payloads = [(manifest, n, resolve_schedule(cfg, n), str(outdir))
                for n in cfg.ns]
    if cfg.workers > 1 and len(payloads) > 1:
        width = min(cfg.workers, len(payloads))
        with concurrent.futures.ProcessPoolExecutor(width) as pool:
            chain_results = list(pool.map(_execute_chain, payloads))
    else:
        chain_results = [_execute_chain(p) for p in payloads]

    runs = []
    errors = []
    timings = []
    for res in chain_results:
        runs.extend(res["runs"])
        errors.extend(res["errors"])
        timings.extend(res["timings"])
    runs.sort(key=lambda e: (e["N"], e["M"]))
    summary = {"runs": runs, "errors": errors, "fits": _scaling_fits(runs)}
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    timing = {"runs": sorted(timings, key=lambda e: (e["N"], e["M"])),
              "total_seconds": time.perf_counter() - t0}
    with open(outdir / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir


# ---------------------------------------------------------------------------
# post-hoc analysis of an artifact directory

_TRACE_NAME_RE = re.compile(r"^trace_N(\d+)_M(\d+)\.csv$")


def _read_trace_final(path: pathlib.Path) -> dict:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    cells = lines[-1].split(",")
    return {k: float(v) for k, v in zip(header, cells)}


def analyze(directory) -> dict:
    """Recompute scaling fits from the trace CSVs in an artifact
    directory; writes analysis.json and returns its contents."""
    outdir = pathlib.Path(directory)
    if not (outdir / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json under {outdir}")
    rows = []
    for path in sorted(outdir.iterdir()):
        m = _TRACE_NAME_RE.match(path.name)
        if not m:
            continue
        final = _read_trace_final(path)
        rows.append({
            "N": int(m.group(1)),
            "M": int(m.group(2)),
            "final": final,
        })
    rows.sort(key=lambda e: (e["N"], e["M"]))
    table = [{
        "N": e["N"],
        "M": e["M"],
        "variance": e["final"]["variance"],
        "energy": e["final"]["energy"],
        "S_half": e["final"]["S_half"],
        "max_bond": int(e["final"]["max_bond"]),
        "discarded": e["final"]["discarded"],
    } for e in rows]
    result = {"table": table, "fits": _scaling_fits(rows)}
    with open(outdir / "analysis.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result
