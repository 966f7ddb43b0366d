"""Experiment orchestration: profile generation, N-1 scans, metrics, reports.

A scan runs one cascade per (load profile, initial line) cell.  Cells are
independent, so the scan fans out over processes when GRIDCASCADE_THREADS
allows; results are sorted before aggregation so reports are order-free.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import qp
from .cascade import CascadeConfig, CascadeTrace, run_cascade
from .controllers import dc_opf
from .netmodel import Network, Scenario, perturb_loads

ADJUST_TOL = 1e-6


@dataclass(frozen=True)
class ScenarioMetrics:
    profile: int
    line_id: int
    controller: str
    vulnerable: bool  # successive failures or any load shed
    load_loss_rate: float  # total shed / original total demand
    adjusted_generators: int
    stages: int
    critical: bool
    error: str = ""


@dataclass
class ScanReport:
    controller: str
    cells: list[ScenarioMetrics]
    config_hash: str
    rejected_profiles: int = 0

    def vulnerable_counts(self) -> list[int]:
        """Number of vulnerable initial lines, per profile."""
        by_profile: dict[int, int] = {}
        for c in self.cells:
            by_profile.setdefault(c.profile, 0)
            if c.vulnerable:
                by_profile[c.profile] += 1
        return [by_profile[p] for p in sorted(by_profile)]

    def aggregates(self) -> dict:
        counts = np.array(self.vulnerable_counts(), dtype=float)
        loss = np.array([c.load_loss_rate for c in self.cells])
        adjusted = np.array([c.adjusted_generators for c in self.cells])
        return {
            "controller": self.controller,
            "profiles": len(counts),
            "cells": len(self.cells),
            "errors": sum(1 for c in self.cells if c.error),
            "mean_vulnerable": float(counts.mean()) if counts.size else 0.0,
            "std_vulnerable": float(counts.std()) if counts.size else 0.0,
            "range_vulnerable": (
                [float(counts.min()), float(counts.max())] if counts.size else [0.0, 0.0]
            ),
            "max_loss_rate": float(loss.max()) if loss.size else 0.0,
            "mean_loss_rate": float(loss.mean()) if loss.size else 0.0,
            "ccdf_loss_rate": emit_ccdf(loss.tolist()),
            "ccdf_adjusted_generators": emit_ccdf(adjusted.tolist()),
            "config_hash": self.config_hash,
            "rejected_profiles": self.rejected_profiles,
        }


def emit_ccdf(values: list[float]) -> list[tuple[float, float]]:
    """Complementary CDF: fraction of samples strictly above each threshold."""
    if not values:
        return []
    arr = np.sort(np.asarray(values, dtype=float))
    n = arr.size
    thresholds = np.unique(np.concatenate([[0.0], arr]))
    out = []
    for t in thresholds:
        frac = float(np.sum(arr > t)) / n
        out.append((float(t), frac))
    return out


def switched_off_ids(network: Network, pairs: list[tuple[int, int]]) -> frozenset[int]:
    """Resolve (bus, bus) pairs onto line ids."""
    return frozenset(network.line_by_pair(a, b).id for a, b in pairs)


def remove_lines(network: Network, line_ids: frozenset[int]) -> Network:
    """Planning-phase switching: drop lines from the model entirely."""
    lines = tuple(ln for ln in network.lines if ln.id not in line_ids)
    net = Network(
        base_mva=network.base_mva,
        buses=network.buses,
        lines=lines,
        areas=network.areas,
    )
    if not net.is_connected():
        raise ValueError("switching those lines off disconnects the network")
    return net


def generate_profiles(
    network: Network,
    count: int,
    magnitude: float,
    seed: int,
    max_rejects: int = 1000,
) -> tuple[list[Scenario], int]:
    """Perturb loads and re-dispatch; reject draws the OPF cannot serve."""
    if count < 1:
        raise ValueError("count must be >= 1")
    base = network.base_injections()
    seeds = np.random.SeedSequence(seed).generate_state(count + max_rejects)
    scenarios: list[Scenario] = []
    rejected = 0
    consecutive = 0
    i = 0
    while len(scenarios) < count:
        if i >= len(seeds):
            raise RuntimeError("exhausted the reject budget while drawing profiles")
        draw_seed = int(seeds[i])
        i += 1
        loads = perturb_loads(network, base, magnitude, draw_seed)
        try:
            dispatch = dc_opf(network, loads)
        except qp.QpInfeasible:
            rejected += 1
            consecutive += 1
            if consecutive > max_rejects:
                raise RuntimeError(
                    f"{consecutive} consecutive infeasible load draws; "
                    "the network cannot serve this demand profile"
                )
            continue
        consecutive = 0
        scenarios.append(
            Scenario(network=network, injections=dispatch.injections, seed=draw_seed)
        )
    return scenarios, rejected


def trace_metrics(
    scenario: Scenario, trace: CascadeTrace, profile: int, line_id: int
) -> ScenarioMetrics:
    gens = scenario.network.generator_positions()
    adjusted = int(np.sum(np.abs(trace.cumulative_d[gens]) > ADJUST_TOL))
    vulnerable = trace.successive_failures() or trace.total_shed > ADJUST_TOL
    return ScenarioMetrics(
        profile=profile,
        line_id=line_id,
        controller=trace.controller,
        vulnerable=vulnerable,
        load_loss_rate=trace.total_shed / max(scenario.total_demand(), 1e-12),
        adjusted_generators=adjusted,
        stages=trace.n_stages,
        critical=any(s.critical for s in trace.stages),
    )


def _scan_cell(args) -> ScenarioMetrics:
    scenario, profile, line_id, config = args
    try:
        trace = run_cascade(scenario, {line_id}, config=config)
        return trace_metrics(scenario, trace, profile, line_id)
    except Exception as exc:  # record, never abort the scan
        return ScenarioMetrics(
            profile=profile,
            line_id=line_id,
            controller=config.controller,
            vulnerable=True,
            load_loss_rate=0.0,
            adjusted_generators=0,
            stages=0,
            critical=False,
            error=f"{type(exc).__name__}: {exc}",
        )


def _worker_count() -> int:
    env = os.environ.get("GRIDCASCADE_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def config_digest(network: Network, config: CascadeConfig, extra: dict) -> str:
    payload = {
        "controller": config.controller,
        "detect": config.detect,
        "overload_rel_tol": config.overload_rel_tol,
        "n_buses": network.n_buses,
        "n_lines": network.n_lines,
        **extra,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def n_minus_1_scan(
    scenarios: list[Scenario],
    config: CascadeConfig,
    rejected_profiles: int = 0,
    workers: int | None = None,
) -> ScanReport:
    """Cascade every single-line initial failure for every profile."""
    if not scenarios:
        raise ValueError("scan needs at least one scenario")
    network = scenarios[0].network
    cells = [
        (sc, profile, ln.id, config)
        for profile, sc in enumerate(scenarios)
        for ln in network.lines
    ]
    workers = _worker_count() if workers is None else max(1, workers)
    results: list[ScenarioMetrics]
    if workers > 1 and len(cells) > 8:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_cell, cells, chunksize=16))
    else:
        results = [_scan_cell(c) for c in cells]
    results.sort(key=lambda c: (c.profile, c.line_id))
    digest = config_digest(
        network, config, {"profiles": len(scenarios), "seeds": [s.seed for s in scenarios]}
    )
    return ScanReport(
        controller=config.controller,
        cells=results,
        config_hash=digest,
        rejected_profiles=rejected_profiles,
    )


def write_report(report: ScanReport, out_dir: str, tag: str) -> None:
    """CSV of per-cell metrics plus a JSON aggregate and CCDF CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    cells_path = os.path.join(out_dir, f"{tag}_cells.csv")
    with open(cells_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["profile", "line", "controller", "vulnerable", "loss_rate",
             "adjusted_gens", "stages", "critical", "error"]
        )
        for c in report.cells:
            writer.writerow(
                [c.profile, c.line_id, c.controller, int(c.vulnerable),
                 f"{c.load_loss_rate:.8f}", c.adjusted_generators, c.stages,
                 int(c.critical), c.error]
            )
    agg = report.aggregates()
    with open(os.path.join(out_dir, f"{tag}_aggregate.json"), "w") as fh:
        json.dump(agg, fh, indent=2)
    for name in ("ccdf_loss_rate", "ccdf_adjusted_generators"):
        with open(os.path.join(out_dir, f"{tag}_{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fraction_exceeding"])
            for t, fr in agg[name]:
                writer.writerow([f"{t:.10g}", f"{fr:.10g}"])
