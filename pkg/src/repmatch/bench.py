"""Scaling harness: enlarge a level by perturbed copies and time the solver.

Each grid cell pairs a template size ``T`` with a copy factor ``f``; the
level is replaced by ``f`` versions of itself (the original plus ``f - 1``
copies whose covariate indices are nudged by -1, 0 or +1 and clamped), and
the linear model is built and solved. Synthetic study generation lives in
:mod:`repmatch.synth` and is re-exported here.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import CovariateSchema, category_counts
from .mip import BnbConfig, solve_mip
from .model import Formulation, build_model_from_counts
from .synth import SynthConfig, generate_study

__all__ = [
    "ScalingSpec",
    "BenchRecord",
    "replicate_and_perturb",
    "run_scaling",
    "loglog_slope",
    "write_records_csv",
    "write_grid_csv",
    "write_manifest",
    "SynthConfig",
    "generate_study",
]


def replicate_and_perturb(level_x: np.ndarray, factor: int, seed: int, sizes: Sequence[int]) -> np.ndarray:
    """Stack ``level_x`` with ``factor - 1`` perturbed copies.

    Every covariate index of a copy moves by an independent uniform draw
    from {-1, 0, +1} and is clamped to ``[0, K_p - 1]``. The original rows
    come first and are unchanged.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    x = np.asarray(level_x, dtype=np.int64)
    hi = np.asarray(sizes, dtype=np.int64) - 1
    rng = np.random.default_rng(seed)
    blocks = [x]
    for _ in range(int(factor) - 1):
        shift = rng.integers(-1, 2, size=x.shape)
        blocks.append(np.clip(x + shift, 0, hi))
    return np.vstack(blocks)


@dataclass
class ScalingSpec:
    """Grid definition: templates are drawn from ``template_pool``."""

    schema: CovariateSchema
    level_x: np.ndarray
    template_pool: np.ndarray
    copy_factors: list[int] = field(default_factory=lambda: [1])
    template_sizes: list[int] = field(default_factory=lambda: [100])
    seed: int = 0
    mip: BnbConfig = field(default_factory=BnbConfig)

    def __post_init__(self):
        if not self.copy_factors or not self.template_sizes:
            raise ValueError("copy_factors and template_sizes must be non-empty")
        if min(self.copy_factors) < 1:
            raise ValueError("copy factors must be >= 1")
        if max(self.template_sizes) > len(self.level_x) or min(self.template_sizes) < 1:
            raise ValueError("template sizes must lie in [1, size of the unscaled level]")
        if max(self.template_sizes) > len(self.template_pool):
            raise ValueError("template pool is smaller than the largest template")

    def to_dict(self) -> dict:
        return {
            "copy_factors": list(map(int, self.copy_factors)),
            "template_sizes": list(map(int, self.template_sizes)),
            "seed": int(self.seed),
            "level_units": int(len(self.level_x)),
            "template_pool_units": int(len(self.template_pool)),
            "mip": asdict(self.mip),
        }


@dataclass
class BenchRecord:
    T: int
    L: int
    factor: int
    build_time: float
    solve_time: float
    objective: float
    node_count: int
    status: str
    error: str = ""


def run_scaling(spec: ScalingSpec, log=None) -> list[BenchRecord]:
    """Solve every ``(T, factor)`` cell sequentially; failures are recorded."""
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(spec.template_pool))
    levels = {
        f: replicate_and_perturb(spec.level_x, f, spec.seed + 1000 * f, spec.schema.sizes)
        for f in sorted(set(spec.copy_factors))
    }
    records = []
    for T in spec.template_sizes:
        # nested templates: the first T units of one fixed permutation
        targets = category_counts(spec.template_pool, np.sort(order[:T]), spec.schema)
        for f in spec.copy_factors:
            lx = levels[f]
            t0 = time.perf_counter()
            try:
                model = build_model_from_counts(Formulation.LINEAR, targets, lx)
                t1 = time.perf_counter()
                sol = solve_mip(model, spec.mip)
                rec = BenchRecord(T, len(lx), f, t1 - t0, time.perf_counter() - t1, sol.objective_value,
                                  sol.node_count, sol.status.value)
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                rec = BenchRecord(T, len(lx), f, time.perf_counter() - t0, 0.0, math.nan, 0, "error",
                                  f"{type(exc).__name__}: {exc}")
            records.append(rec)
            if log is not None:
                print(f"T={rec.T}\tL={rec.L}\tbuild={rec.build_time:.2f}s\tsolve={rec.solve_time:.2f}s\t"
                      f"objective={rec.objective}\tstatus={rec.status}", file=log)
    return records


def loglog_slope(records: Sequence[BenchRecord], T: int | None = None) -> float:
    """Least-squares slope of log(solve time) on log(L), optionally for one ``T``."""
    pts = [(r.L, r.solve_time) for r in records if r.status != "error" and (T is None or r.T == T)]
    if len({L for L, _ in pts}) < 2:
        raise ValueError("need at least two distinct level sizes")
    L, t = np.log([p[0] for p in pts]), np.log([max(p[1], 1e-6) for p in pts])
    return float(np.polyfit(L, t, 1)[0])


_FIELDS = ["T", "L", "factor", "build_time", "solve_time", "objective", "node_count", "status", "error"]


def write_records_csv(path: str | Path, records: Sequence[BenchRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIELDS)
        for r in records:
            w.writerow([getattr(r, f) for f in _FIELDS])


def write_grid_csv(path: str | Path, records: Sequence[BenchRecord]) -> None:
    """Total minutes (build + solve) with template sizes as rows and L as columns."""
    Ts = sorted({r.T for r in records})
    Ls = sorted({r.L for r in records})
    cell = {(r.T, r.L): r for r in records}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T"] + [str(L) for L in Ls])
        for T in Ts:
            row = [str(T)]
            for L in Ls:
                r = cell.get((T, L))
                if r is None or r.status == "error":
                    row.append("NA")
                else:
                    row.append(f"{(r.build_time + r.solve_time) / 60:.3f}")
            w.writerow(row)


def write_manifest(path: str | Path, spec: ScalingSpec, extra: dict | None = None) -> None:
    """Seeds, configuration hash and a machine descriptor for a bench run."""
    cfg = spec.to_dict()
    blob = json.dumps(cfg, sort_keys=True).encode()
    data_hash = hashlib.sha256(np.ascontiguousarray(spec.level_x, dtype=np.int64).tobytes()).hexdigest()
    doc = {
        "config": cfg,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "level_sha256": data_hash,
        "machine": {
            "python": platform.python_version(),
            "platform": platform.platform(),
            "processor": platform.processor() or platform.machine(),
            "numpy": np.__version__,
        },
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
