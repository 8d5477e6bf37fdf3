"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs the same seeded toy-sine training workload under each available
backend, reports wall time per backend, and checks that the final
ensembles agree to float rounding. The first numba call includes JIT
compilation, so a warmup run precedes timing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._accel import available_backends, use_backend
from .config import DatasetSpec, LrDecay, ModelSpec, RunConfig, build_dataset, build_model
from .federation import run_training


@dataclass(frozen=True)
class BenchResult:
    backend: str
    seconds_per_run: float
    runs: int


def _workload(cfg: RunConfig, model, fed):
    return run_training(
        model, fed, algo=cfg.algo, n_modes=cfg.k, ages=cfg.ages,
        n_strata=cfg.strata, local_epochs=cfg.local_epochs, lr=cfg.lr,
        init=cfg.init, master_seed=cfg.seed,
        collect_records=False, track_losses=False)


def run_bench(*, ages: int = 20, runs: int = 3,
              master_seed: int = 0) -> tuple[list[BenchResult], float]:
    """Time each backend on an identical workload.

    Returns the per-backend timings plus the max-abs deviation between the
    final mode weights across backends (0.0 when only one is available).
    """
    cfg = RunConfig(
        algo="fed_ensemble", k=5, ages=ages, strata=5, local_epochs=2,
        lr=0.03, lr_decay=LrDecay(factor=1.0, interval=10),
        init_scheme="normal_scaled", init_sigma=0.6,
        dataset=DatasetSpec(kind="toy_sine"),
        model=ModelSpec(kind="rbf", n_centers=100, bandwidth=0.3),
        seed=master_seed)
    fed, _ = build_dataset(cfg)
    model = build_model(cfg, fed)

    results = []
    finals = {}
    for name in available_backends():
        with use_backend(name):
            _workload(cfg, model, fed)  # warmup; JIT compile on numba
            t0 = time.perf_counter()
            for _ in range(runs):
                run = _workload(cfg, model, fed)
            dt = (time.perf_counter() - t0) / runs
        finals[name] = np.stack(run.ensemble.modes)
        results.append(BenchResult(backend=name, seconds_per_run=dt, runs=runs))

    names = sorted(finals)
    deviation = 0.0
    for a, b in zip(names, names[1:]):
        deviation = max(deviation, float(np.max(np.abs(finals[a] - finals[b]))))
    return results, deviation


def format_bench(results: list[BenchResult], deviation: float) -> str:
    lines = []
    for r in results:
        lines.append(f"{r.backend:>6}: {r.seconds_per_run * 1e3:8.1f} ms/run "
                     f"(mean of {r.runs})")
    if len(results) > 1:
        by = {r.backend: r.seconds_per_run for r in results}
        if "numba" in by and "numpy" in by:
            lines.append(f"speedup: {by['numpy'] / by['numba']:.2f}x "
                         f"(numpy over numba)")
        lines.append(f"max |weight delta| across backends: {deviation:.3e}")
    return "\n".join(lines)
