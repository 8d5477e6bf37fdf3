"""End-to-end acceptance gate.

Each test covers one numbered claim about the simulator at its stated
tolerance and runtime budget, and prints exactly one verdict line of the
form ``criterion NN PASS/FAIL  <details>`` (run pytest with ``-s`` to see
the lines as they appear). The expensive sweeps run once per session and
feed the criteria that share them.
"""

import csv
import math
import time

import numpy as np
import pytest

import oracles
from simfed.data import gen_toy_sine
from simfed.errors import ConfigError
from simfed.federation import (build_strata, new_schedule, plan_round,
                               run_training)
from simfed.kernels import gp_posterior
from simfed.metrics import records_equivalent
from simfed.models import (InitSpec, MlpModel, RbfFeatureModel, init_weights,
                           loss, loss_and_grad)
from simfed.presets import noc_sweep, run_preset


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print("\n" + line, flush=True)
    assert ok, line


def _read_csv(out_dir, name):
    with open(f"{out_dir}/{name}") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def table1(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("accept") / "table1")
    t0 = time.perf_counter()
    report = run_preset("table1_biasvar", out, master_seed=0)
    return report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def theorem2(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("accept") / "theorem2")
    t0 = time.perf_counter()
    report = run_preset("theorem2_oracle", out, master_seed=0)
    return report, time.perf_counter() - t0


def test_c01_bias_variance_reference_levels(table1):
    report, seconds = table1
    rows = {int(r["k"]): r for r in _read_csv(report.out_dir, "bias_variance.csv")}
    bias = {k: float(r["bias_sq"]) for k, r in rows.items()}
    var = {k: float(r["variance"]) for k, r in rows.items()}
    assert sorted(bias) == [1, 2, 10, 20, 40]

    ok_bias = 0.5 * 0.109 <= bias[1] <= 1.5 * 0.109
    ok_var = 0.5 * 0.0496 <= var[1] <= 1.5 * 0.0496
    spread = (max(bias.values()) - min(bias.values())) / max(bias.values())
    ratio = var[1] / var[10]
    ok = ok_bias and ok_var and spread < 0.20 and ratio >= 3.0 and seconds <= 300
    _verdict(1, ok,
             f"reference sweep: bias1={bias[1]:.4f} (want 0.109 +-50%), "
             f"var1={var[1]:.4f} (want 0.0496 +-50%), bias spread "
             f"{100 * spread:.1f}% < 20%, var1/var10={ratio:.2f} >= 3, "
             f"{seconds:.0f}s <= 300s")


def test_c02_variance_shrink_slope(table1):
    report, _ = table1
    rows = {int(r["k"]): float(r["variance"])
            for r in _read_csv(report.out_dir, "bias_variance.csv")}
    ks = [1, 2, 10, 20]
    slope = oracles.least_squares_slope([math.log(k) for k in ks],
                                        [math.log(rows[k]) for k in ks])
    ok = -1.2 <= slope <= -0.5
    _verdict(2, ok, f"log-variance vs log-K slope {slope:.3f} in [-1.2, -0.5]")


def test_c03_converged_mean_matches_closed_form(theorem2):
    report, seconds = theorem2
    gap_full = report.summary["gap_full"]
    gap_half = report.summary["gap_half"]
    ok = gap_full <= 0.05 and gap_full >= 2.0 * gap_half and seconds <= 60
    _verdict(3, ok,
             f"max |trained - closed-form limit| = {gap_full:.2e} <= 0.05 at 21 "
             f"probes; halved step budget shrinks it to {gap_half:.2e} "
             f"(x{gap_full / gap_half:.1f} >= x2); {seconds:.0f}s <= 60s")


def test_c04_mode_variance_and_independence(theorem2):
    report, seconds = theorem2
    rows = _read_csv(report.out_dir, "oracle_compare.csv")
    n_samples = int(rows[0]["n_repeats"])
    checked = []
    for probe in (-0.8, -0.4, 0.0, 0.4, 0.8):
        row = min(rows, key=lambda r: abs(float(r["probe_x"]) - probe))
        k_diag = float(row["k_diag_oracle"])
        if k_diag > 0.01:
            rel = abs(float(row["var_empirical"]) - k_diag) / k_diag
            checked.append(rel)
    z_values = list(report.summary["independence_z"].values())
    ok = (n_samples >= 200 and len(checked) > 0
          and max(checked) <= 0.25 and max(z_values) < 3.0902
          and seconds <= 300)
    _verdict(4, ok,
             f"{n_samples} converged modes: worst variance error "
             f"{100 * max(checked):.1f}% <= 25% on {len(checked)} probes with "
             f"oracle var > 0.01; worst independence |z|={max(z_values):.2f} "
             f"< 3.09 (99% two-sided, Bonferroni); {seconds:.0f}s <= 300s")


def test_c05_exponential_loss_decay(tmp_path):
    t0 = time.perf_counter()
    report = run_preset("decay_check", str(tmp_path / "decay"), master_seed=0)
    seconds = time.perf_counter() - t0
    r2 = report.summary["r_squared"]
    rates = report.summary["rate"]
    ok = all(v >= 0.95 for v in r2) and all(r > 0 for r in rates) and seconds <= 30
    _verdict(5, ok,
             f"per-mode log-loss linearity: min R^2 = {min(r2):.3f} >= 0.95, "
             f"rates {min(rates):.3f}..{max(rates):.3f} all > 0; "
             f"{seconds:.1f}s <= 30s")


def test_c06_schedule_covers_every_pair_once():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240817)
    worst = 0
    for _ in range(50):
        q = int(rng.integers(1, 11))
        k = int(rng.integers(1, 11))
        n_clients = q + int(rng.integers(0, 20))
        strata = build_strata(n_clients, q, rng)
        schedule = new_schedule(q, k, rng)
        plans = [plan_round(strata, schedule, 0, r, r) for r in range(k)]
        counts = oracles.coverage_counts(plans, k, q)
        worst = max(worst, int(np.max(np.abs(counts - 1))))
    seconds = time.perf_counter() - t0
    ok = worst == 0 and seconds <= 1.0
    _verdict(6, ok,
             f"50 random (Q, K, seed) ages: every (mode, stratum) pair met "
             f"exactly once (max count deviation {worst}); {seconds:.2f}s <= 1s")


def test_c07_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(100):
        if case % 2 == 0:
            model = RbfFeatureModel.sample(int(rng.integers(3, 12)),
                                           float(rng.uniform(0.1, 0.6)), seed=rng)
            x = rng.uniform(-1, 1, size=int(rng.integers(2, 8)))
            y = rng.normal(size=x.shape[0])
        else:
            task = "classification" if case % 4 == 1 else "regression"
            d_out = int(rng.integers(2, 5)) if task == "classification" else 1
            model = MlpModel(sizes=(3, int(rng.integers(2, 7)), d_out),
                             activation="tanh" if case % 8 < 4 else "relu",
                             task=task)
            x = rng.normal(size=(int(rng.integers(2, 8)), 3)) * 0.5
            y = rng.integers(0, d_out, size=x.shape[0]) if task == "classification" \
                else rng.normal(size=x.shape[0])
        w = rng.normal(size=model.n_params) * 0.8
        _, g = loss_and_grad(model, w, x, y)
        fd = oracles.fd_gradient(lambda v: loss(model, v, x, y), w)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-6)))
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-5 and seconds <= 10
    _verdict(7, ok,
             f"100 random finite-difference checks over both model families: "
             f"worst relative error {worst:.2e} <= 1e-5; {seconds:.1f}s <= 10s")


def test_c08_ensemble_beats_baseline_under_label_skew(tmp_path):
    t0 = time.perf_counter()
    report = noc_sweep(str(tmp_path / "noc"), master_seed=0, n_seeds=5,
                       noc_levels=(2, 10), algos=("fedavg", "fed_ensemble"))
    seconds = time.perf_counter() - t0
    mean = report.summary["mean_acc"]
    gap = report.summary["gap"]
    ok = (mean["2/fed_ensemble"] >= mean["2/fedavg"]
          and gap[2] >= gap[10] and seconds <= 600)
    _verdict(8, ok,
             f"5 seeds, 20 clients, 2-label skew: ensemble {mean['2/fed_ensemble']:.4f} "
             f">= fedavg {mean['2/fedavg']:.4f}; advantage {gap[2]:+.4f} at "
             f"noc=2 >= {gap[10]:+.4f} at noc=10; {seconds:.0f}s <= 600s")


def test_c09_single_mode_collapses_to_baselines():
    t0 = time.perf_counter()
    fed = gen_toy_sine(20, 2, seed=3)
    model = RbfFeatureModel.sample(30, 0.3, seed=3)

    def run(algo, prox_mu=0.0):
        return run_training(model, fed, algo=algo, n_modes=1, ages=5,
                            local_epochs=3, lr=0.05, prox_mu=prox_mu,
                            master_seed=42)

    avg = run("fedavg")
    ens = run("fed_ensemble")
    prox = run("fedprox", prox_mu=0.0)
    identical_ens = (np.array_equal(avg.ensemble.modes[0], ens.ensemble.modes[0])
                     and np.array_equal(avg.mode_losses, ens.mode_losses)
                     and records_equivalent(avg.records, ens.records))
    identical_prox = (np.array_equal(avg.ensemble.modes[0], prox.ensemble.modes[0])
                      and records_equivalent(avg.records, prox.records))
    seconds = time.perf_counter() - t0
    ok = identical_ens and identical_prox and seconds <= 60
    _verdict(9, ok,
             f"shared seeds: K=1 ensemble == fedavg bit-for-bit "
             f"({identical_ens}); mu=0 fedprox == fedavg ({identical_prox}); "
             f"{seconds:.1f}s <= 60s")


def test_c10_posterior_matches_brute_force_regression():
    t0 = time.perf_counter()
    model = RbfFeatureModel.sample(7, 0.4, seed=1)
    x = np.array([-0.5, 0.4])
    y = np.array([0.8, -0.3])
    probes = np.array([-0.9, -0.5, -0.1, 0.4, 0.9])
    post = gp_posterior(model, x, y, sigma=1.1)
    mean_o, cov_o = oracles.blr_predictive(model.centers, model.bandwidth,
                                           x, y, probes, sigma=1.1)
    gap_mean = float(np.max(np.abs(post.mean(probes) - mean_o)))
    gap_cov = float(np.max(np.abs(post.cov(probes) - cov_o)))
    seconds = time.perf_counter() - t0
    ok = gap_mean <= 1e-8 and gap_cov <= 1e-8 and seconds <= 1.0
    _verdict(10, ok,
             f"two-point posterior vs 50-digit weight-space reference: "
             f"mean gap {gap_mean:.1e}, covariance gap {gap_cov:.1e}, both "
             f"<= 1e-8; {seconds:.2f}s <= 1s")
