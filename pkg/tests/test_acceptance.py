"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``ACCEPTANCE <n>: PASS|FAIL|SKIP ...`` line, also
collected into the pytest terminal summary. Criterion 8 needs the public
dataset: set ``EFFCOMPUTE_PUBLIC_DATA`` to its CSV path to run it.
"""

import json
import math
import os
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

import conftest
from conftest import TABLE2, TABLE2_SE
from effcompute.analysis import (
    doubling_times_closed_form,
    doubling_times_optimal_scaling,
    kaplan_chinchilla_ceg,
    shapley_attribution,
    shapley_values,
    transformer_ceg,
)
from effcompute.cli import main
from effcompute.cluster_mle import block_log_det, block_quadratic_form
from effcompute.dataset import EvalRecord, Norms, cap_per_paper, generate_synthetic, load_dataset
from effcompute.fit import bootstrap, bootstrap_sd, fit, quantiles
from effcompute.model_select import loocv
from effcompute.zoo import DELTA_GRID, ModelSpec

PUBLIC_DATA = os.environ.get("EFFCOMPUTE_PUBLIC_DATA")


def report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def dense_corr(sizes, rho):
    n = sum(sizes)
    P = np.zeros((n, n))
    start = 0
    for m in sizes:
        P[start:start + m, start:start + m] = rho
        start += m
    np.fill_diagonal(P, 1.0)
    return P


def mp_log_det(sizes, rho):
    # dense determinant of each diagonal block at 40 digits; float64 slogdet
    # loses relative accuracy when log det is close to zero (small rho)
    with mpmath.workdps(40):
        total = mpmath.mpf(0)
        for m in sizes:
            block = mpmath.matrix(int(m), int(m))
            for i in range(m):
                for j in range(m):
                    block[i, j] = 1 if i == j else mpmath.mpf(rho)
            total += mpmath.log(mpmath.det(block))
        return total


def test_1_linear_algebra_oracle():
    rng = np.random.default_rng(2024)
    elapsed = 0.0
    worst_det = worst_quad = 0.0
    for _ in range(200):
        sizes = [int(m) for m in rng.integers(1, 13, rng.integers(1, 9))]
        rho = float(rng.uniform(-0.08, 0.9))
        P = dense_corr(sizes, rho)
        eps = rng.normal(size=len(P))
        t0 = time.perf_counter()
        got_det = block_log_det(sizes, rho)
        got_quad = block_quadratic_form(eps, sizes, rho)
        elapsed += time.perf_counter() - t0
        logdet = mp_log_det(sizes, rho)
        quad = float(eps @ np.linalg.solve(P, eps))
        err = abs(got_det - logdet)
        worst_det = max(worst_det, float(err / abs(logdet)) if logdet else float(err))
        worst_quad = max(worst_quad, abs(got_quad - quad) / abs(quad))
    ok = worst_det <= 1e-10 and worst_quad <= 1e-10 and elapsed < 5
    report(1, ok, f"max rel err logdet {worst_det:.2e}, quad {worst_quad:.2e}; {elapsed:.3f}s in block routines")
    assert ok


def test_2_closed_form_doubling():
    dt = doubling_times_closed_form(TABLE2, spec=ModelSpec(7))
    ok = abs(dt.t_d - 9.24) <= 0.01 and abs(dt.t_c - 8.67) <= 0.01 and 4.5 <= dt.t_c <= 14.3
    report(2, ok, f"T_N={dt.t_n:.2f} T_D={dt.t_d:.3f} T_C={dt.t_c:.3f} months (CI 4.5-14.3 around 8.4)")
    assert ok


def test_3_synthetic_recovery():
    t0 = time.perf_counter()
    spec = ModelSpec(7)
    ds = generate_synthetic(spec, TABLE2, 300, 0.05, seed=0)
    point = fit(spec, ds, seed=0, n_starts=10)
    ens = bootstrap(spec, ds, 100, seed=0, n_starts=1, initial=[point.theta])
    sd = bootstrap_sd(ens)
    z = {k: abs(point.theta[k] - TABLE2[k]) / sd[k] for k in TABLE2}
    tc_true = doubling_times_closed_form(TABLE2).t_c
    tc = doubling_times_closed_form(point.theta).t_c
    rel = abs(tc - tc_true) / tc_true
    elapsed = time.perf_counter() - t0
    ok = max(z.values()) <= 3 and rel <= 0.15 and elapsed < 120
    worst = max(z, key=z.get)
    report(3, ok, f"max |err|/sd {z[worst]:.2f} ({worst}); T_C {tc:.2f} vs {tc_true:.2f} ({rel:.1%}); "
                  f"b=100, {ens.n_failed} failed; {elapsed:.1f}s")
    assert ok


def test_4_method_agreement():
    rng = np.random.default_rng(4)
    norms = Norms(1e6, 1e6, 2012.0)
    devs = []
    while len(devs) < 50:
        theta = {k: TABLE2[k] + rng.uniform(-3, 3) * TABLE2_SE[k] for k in TABLE2}
        if min(theta["alpha_param"], theta["beta_data"], theta["alpha_year"], theta["beta_year"]) <= 0:
            continue
        closed = doubling_times_closed_form(theta).t_c
        optimal = doubling_times_optimal_scaling(ModelSpec(7), theta, c_budget=1e21, norms=norms)
        devs.append(abs(optimal - closed) / closed)
    worst = max(devs)
    ok = worst <= 0.05
    report(4, ok, f"max relative gap {worst:.2%} over 50 draws (median {np.median(devs):.2%})")
    assert ok


def _brute(players, value):
    import itertools

    phi = dict.fromkeys(players, 0.0)
    perms = list(itertools.permutations(players))
    for order in perms:
        coal = frozenset()
        for p in order:
            phi[p] += value(coal | {p}) - value(coal)
            coal = coal | {p}
    return {p: v / len(perms) for p, v in phi.items()}


def test_5_shapley_axioms():
    from effcompute.analysis import SHAPLEY_PLAYERS

    rng = np.random.default_rng(5)
    norms = Norms(1e6, 1e6, 2012.0)
    spec = ModelSpec(7)
    worst_eff = worst_perm = 0.0
    for _ in range(100):
        theta = {k: TABLE2[k] + rng.uniform(-1, 1) * TABLE2_SE[k] for k in TABLE2}
        theta["alpha_param"] = abs(theta["alpha_param"]) + 0.01
        theta["beta_data"] = abs(theta["beta_data"]) + 0.01

        def draw(name, lo, hi):
            return EvalRecord(name, name, float(rng.uniform(lo, hi)), "WT103", 3.0,
                              float(10 ** rng.uniform(6, 11)), float(10 ** rng.uniform(6, 11)))

        old, new = draw("old", 2012, 2017), draw("new", 2017, 2023)
        attr = shapley_attribution(spec, theta, old, new, norms)

        def ppl(coal):
            n = new.params_n if "parameter_scaling" in coal else old.params_n
            d = new.dataset_tokens_d if "data_scaling" in coal else old.dataset_tokens_d
            ya = new.publication_year if "parameter_efficiency" in coal else old.publication_year
            yb = new.publication_year if "data_efficiency" in coal else old.publication_year
            la = theta["alpha_const"] - theta["alpha_year"] * (ya - 2012) - theta["alpha_param"] * math.log(n / 1e6)
            lb = theta["beta_const"] - theta["beta_year"] * (yb - 2012) - theta["beta_data"] * math.log(d / 1e6)
            return math.exp(math.exp(la) + math.exp(lb))

        base = ppl(frozenset())
        oracle = _brute(SHAPLEY_PLAYERS, lambda c: base - ppl(c))
        worst_perm = max(worst_perm, max(abs(attr.contributions[p] - oracle[p]) / abs(attr.total) for p in SHAPLEY_PLAYERS))
        worst_eff = max(worst_eff, abs(sum(attr.contributions.values()) - attr.total))

    # dummy: a factor with identical old/new values gets nothing
    same_year = shapley_attribution(
        spec, TABLE2, EvalRecord("a", "a", 2016.0, "WT103", 3.0, 1e7, 1e8), EvalRecord("b", "b", 2016.0, "WT103", 3.0, 1e9, 1e10), norms
    )
    dummy_ok = same_year.shares["parameter_efficiency"] == 0.0 and same_year.shares["data_efficiency"] == 0.0
    # symmetry: exchangeable players share equally
    sym = shapley_values(("x", "y", "z"), lambda s: float({"x", "y"} <= s) + 0.5 * ("z" in s))
    sym_ok = abs(sym["x"] - sym["y"]) < 1e-15
    ok = worst_eff <= 1e-9 and worst_perm <= 1e-9 and dummy_ok and sym_ok
    report(5, ok, f"efficiency err {worst_eff:.1e}, max gap to 24-permutation oracle {worst_perm:.1e} "
                  f"(relative to total); dummy {dummy_ok}; symmetry {sym_ok}")
    assert ok


def test_6_kaplan_chinchilla_ceg():
    grid = np.logspace(21, 25, 9)
    values = [kaplan_chinchilla_ceg(float(c)) for c in grid]
    low = kaplan_chinchilla_ceg(1e21)
    high = kaplan_chinchilla_ceg(2.5e24)
    monotone = all(b >= a for a, b in zip(values, values[1:]))
    ok = 1.3 <= low <= 2.5 and 2.5 <= high <= 6 and monotone
    report(6, ok, f"CEG(1e21)={low:.3f}, CEG(2.5e24)={high:.3f}, monotone={monotone}")
    assert ok


def test_7_transformer_ceg_closed_form():
    # Criterion as stated: numeric CEG should match m**(-1/e) to 1%.
    # With both exponents equal to e, shrinking N and D by s multiplies the
    # reducible loss by s**(-e), so the match needs s = m**(1/e) and the
    # compute ratio 1/s**2 equals m**(-2/e). The stated target is the square
    # root of that; the check is left as written.
    norms = Norms(1e6, 1e6, 2012.0)
    e, m = 0.05, 0.95
    theta = dict(TABLE2, alpha_const=0.5, beta_const=0.5, alpha_param=e, beta_data=e, gamma_T=math.log(m / (1 - m)))
    got = transformer_ceg(theta, c_budget=1e23, norms=norms)
    target = m ** (-1 / e)
    rel = abs(got - target) / target
    ok = rel <= 0.01
    report(7, ok, f"numeric CEG {got:.3f} vs stated m^(-1/e)={target:.3f} ({rel:.1%} off); "
                  f"m^(-2/e)={m ** (-2 / e):.3f}")
    assert ok


@pytest.mark.skipif(not PUBLIC_DATA, reason="set EFFCOMPUTE_PUBLIC_DATA to the public dataset CSV")
def test_8_public_dataset():
    ds = cap_per_paper(load_dataset(PUBLIC_DATA), 3)
    spec = ModelSpec(7, 0.0025)
    point = fit(spec, ds, seed=0)
    ens = bootstrap(spec, ds, 100, seed=0, n_starts=2, initial=[point.theta])
    lo, med, hi = quantiles(ens, lambda t: doubling_times_closed_form(t).t_c, [0.025, 0.5, 0.975])
    boot_ok = 7 <= med <= 10 and lo <= 14.3 and hi >= 4.5
    specs = [ModelSpec(m, d) for m in (7, 10, 15) for d in DELTA_GRID] + [ModelSpec(18, d) for d in DELTA_GRID]
    table = loocv(specs, ds, seed=0)
    best = {m: min(v for (mm, _), v in table.entries.items() if mm == m) for m in ("7", "10", "15", "18")}
    spread = max(best[m] for m in ("7", "10", "15")) - min(best[m] for m in ("7", "10", "15"))
    cv_ok = best["18"] > 0.5 and spread <= 0.003
    ok = boot_ok and cv_ok
    report(8, ok, f"median T_C {med:.2f} [{lo:.2f}, {hi:.2f}] months; LOOCV best 7/10/15/18 = "
                  + "/".join(f"{best[m]:.4f}" for m in ("7", "10", "15", "18")))
    assert ok


def test_8_skip_line():
    if not PUBLIC_DATA:
        conftest.ACCEPTANCE_LINES.append("ACCEPTANCE 8: SKIP  public dataset not provided (EFFCOMPUTE_PUBLIC_DATA)")


def test_9_cli_determinism(tmp_path):
    data = tmp_path / "data.csv"
    assert main(["synth", str(data), "--n", "120", "--seed", "9", "--papers", "30", "--rho", "0.3", "-o", str(tmp_path / "s.json")]) == 0
    names = data.read_text().splitlines()
    old, new = names[1].split(",")[0], names[2].split(",")[0]
    commands = {
        "synth": ["synth", str(tmp_path / "again.csv"), "--n", "40", "--seed", "2"],
        "validate": ["validate", str(data)],
        "fit": ["fit", str(data), "--bootstrap", "4", "--starts", "2"],
        "fit-cluster": ["fit", str(data), "--cluster", "--bootstrap", "3", "--starts", "1"],
        "loocv": ["loocv", str(data), "--grid", "custom", "--models", "1,7", "--deltas", "0,0.001", "--kfold", "4", "--starts", "1"],
        "analyze": ["analyze", str(data), "--gain", "5", "--ceg-chinchilla", "1e23", "--ceg-transformer",
                    "--cutoff", "2017", "--bootstrap", "2", "--starts", "1", "--boot-starts", "1"],
        "analyze-shapley": ["analyze", str(data), "--shapley", f"old={old}", f"new={new}", "--starts", "1"],
    }
    differing = []
    for name, argv in commands.items():
        outputs = []
        for threads in ("1", "2"):
            out = tmp_path / f"{name}-{threads}.json"
            main(argv + ["--threads", threads, "-o", str(out)])
            json.loads(out.read_bytes())
            extra = (tmp_path / "again.csv").read_bytes() if name == "synth" else b""
            outputs.append(out.read_bytes() + extra)
        if outputs[0] != outputs[1]:
            differing.append(name)
    ok = not differing
    report(9, ok, f"{len(commands)} commands rerun (threads 1 vs 2): "
                  + ("byte-identical" if ok else f"differ: {differing}"))
    assert ok
