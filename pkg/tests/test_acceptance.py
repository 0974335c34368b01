"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them
live). Criteria that depend on stochastic training use three seeds and
require a majority.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_instance
from ctrfuse.cli import main as cli_main
from ctrfuse.combined import evaluate_alternation_trace, predict, predict_many
from ctrfuse.core import (
    DyadKey,
    EventRecord,
    Hyperparameters,
    LatentFactors,
    OptimizerSettings,
    SideModel,
    SparseFeatureVector,
)
from ctrfuse.factorization import (
    FactorizationProblem,
    OffsetTable,
    fit,
    grad_cwf,
    loss_cwf,
)
from ctrfuse.ingest import downsample_day, event_arrays, merge_days
from ctrfuse.metrics import ScoredSet, auc, bootstrap_median_ci
from ctrfuse.pipeline import run_sequential, train_family
from ctrfuse.sidemodel import SideProblem, fit_lr, grad_lr, loss_lr, predict_lr
from ctrfuse.synth import GeneratorConfig, generate


def report(criterion: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {criterion}: {status}{suffix}")
    assert passed, f"{criterion} failed{suffix}"


def batch_opt(**kwargs):
    defaults = dict(batch_size=None, epochs=200, tol=1e-10, step_size=1.0)
    defaults.update(kwargs)
    return OptimizerSettings(**defaults)


# ---------------------------------------------------------------------------
# 1. confidence-weighted loss == expanded per-observation loss
# ---------------------------------------------------------------------------


def test_c01_loss_equivalence():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        # <= 10 dyads, <= 50 events
        aggs, factors, off = random_instance(
            rng, n_banners=5, n_domains=2, order=2, max_views=5
        )
        hyper = Hyperparameters(
            lambda_lr=0, lambda_bias=0, lambda_latent=0, order=factors.order
        )
        problem = FactorizationProblem(tuple(aggs), OffsetTable(off), hyper)
        got = loss_cwf(problem, factors)
        expected = 0.0
        for agg in aggs:
            i, j = agg.key.banner_index, agg.key.domain_index
            z = float(np.dot(factors.banner[i], factors.domain[j])) + off[agg.key]
            for label in [1] * agg.clicks + [0] * (agg.views - agg.clicks):
                p = 1 / (1 + math.exp(-z)) if z >= 0 else math.exp(z) / (1 + math.exp(z))
                expected -= label * math.log(p) + (1 - label) * math.log(1 - p)
        worst = max(worst, abs(got - expected) / abs(expected))
    elapsed = time.perf_counter() - start
    report(
        "1 loss-equivalence",
        worst < 1e-10 and elapsed < 1.0,
        f"max rel err {worst:.2e}, {elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# 2. analytic gradients match central finite differences
# ---------------------------------------------------------------------------


def _fd_check_factorization(rng, penalty):
    h = 1e-5
    worst = 0.0
    aggs, factors, off = random_instance(rng)
    lam = 0.6 if penalty == "l2" else 0.0
    hyper = Hyperparameters(
        lambda_latent=lam, lambda_bias=lam / 2, latent_penalty=penalty, order=factors.order
    )
    problem = FactorizationProblem(tuple(aggs), OffsetTable(off), hyper)
    ga, gb = grad_cwf(problem, factors)
    k = factors.order
    for which, grad, const_col in ((0, ga, k + 1), (1, gb, k)):
        mat = factors.banner if which == 0 else factors.domain
        for r in range(mat.shape[0]):
            for c in range(mat.shape[1]):
                if c == const_col:
                    continue
                a1, a2 = factors.banner.copy(), factors.banner.copy()
                b1, b2 = factors.domain.copy(), factors.domain.copy()
                tgt = (a1, a2) if which == 0 else (b1, b2)
                tgt[0][r, c] += h
                tgt[1][r, c] -= h
                fd = (
                    loss_cwf(problem, LatentFactors(k, a1, b1))
                    - loss_cwf(problem, LatentFactors(k, a2, b2))
                ) / (2 * h)
                worst = max(worst, abs(fd - grad[r, c]) / max(abs(fd), 1e-6))
    return worst


def _fd_check_lr(rng):
    h = 1e-5
    dim = 6
    n = 40
    events = []
    for _ in range(n):
        nnz = int(rng.integers(0, 4))
        idx = tuple(sorted(int(v) for v in rng.choice(dim, nnz, replace=False)))
        events.append(
            EventRecord(
                0,
                DyadKey(0, 0),
                int(rng.integers(0, 2)),
                SparseFeatureVector(idx, tuple(rng.uniform(0.5, 2.0, nnz)), dim),
            )
        )
    offsets = rng.normal(0, 0.4, n)
    # smooth part only: compare against the unpenalized loss
    problem = SideProblem(tuple(events), offsets, 0.0, batch_opt())
    model = SideModel(rng.normal(0, 0.8, dim), float(rng.normal()), 0.0)
    gw, gb = grad_lr(problem, model)
    worst = 0.0
    for c in range(dim):
        w1, w2 = model.weights.copy(), model.weights.copy()
        w1[c] += h
        w2[c] -= h
        fd = (
            loss_lr(problem, SideModel(w1, model.intercept, 0.0))
            - loss_lr(problem, SideModel(w2, model.intercept, 0.0))
        ) / (2 * h)
        worst = max(worst, abs(fd - gw[c]) / max(abs(fd), 1e-6))
    fd_b = (
        loss_lr(problem, SideModel(model.weights, model.intercept + h, 0.0))
        - loss_lr(problem, SideModel(model.weights, model.intercept - h, 0.0))
    ) / (2 * h)
    worst = max(worst, abs(fd_b - gb) / max(abs(fd_b), 1e-6))
    return worst


def test_c02_gradient_correctness():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        worst = max(worst, _fd_check_factorization(rng, "l2"))
        worst = max(worst, _fd_check_factorization(rng, "l1"))
        worst = max(worst, _fd_check_lr(rng))
    elapsed = time.perf_counter() - start
    report(
        "2 gradient-correctness",
        worst < 1e-5 and elapsed < 10.0,
        f"max rel err {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. rank-based AUC equals brute-force pair counting
# ---------------------------------------------------------------------------


def test_c03_auc_oracle_equivalence():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 1001))
        scores = rng.integers(0, 30, size=n) / 29.0  # grid scores force ties
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        got = auc(ScoredSet(scores, labels))
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        diff = pos[:, None] - neg[None, :]
        oracle = ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg))
        worst = max(worst, abs(got - oracle))
    elapsed = time.perf_counter() - start
    report(
        "3 auc-oracle-equivalence",
        worst < 1e-12 and elapsed < 10.0,
        f"max abs err {worst:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 4. half-problems are convex: two inits reach the same loss
# ---------------------------------------------------------------------------


def test_c04_convexity_of_half_problems():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    aggs, factors, off = random_instance(rng, n_banners=15, n_domains=8, order=3)
    hyper = Hyperparameters(
        lambda_latent=0.5, lambda_bias=0.5, order=3,
        optimizer=batch_opt(epochs=4000, tol=1e-14, step_size=2.0),
    )
    problem = FactorizationProblem(tuple(aggs), OffsetTable(off), hyper)
    losses = []
    for seed in (11, 12):
        init_rng = np.random.default_rng(seed)
        a = init_rng.normal(0, 1.0, factors.banner.shape)
        a[:, 4] = 1.0
        out = fit(problem, LatentFactors(3, a, factors.domain), fixed_side="cols")
        losses.append(loss_cwf(problem, out))
    rel = abs(losses[0] - losses[1]) / abs(losses[0])
    elapsed = time.perf_counter() - start
    report(
        "4 convexity-of-half-problems",
        rel < 1e-4 and elapsed < 30.0,
        f"rel gap {rel:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 5 & 6. synthetic recovery at desk scale (shared generated data)
# ---------------------------------------------------------------------------

RECOVERY_SEEDS = (101, 202, 303)


def _recovery_days(seed):
    config = GeneratorConfig(
        n_banners=200, n_domains=100, true_order=5, latent_scale=1.3, bias_scale=0.3,
        side_features=300, side_density=0.5, side_scale=0.7, intercept=-3.0,
        days=8, events_per_day=100000, features_per_event=4,
        domain_feature_mix=0.4, seed=seed,
    )
    return generate(config)[0]


@pytest.fixture(scope="module")
def recovery_data():
    return {seed: _recovery_days(seed) for seed in RECOVERY_SEEDS}


def _recovery_hyper(order, epochs=60, alternations=7):
    return Hyperparameters(
        lambda_lr=1.0, lambda_bias=1.0, lambda_latent=1.0, order=order,
        alternations=alternations,
        optimizer=batch_opt(epochs=epochs, tol=1e-9),
    )


def test_c05_synthetic_recovery_latent_lift(recovery_data):
    start = time.perf_counter()
    verdicts = []
    details = []
    for seed, days in recovery_data.items():
        aucs = {}
        for family, order in (("lr", 0), ("lr+lfl", 0), ("lr+lfl", 5), ("lr+lfl", 10)):
            res = run_sequential(
                days, _recovery_hyper(order), window=7, family=family,
                neg_downsample=10.0, min_clicks=1, seed=seed,
            )
            aucs[(family, order)] = res[0].report.daily_auc[res[0].day]
        lr = aucs[("lr", 0)]
        a0 = aucs[("lr+lfl", 0)]
        a5 = aucs[("lr+lfl", 5)]
        a10 = aucs[("lr+lfl", 10)]
        ok = (
            (a5 - lr >= 0.005)
            and a0 <= a5
            and a0 <= a10
            and (a10 - a5) < (a5 - a0)
        )
        verdicts.append(ok)
        details.append(
            f"seed {seed}: lr={lr:.4f} K0={a0:.4f} K5={a5:.4f} K10={a10:.4f}"
        )
    elapsed = time.perf_counter() - start
    passed = sum(verdicts) >= 2 and elapsed < 600.0
    report(
        "5 synthetic-recovery-latent-lift",
        passed,
        f"{sum(verdicts)}/3 seeds, {elapsed:.0f}s; " + "; ".join(details),
    )


def test_c06_alternation_level_off(recovery_data):
    start = time.perf_counter()
    verdicts = []
    details = []
    for seed, days in recovery_data.items():
        train_day = downsample_day(merge_days(days[:7]), 10.0, seed)
        # capped epochs per round so the trace resolves the alternation shape
        hyper = _recovery_hyper(5, epochs=15)
        trace = evaluate_alternation_trace(train_day, hyper, val_events=list(days[7].events))
        aucs = [a for _, a, _ in trace]
        ok = (aucs[6] - aucs[4]) < (aucs[2] - aucs[0])
        verdicts.append(ok)
        details.append(f"seed {seed}: d31={aucs[2]-aucs[0]:+.4f} d75={aucs[6]-aucs[4]:+.4f}")
    elapsed = time.perf_counter() - start
    passed = sum(verdicts) >= 2 and elapsed < 600.0
    report(
        "6 alternation-level-off",
        passed,
        f"{sum(verdicts)}/3 seeds, {elapsed:.0f}s; " + "; ".join(details),
    )


# ---------------------------------------------------------------------------
# 7. intercept correction calibrates down-sampled training
# ---------------------------------------------------------------------------


def test_c07_intercept_correction_calibration():
    start = time.perf_counter()
    config = GeneratorConfig(
        n_banners=30, n_domains=15, true_order=0, latent_scale=0.0, bias_scale=0.0,
        side_features=60, side_density=0.5, side_scale=0.5, intercept=-4.8,
        days=2, events_per_day=150000, seed=77,
    )
    days, _ = generate(config)
    train_day = downsample_day(days[0], 100.0, seed=77)
    hyper = Hyperparameters(
        lambda_lr=0.1, order=0, optimizer=batch_opt(epochs=800, tol=1e-14)
    )
    model = train_family(train_day, hyper, "lr")
    held_out = list(days[1].events)
    true_ctr = float(np.mean([ev.label for ev in held_out]))
    corrected = float(predict_many(model, held_out).mean())
    uncorrected_model = train_family(
        # same side model with the correction stripped
        train_day, hyper, "lr",
    )
    stripped = SideModel(
        uncorrected_model.side.weights, uncorrected_model.side.intercept, 0.0
    )
    from ctrfuse.combined import CombinedModel

    uncorrected = float(
        predict_many(CombinedModel(None, stripped, 0), held_out).mean()
    )
    rel_err = abs(corrected - true_ctr) / true_ctr
    inflation = uncorrected / true_ctr
    elapsed = time.perf_counter() - start
    report(
        "7 intercept-correction-calibration",
        rel_err < 0.10 and inflation > 20.0 and elapsed < 120.0,
        f"true {true_ctr:.5f}, corrected {corrected:.5f} (rel {rel_err:.3f}), "
        f"uncorrected x{inflation:.1f}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 8. cold-start fallback is bitwise exact
# ---------------------------------------------------------------------------


def test_c08_cold_start_fallback():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    config = GeneratorConfig(
        n_banners=10, n_domains=6, true_order=2, days=1, events_per_day=4000, seed=8
    )
    days, _ = generate(config)
    hyper = Hyperparameters(
        lambda_lr=0.5, lambda_bias=0.5, lambda_latent=0.5, order=2,
        alternations=2, optimizer=batch_opt(epochs=40),
    )
    model = train_family(days[0], hyper, "lr+lfl")
    check_start = time.perf_counter()
    exact = 0
    total = 0
    for _ in range(200):
        unseen = DyadKey(int(rng.integers(10, 500)), int(rng.integers(0, 6)))
        nnz = int(rng.integers(0, 4))
        idx = tuple(sorted(int(v) for v in rng.choice(30, nnz, replace=False)))
        x = SparseFeatureVector(idx, (1.0,) * nnz, 30)
        total += 1
        if predict(model, unseen, x) == predict_lr(model.side, x):
            exact += 1
    check_elapsed = time.perf_counter() - check_start
    report(
        "8 cold-start-fallback",
        exact == total and check_elapsed < 1.0,
        f"{exact}/{total} bitwise equal, check {check_elapsed:.2f}s",
    )


# ---------------------------------------------------------------------------
# 9. L1 path: sparsity grows with lambda; huge lambda zeroes everything
# ---------------------------------------------------------------------------


def test_c09_l1_sparsity_path():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    dim = 50
    n = 20000
    true_w = np.where(rng.random(dim) < 0.4, rng.normal(0, 0.8, dim), 0.0)
    events = []
    for _ in range(n):
        idx = tuple(sorted(int(v) for v in rng.choice(dim, 4, replace=False)))
        z = -2.0 + float(true_w[list(idx)].sum())
        p = 1 / (1 + math.exp(-z))
        events.append(
            EventRecord(
                0, DyadKey(0, 0), int(rng.random() < p),
                SparseFeatureVector(idx, (1.0,) * 4, dim),
            )
        )
    base_rate = np.mean([ev.label for ev in events])
    settings = batch_opt(epochs=900, tol=1e-14)
    zero_counts = []
    for lam in (0.1, 1.0, 10.0, 100.0):
        model = fit_lr(
            SideProblem(tuple(events), np.zeros(n), lam, settings), SideModel.zeros(dim)
        )
        zero_counts.append(int((model.weights == 0.0).sum()))
    monotone = zero_counts == sorted(zero_counts)
    # lambda at 100x the data scale (n events): everything must vanish
    big = fit_lr(
        SideProblem(tuple(events), np.zeros(n), 100.0 * n / dim, settings),
        SideModel.zeros(dim),
    )
    all_zero = bool((big.weights == 0.0).all())
    intercept_ok = abs(big.intercept - math.log(base_rate / (1 - base_rate))) < 1e-2
    elapsed = time.perf_counter() - start
    report(
        "9 l1-sparsity-path",
        monotone and all_zero and intercept_ok and elapsed < 120.0,
        f"zeros {zero_counts}, intercept err "
        f"{abs(big.intercept - math.log(base_rate/(1-base_rate))):.2e}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 10. bootstrap: deterministic under seed; covers the true median
# ---------------------------------------------------------------------------


def test_c10_bootstrap_determinism_and_coverage():
    start = time.perf_counter()
    values = list(np.random.default_rng(0).normal(0, 1, 500))
    a = bootstrap_median_ci(values, seed=42)
    b = bootstrap_median_ci(values, seed=42)
    deterministic = a == b
    rng = np.random.default_rng(10)
    covered = 0
    reps = 200
    for _ in range(reps):
        draws = rng.normal(0.0, 1.0, 1000)
        _, lo, hi = bootstrap_median_ci(draws, samples=5000, seed=int(rng.integers(1 << 31)))
        if lo <= 0.0 <= hi:
            covered += 1
    elapsed = time.perf_counter() - start
    report(
        "10 bootstrap-determinism-and-coverage",
        deterministic and covered >= 0.85 * reps and elapsed < 60.0,
        f"coverage {covered}/{reps}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 11. synth -> train -> evaluate reproduces byte-identical CSVs
# ---------------------------------------------------------------------------


def test_c11_end_to_end_reproducibility(tmp_path):
    start = time.perf_counter()

    def one_run(root):
        root.mkdir()
        gen_cfg = root / "gen.cfg"
        gen_cfg.write_text(
            "banners=20\ndomains=12\nk_true=2\nside_features=40\ndays=3\n"
            "events_per_day=3000\nseed=6\n"
        )
        hyper_cfg = root / "hyper.cfg"
        hyper_cfg.write_text(
            "k=2\nfamily=lr+lfl\nlambda_lr=1.0\nalternations=2\n"
            "batch_size=full\nepochs=40\nseed=0\n"
        )
        data = root / "data"
        assert cli_main(["synth", "--config", str(gen_cfg), "--out", str(data)]) == 0
        model = root / "m.model"
        assert (
            cli_main(
                [
                    "train", "--data", str(data / "day_0[01].tsv"),
                    "--hyper", str(hyper_cfg), "--out", str(model),
                ]
            )
            == 0
        )
        out = root / "metrics.csv"
        assert (
            cli_main(
                [
                    "evaluate", "--model", str(model), "--data", str(data / "day_02.tsv"),
                    "--min-clicks", "1,10", "--seed", "5", "--out", str(out),
                ]
            )
            == 0
        )
        return (out.read_bytes(), (root / "metrics_summary.csv").read_bytes())

    first = one_run(tmp_path / "run1")
    second = one_run(tmp_path / "run2")
    elapsed = time.perf_counter() - start
    report(
        "11 end-to-end-reproducibility",
        first == second and elapsed < 300.0,
        f"metrics+summary identical: {first == second}, {elapsed:.0f}s",
    )
