"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment-level criteria share seeded runs of the default configuration
(20 rounds) through the ``seeded_run`` cache in ``conftest.py``.
"""

import time

import numpy as np

from hetfl.cli import main
from hetfl.data import LabeledDataset, PartitionSpec, generate_synthetic, max_class_share, partition_dirichlet
from hetfl.federation import ClientState, ExperimentConfig, collect_and_aggregate_logits, run_experiment
from hetfl.nn import L1Distill, LocalCombined, LwoF, ModelArch, TaskCE, forward_logits, init_params

from .oracles import finite_difference_check

ROUNDS = 20
PP = 0.01  # one percentage point


def _pct(x):
    return f"{100 * x:.2f}%"


# ---------------------------------------------------------------- 1

def test_criterion_01_gradients(record_criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 5))
    labels = rng.integers(0, 7, size=6)
    worst = 1.0
    for depth in (1, 2, 3):
        params = init_params(ModelArch(5, depth, 6, 7), depth)
        other = rng.normal(size=(6, 7))
        for objective in (L1Distill(other), TaskCE(labels), LwoF(other, rho=2.0),
                          LocalCombined(labels, other, rho=2.0, beta=1.0)):
            worst = min(worst, finite_difference_check(params, x, objective, h=1e-4,
                                                       rtol=1e-3, atol=1e-5))
    elapsed = time.perf_counter() - start
    ok = worst >= 0.99 and elapsed < 30
    record_criterion(1, ok, f"min matching fraction {worst:.4f} (>= 0.99), {elapsed:.1f}s (< 30s)")
    assert ok


# ---------------------------------------------------------------- 2

def _mean_oracle(logit_list):
    n_rows, n_cols = logit_list[0].shape
    out = np.empty((n_rows, n_cols))
    for i in range(n_rows):
        for j in range(n_cols):
            s = 0.0
            for z in logit_list:
                s += float(z[i, j])
            out[i, j] = s / len(logit_list)
    return out


def test_criterion_02_aggregation_oracle(record_criterion):
    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        ids = rng.choice(1000, size=n, replace=False)
        inputs = rng.normal(size=(int(rng.integers(1, 12)), 4))
        subset = LabeledDataset(inputs, np.zeros(len(inputs), dtype=int), 1, "public")
        clients = [ClientState(int(i), init_params(ModelArch(4, int(rng.integers(1, 4)), 5, 6),
                                                   int(rng.integers(2**31))), None)
                   for i in ids]
        shuffled = [clients[k] for k in rng.permutation(n)]
        got = collect_and_aggregate_logits(shuffled, subset)
        canonical = sorted(clients, key=lambda c: c.client_id)
        want = _mean_oracle([forward_logits(c.model, inputs) for c in canonical])
        mismatches += not np.array_equal(got, want)
    ok = mismatches == 0
    record_criterion(2, ok, f"{100 - mismatches}/100 random client sets bit-identical")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_03_partition(record_criterion):
    exact = True
    shares = {0.1: [], 0.5: [], 1e6: []}
    for seed in range(20):
        _, train, _ = generate_synthetic(rng_seed=seed)
        counts = np.bincount(train.labels, minlength=train.class_count)
        for alpha in shares:
            shards = partition_dirichlet(train, PartitionSpec(alpha, 20, seed))
            idx = np.concatenate([s.indices for s in shards])
            exact &= len(idx) == len(train) == len(np.unique(idx))
            exact &= bool(np.array_equal(sum(s.per_class_counts for s in shards), counts))
            shares[alpha].append(max_class_share(shards))
    m = {a: float(np.mean(v)) for a, v in shares.items()}
    ok = exact and m[0.1] > m[0.5] > m[1e6]
    record_criterion(3, ok, f"exact={exact}; mean max-class share "
                            f"{m[0.1]:.3f} > {m[0.5]:.3f} > {m[1e6]:.3f}")
    assert ok


# ---------------------------------------------------------------- 4, 5

def test_criterion_04_kd_boost(record_criterion, seeded_run):
    start = time.perf_counter()
    _, rep = seeded_run(rounds=ROUNDS)
    elapsed = time.perf_counter() - start
    boost = rep.distilled_final_mean - rep.initial_mean
    ok = boost >= 10 * PP and elapsed < 300
    record_criterion(4, ok, f"distilled {_pct(rep.distilled_final_mean)} - initial "
                            f"{_pct(rep.initial_mean)} = {_pct(boost)} (>= 10pp), {elapsed:.0f}s")
    assert ok


def test_criterion_05_global_vs_clients(record_criterion, seeded_run):
    _, rep = seeded_run(rounds=ROUNDS)
    margin = rep.global_final - rep.distilled_final_mean
    ok = rep.global_final >= rep.distilled_final_mean - PP
    soft = "strictly above" if margin > 0 else "not strictly above"
    record_criterion(5, ok, f"global {_pct(rep.global_final)} vs distilled "
                            f"{_pct(rep.distilled_final_mean)}, margin {_pct(margin)} "
                            f"(>= -1pp); soft check: {soft}")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_06_heterogeneity_gap(record_criterion, seeded_run):
    _, skewed = seeded_run(rounds=ROUNDS)
    _, mild = seeded_run(rounds=ROUNDS, alpha=0.5)
    g1, g5 = skewed.tail_mean("gap", 10), mild.tail_mean("gap", 10)
    ok = g1 > g5
    record_criterion(6, ok, f"final-10 gap alpha=0.1 {_pct(g1)} > alpha=0.5 {_pct(g5)}")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_07_lwof(record_criterion, seeded_run):
    _, plain = seeded_run(rounds=ROUNDS, method="fedmd_global_lwof", beta=0.0)
    _, lwof = seeded_run(rounds=ROUNDS, method="fedmd_global_lwof", beta=1.0, rho=2.0)
    t = {name: (plain.tail_mean(attr, 10), lwof.tail_mean(attr, 10))
         for name, attr in (("gap", "gap"), ("personalised", "personalised_acc_mean"),
                            ("distilled", "distilled_acc_mean"), ("global", "global_acc"))}
    checks = {
        "gap smaller": t["gap"][1] < t["gap"][0],
        "personalised larger": t["personalised"][1] > t["personalised"][0],
        "distilled not higher": t["distilled"][1] <= t["distilled"][0],
        "global not higher": t["global"][1] <= t["global"][0],
    }
    ok = all(checks.values())
    detail = "; ".join(f"{k} {_pct(b)} vs {_pct(a)}" for k, (a, b) in t.items())
    failed = [k for k, v in checks.items() if not v]
    record_criterion(7, ok, detail + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_08_fedavg_participation(record_criterion, seeded_run):
    acc = {}
    for alpha, parts in ((0.1, (0.4, 0.6, 1.0)), (1e6, (0.4, 1.0))):
        for p in parts:
            _, rep = seeded_run(rounds=ROUNDS, method="fedavg", alpha=alpha, participation=p)
            acc[alpha, p] = rep.global_final
    spread_skewed = acc[0.1, 1.0] - acc[0.1, 0.4]
    spread_iid = abs(acc[1e6, 1.0] - acc[1e6, 0.4])
    ordered = acc[0.1, 0.4] < acc[0.1, 0.6] < acc[0.1, 1.0]
    shrinks = spread_iid <= 0.5 * spread_skewed
    ok = ordered and shrinks
    record_criterion(8, ok, f"alpha=0.1: {_pct(acc[0.1, 0.4])} < {_pct(acc[0.1, 0.6])} < "
                            f"{_pct(acc[0.1, 1.0])}; spread {_pct(spread_skewed)} -> "
                            f"near-IID {_pct(spread_iid)} (<= half)")
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_09_manifest_rerun(record_criterion, tmp_path):
    same = {}
    for method in ("fedmd_global_lwof", "fedavg"):
        a, b = tmp_path / method / "a", tmp_path / method / "b"
        assert main(["run", "--quiet", "--out", str(a), "--set", "rounds=3",
                     "--set", f"method={method}", "--set", "participation=0.6"]) == 0
        assert main(["run", "--quiet", "--out", str(b), "--manifest", str(a / "manifest.json")]) == 0
        same[method] = (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()
    ok = all(same.values())
    record_criterion(9, ok, "rounds.csv byte-identical after manifest rerun: "
                            + ", ".join(f"{m}={v}" for m, v in same.items()))
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_beta_zero(record_criterion):
    cfg = ExperimentConfig(rounds=3)
    base, _ = run_experiment(cfg)
    lwof0, _ = run_experiment(cfg.replace(method="fedmd_global_lwof", beta=0.0))
    ok = base == lwof0
    record_criterion(10, ok, f"{len(base)} RoundRecords identical with beta=0")
    assert ok
