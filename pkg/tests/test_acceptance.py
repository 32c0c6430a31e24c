"""End-to-end acceptance checks, one group per criterion.

Each test carries ``@pytest.mark.acceptance(n)``; conftest prints a PASS/FAIL
line per criterion after the run.  Oracles here are computed independently of
the package (stdlib ``decimal``, vectorized numpy closed forms, plain-float
Adam) rather than by calling the code under test twice.
"""

import csv
import json
import math
import time
from decimal import Decimal, getcontext

import numpy as np
import pytest

from warmlab.autodiff import Tape, grad_check, softmax_cross_entropy
from warmlab.cli import main as cli_main
from warmlab.harness import CONVERGED, DIVERGED, INCONCLUSIVE, DetectorConfig, MetricsRow, detect_divergence, train
from warmlab.harness.presets import policy_variants, tiny_run
from warmlab.model import StackConfig, apply, build, depth_gain_probe
from warmlab.optim import AdamConfig, AdamState, ClipConfig, adam_step, clip_global_norm
from warmlab.schedule import (
    Exponential,
    InverseSqrtLinear,
    PiecewiseLinear,
    Polynomial,
    ScheduleConfig,
    crossovers,
    lr_at,
    default_configs,
    schedule_table,
)

ETA, W = 2e-4, 50_000


def rel(a, b):
    return abs(a - b) / abs(b)


def elapsed_since(t0):
    return time.perf_counter() - t0


# ---- 1. golden values ---------------------------------------------------------


def decimal_oracles():
    getcontext().prec = 40
    eta = Decimal("2e-4")
    half = Decimal("0.5")
    poly = eta * half * half.sqrt()  # 0.5 ** 1.5
    expo = eta * (Decimal("0.75").exp() - 1) / (Decimal("1.5").exp() - 1)
    return float(poly), float(expo)


@pytest.mark.acceptance(1)
def test_c1_schedule_golden_values():
    t0 = time.perf_counter()
    poly_25k, exp_25k = decimal_oracles()
    cfg = default_configs(ETA, W)
    cases = [
        (cfg["inverse_sqrt"], 0, 0.0),
        (cfg["inverse_sqrt"], 200_000, 1e-4),
        (cfg["piecewise_linear"], 25_000, 2e-5),
        (cfg["piecewise_linear"], 37_500, 1.1e-4),
        (cfg["polynomial"], 25_000, poly_25k),
        (cfg["exponential"], 25_000, exp_25k),
    ]
    cases += [(c, W, ETA) for c in cfg.values()]
    for c, step, want in cases:
        got = lr_at(c, step)
        if want == 0.0:
            assert got == 0.0
        else:
            assert rel(got, want) <= 1e-12, (c.name, step, got, want)
    # the rounded values usually quoted for these two points
    assert round(poly_25k, 9) == 7.0711e-5
    assert round(exp_25k, 8) == 6.416e-5
    # table rows for the linear policy
    rows = schedule_table(cfg["inverse_sqrt"], W, 25_000).rows
    assert [s for s, _ in rows] == [0, 25_000, 50_000]
    assert rel(rows[1][1], 1e-4) <= 1e-12 and rel(rows[2][1], 2e-4) <= 1e-12
    assert elapsed_since(t0) < 1.0


# ---- random configurations ------------------------------------------------


def random_policies(rng, eta, w):
    """One instance of each policy family sharing (eta, w), with random shape parameters."""
    return [
        ScheduleConfig(eta, w, InverseSqrtLinear()),
        ScheduleConfig(eta, w, PiecewiseLinear(eta * rng.uniform(0.01, 0.99), int(rng.integers(1, w)))),
        ScheduleConfig(eta, w, Polynomial(float(rng.uniform(0.05, 6.0)))),
        ScheduleConfig(eta, w, Exponential(float(rng.uniform(0.05, 20.0)))),
    ]


def random_shared_horizon(rng):
    return float(10 ** rng.uniform(-6, 0)), int(rng.integers(2, 1_000_001))


@pytest.mark.acceptance(2)
def test_c2_decay_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240202)
    for _ in range(1000):
        eta, w = random_shared_horizon(rng)
        configs = random_policies(rng, eta, w)
        steps = rng.integers(w, 100 * w + 1, size=100)
        for s in steps.tolist():
            values = {lr_at(c, s) for c in configs}
            assert len(values) == 1, (eta, w, s, values)
    assert elapsed_since(t0) < 1.0


@pytest.mark.acceptance(3)
def test_c3_continuity_and_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240203)
    for _ in range(250):
        eta, w = random_shared_horizon(rng)
        for c in random_policies(rng, eta, w):  # 1000 configs in total
            assert abs(lr_at(c, w) - eta) == 0
            warm = sorted({0, w, *rng.integers(0, w + 1, size=40).tolist()})
            decay = sorted({w, *rng.integers(w, 50 * w + 1, size=40).tolist()})
            wv = [lr_at(c, s) for s in warm]
            dv = [lr_at(c, s) for s in decay]
            assert all(a <= b for a, b in zip(wv, wv[1:])), (c, warm, wv)
            assert all(a >= b for a, b in zip(dv, dv[1:])), (c, decay, dv)
            assert all(0.0 <= v <= eta for v in wv + dv)
    assert elapsed_since(t0) < 5.0


# ---- 4. crossover -------------------------------------------------------------


@pytest.mark.acceptance(4)
def test_c4_exponential_polynomial_crossover():
    t0 = time.perf_counter()
    cfg = default_configs(ETA, W)
    found = crossovers(cfg["exponential"], cfg["polynomial"], 1, W)
    assert len(found) == 1
    (c,) = found
    assert 14_000 <= c.step <= 16_000
    assert c.before == 1 and c.after == -1  # exponential leads before

    # independent exhaustive scan of both closed forms
    i = np.arange(1, W + 1, dtype=np.float64)
    expo = ETA * np.expm1(1.5 * i / W) / np.expm1(1.5)
    poly = ETA * (i / W) ** 1.5
    sign = np.sign(expo - poly)
    nz = np.flatnonzero(sign[:-1])  # the final step is the shared peak
    flips = nz[1:][sign[nz[1:]] != sign[nz[:-1]]]
    assert len(flips) == 1
    assert int(i[flips[0]]) == c.step
    assert elapsed_since(t0) < 1.0


# ---- 5. gradient correctness ---------------------------------------------------


@pytest.mark.acceptance(5)
def test_c5_finite_difference_gradients():
    t0 = time.perf_counter()
    worst = worst_raw = 0.0
    for seed in range(20):
        cfg = StackConfig(depth=2, subcomponents_per_block=2, width=8, input_dim=4, num_classes=3, seed=seed)
        model = build(cfg)
        assert model.param_count <= 1000
        rng = np.random.default_rng(seed + 1000)
        x = rng.standard_normal((6, cfg.input_dim))
        y = rng.integers(0, cfg.num_classes, size=6)
        names = sorted(model.params)

        def f(tape, *leaves):
            _, logits = apply(cfg, dict(zip(names, leaves)), tape.leaf(x))
            return softmax_cross_entropy(logits, y)

        # A central difference carries roundoff of about eps*|f|/h in absolute
        # terms, so a component smaller than that divided by the tolerance cannot
        # be resolved to the tolerance at all.  Such components are compared on
        # that floor instead of on their own magnitude.
        h, tol = 1e-5, 1e-4
        tape = Tape()
        loss = float(f(tape, *[tape.leaf(model.params[n]) for n in names]).value)
        floor = np.finfo(np.float64).eps * max(1.0, abs(loss)) / h / tol
        report = grad_check(f, [model.params[n] for n in names], h=h, tol=tol, rel_floor=floor)
        assert report.passed and report.max_rel_error < tol, (seed, report.max_rel_error)
        assert report.checked > 0.9 * model.param_count
        worst = max(worst, report.max_rel_error)
        raw = np.abs(report.analytic - report.numeric) / np.maximum(np.maximum(abs(report.analytic), abs(report.numeric)), 1e-300)
        worst_raw = max(worst_raw, float(np.nanmax(np.where(report.analytic == report.numeric, 0.0, raw))))
    print(f"worst relative error over 20 seeds: {worst:.3g} (unfloored {worst_raw:.3g}, floor about {floor:.1e})")
    assert elapsed_since(t0) < 30.0


# ---- 6. optimizer -------------------------------------------------------------


def adam_oracle(p, grad, steps, lr, b1, b2, eps, wd):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps) - lr * wd * p
        out.append(p)
    return out


@pytest.mark.acceptance(6)
@pytest.mark.parametrize("wd", [0.0, 1e-3])
def test_c6_adam_matches_oracle(wd):
    t0 = time.perf_counter()
    a, c, lr = 3.0, 1.7, 1e-2
    grad = lambda p: a * (p - c)  # noqa: E731  quadratic 0.5*a*(p-c)^2
    cfg = AdamConfig(weight_decay=wd)
    expected = adam_oracle(-2.0, grad, 100, lr, cfg.beta1, cfg.beta2, cfg.epsilon, wd)
    params = {"p": np.array(-2.0)}
    state = AdamState.zeros_like(params)
    for want in expected:
        g = {"p": np.array(grad(float(params["p"])))}
        params, state = adam_step(params, g, state, cfg, lr)
        assert abs(float(params["p"]) - want) <= 1e-12
    assert state.t == 100
    assert elapsed_since(t0) < 5.0


@pytest.mark.acceptance(6)
def test_c6_clipping_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240206)
    clip = ClipConfig(10.0)
    clipped = 0
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        scale = 10 ** rng.uniform(-3, 3)
        grads = [scale * rng.standard_normal(tuple(rng.integers(1, 6, size=int(rng.integers(1, 3))))) for _ in range(k)]
        once, pre, post = clip_global_norm(grads, clip)
        twice, pre2, post2 = clip_global_norm(once, clip)
        for x, y in zip(once, twice):
            assert x.tobytes() == y.tobytes()
        flat_g = np.concatenate([g.ravel() for g in grads])
        flat_c = np.concatenate([g.ravel() for g in once])
        assert post <= max(pre, clip.max_norm) * (1 + 1e-12)
        if pre > 0:
            cos = flat_g @ flat_c / (np.linalg.norm(flat_g) * np.linalg.norm(flat_c))
            assert abs(cos - 1.0) <= 1e-12
            ratio = flat_c[flat_g != 0] / flat_g[flat_g != 0]
            assert (ratio >= 0).all() and np.ptp(ratio) <= 1e-12 * ratio.max()
        clipped += pre > clip.max_norm
    assert 100 < clipped < 900  # both regimes exercised
    assert elapsed_since(t0) < 5.0


# ---- 7. detector --------------------------------------------------------------


def trace(gnorms, losses=None):
    if losses is None:
        losses = np.linspace(3.0, 1.0, len(gnorms))
    return [MetricsRow(i + 1, 1e-4, float(l), math.exp(l), float(g), min(float(g), 10.0)) for i, (g, l) in enumerate(zip(gnorms, losses))]


@pytest.mark.acceptance(7)
def test_c7_detector_fixtures():
    t0 = time.perf_counter()
    n = 1000
    flat = trace([5.0] * n)
    assert detect_divergence(flat).status == CONVERGED

    healthy = trace(np.r_[np.linspace(40, 20, 50), np.full(n - 50, 12.0)])  # elevated only early
    assert detect_divergence(healthy).status == CONVERGED

    spiky = [5.0] * n
    spiky[400], spiky[700] = 150.0, 220.0
    v = detect_divergence(trace(spiky))
    assert v.status == DIVERGED and [s for s, _ in v.evidence] == [401, 701]

    middling = [5.0] * n
    middling[500] = 60.0
    assert detect_divergence(trace(middling)).status == INCONCLUSIVE

    nan_loss = trace([5.0] * n)
    nan_loss[300] = nan_loss[300]._replace(loss=math.nan)
    assert detect_divergence(nan_loss).status == DIVERGED
    assert elapsed_since(t0) < 1.0


@pytest.mark.acceptance(7)
def test_c7_detector_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240207)
    for _ in range(300):
        n = int(rng.integers(1, 80))
        g = np.where(rng.random(n) < 0.05, rng.uniform(0, 400, n), rng.uniform(0, 30, n))
        log = trace(g, np.sort(rng.uniform(0.5, 3.0, n))[::-1])
        spike = float(rng.uniform(26, 300))
        low = detect_divergence(log, DetectorConfig(spike_threshold=spike)).status
        high = detect_divergence(log, DetectorConfig(spike_threshold=spike + float(rng.uniform(0, 300)))).status
        if low == CONVERGED:
            assert high == CONVERGED
    assert elapsed_since(t0) < 1.0


# ---- 8. depth growth ------------------------------------------------------------


@pytest.mark.acceptance(8)
def test_c8_depth_growth():
    t0 = time.perf_counter()
    depths = [2, 4, 8, 16]
    plain = depth_gain_probe(StackConfig(width=32), depths, trials=8)
    normed = depth_gain_probe(StackConfig(width=32, normalize_subcomponents=True), depths, trials=8)
    acts = [r.act_norm for r in plain]
    assert all(a <= b for a, b in zip(acts, acts[1:])), acts
    plain_ratio = plain[-1].act_norm / plain[0].act_norm
    normed_ratio = normed[-1].act_norm / normed[0].act_norm
    print(f"depth 16/2 activation ratio: unnormalized {plain_ratio:.3f}, normalized {normed_ratio:.3f}")
    assert plain_ratio > normed_ratio
    assert elapsed_since(t0) < 120.0


# ---- 9. determinism and resume ----------------------------------------------------


@pytest.mark.acceptance(9)
def test_c9_resume_matches_uninterrupted(tmp_path):
    t0 = time.perf_counter()
    run = tiny_run(checkpoint_every=250)
    full = train(run, out_dir=tmp_path / "full")
    again = train(run)
    resumed = train(run, out_dir=tmp_path / "resumed", resume_from=tmp_path / "full" / "checkpoints" / "step_00000250.json")
    key = lambda log: [r.deterministic() for r in log]  # noqa: E731
    assert len(full.log) == 500
    assert key(again.log) == key(full.log)
    assert key(resumed.log) == key(full.log)
    assert key(resumed.log[250:]) == key(full.log[250:])
    assert elapsed_since(t0) < 120.0


# ---- 10. four-policy sweep ----------------------------------------------------------


@pytest.mark.acceptance(10)
def test_c10_four_policy_sweep(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "sweep"
    assert cli_main(["sweep", "--preset", "tiny", "--out", str(out)]) == 0
    with open(out / "summary.csv", newline="") as fp:
        summary = list(csv.DictReader(fp))
    assert len(summary) == 4
    meta = json.loads((out / "summary.json").read_text())
    assert meta["shared_init"] is True

    variants = policy_variants()
    base = tiny_run()
    for row in summary:
        config = variants[row["variant"]]
        with open(out / row["variant"] / "metrics.csv", newline="") as fp:
            logged = [(int(r["step"]), float(r["lr"])) for r in csv.DictReader(fp)]
        table = dict(schedule_table(config, base.total_steps).rows)
        assert logged and all(lr == table[step] for step, lr in logged)
        verdict = json.loads((out / row["variant"] / "verdict.json").read_text())
        assert verdict["status"] == row["status"]
        if verdict["status"] == DIVERGED:
            assert verdict["evidence"] or not math.isfinite(verdict["final_loss"])
    order = ", ".join(f"{r['variant']}={float(r['final_loss']):.4f} ({r['status']})" for r in summary)
    print(f"tiny-benchmark sweep: {order}")
    assert elapsed_since(t0) < 15 * 60
