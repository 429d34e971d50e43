"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.  Every line carries the measured numbers
next to the pinned tolerance.
"""
import functools
import sys
import time

from anosov.cone import estimate_growth_indicator
from anosov.experiments import (ExperimentConfig, decomposition_checks, identity_checks,
                                load_ball, run_bisector_experiment, run_cone_count,
                                run_growth_indicator, run_limit_cone, run_ps_measure,
                                run_symmetric_count)
from anosov.fixtures import product_schottky, rank_one_schottky, sl3_schottky
from anosov.symmetric import dom_integral_check

# tolerances and budgets
IDENTITY_WORDS = 10_000
DECOMPOSITION_SAMPLES = 1000
DOM_T = 1e4
DOM_LIMIT_REL = 5e-3
DEPTH_AGREEMENT = 0.05
ABSCISSA_AGREEMENT = 0.05
DIRECTIONAL_REL = 0.10
DIRECTIONS = ([0.45, 0.55], [0.5, 0.5], [0.53, 0.47])
BUDGET = {1: 30.0, 2: 30.0, 3: 5.0, 4: 120.0, 5: 120.0, 6: 300.0, 7: 300.0, 8: 120.0}
THREADS = (1, 2, 8)

_OUT = sys.__stdout__


def emit(criterion, ok, text):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {text}"
    print(line, file=_OUT, flush=True)
    return ok


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# criteria 4-8 share their tables; one block per worker count


def _cfg(kind, gens, depth, threads, **params):
    cfg = ExperimentConfig.default(kind)
    cfg.gens, cfg.depth, cfg.threads, cfg.params = gens, depth, threads, params
    return cfg


@functools.lru_cache(maxsize=None)
def block(threads):
    """Run criteria 4-8 with the given worker count.

    Returns (results, seconds, files) where ``files`` maps an output name to
    the exact bytes each experiment would write.
    """
    product, rank_one = product_schottky(), rank_one_schottky()
    res, secs, files = {}, {}, {}

    t0 = time.perf_counter()
    cfg = _cfg("limit-cone", product, 12, threads)
    table = load_ball(cfg)
    res[4] = run_limit_cone(cfg, table)
    secs[4] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res[5] = {}
    for depth in (10, 12):
        g = _cfg("growth-indicator", rank_one, depth, threads)
        res[5][depth] = run_growth_indicator(g, load_ball(g))
    secs[5] = time.perf_counter() - t0

    t0 = time.perf_counter()
    est = estimate_growth_indicator(table)
    res[6] = run_cone_count(_cfg("cone-count", product, 12, threads,
                                 directions=[list(d) for d in DIRECTIONS]), table, est)
    res["6b"] = [run_bisector_experiment(_cfg("bisector-count", product, 12, threads,
                                              direction=list(d)), table, est)
                 for d in DIRECTIONS]
    secs[6] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sym = _cfg("symmetric-count", product, 12, threads)
    sym.pair_spec = {"kind": "swap"}
    res[7] = run_symmetric_count(sym, table, est)
    secs[7] = time.perf_counter() - t0 + secs[4]  # includes enumeration

    t0 = time.perf_counter()
    res[8] = run_ps_measure(_cfg("ps-measure", rank_one, 12, threads, depths=[10, 12]))
    secs[8] = time.perf_counter() - t0

    outputs = {"4": res[4], "5-10": res[5][10], "5-12": res[5][12], "6": res[6],
               "7": res[7], "8": res[8]}
    outputs.update({f"6b-{k}": r for k, r in enumerate(res["6b"])})
    for name, r in outputs.items():
        for fname, text in r.files(scatter=True).items():
            files[f"{name}/{fname}"] = text.encode()
    return res, secs, files


# ---------------------------------------------------------------------------


def criterion_1():
    groups = {"SL2": rank_one_schottky(), "SL3": sl3_schottky(), "SL2xSL2": product_schottky()}
    t0 = time.perf_counter()
    checks = []
    for name, gens in groups.items():
        checks += identity_checks(gens, IDENTITY_WORDS, 8, seed=0, label=name)
    secs = time.perf_counter() - t0
    bad = [c for c in checks if not c.passed]
    worst = {}
    for c in checks:
        key = c.name.split("[")[0]
        worst[key] = max(worst.get(key, 0.0), c.value)
    parts = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    ok = not bad and secs < BUDGET[1]
    return emit(1, ok, f"identity suite over {IDENTITY_WORDS} words x 3 groups: {parts}; "
                       f"{secs:.1f} s (budget {BUDGET[1]:.0f} s)"
                       + (f"; failing: {[c.name for c in bad]}" if bad else ""))


def criterion_2():
    checks, secs = _timed(decomposition_checks, DECOMPOSITION_SAMPLES, 0)
    bad = [c for c in checks if not c.passed]
    worst = {}
    for c in checks:
        key = c.name.split(" ")[0] + (" sigma" if c.name.startswith("sigma") else "")
        worst[key] = max(worst.get(key, 0.0), c.value)
    parts = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    ok = not bad and secs < BUDGET[2]
    return emit(2, ok, f"decomposition round-trips ({DECOMPOSITION_SAMPLES} samples per pair): "
                       f"{parts}; {secs:.1f} s (budget {BUDGET[2]:.0f} s)"
                       + (f"; failing: {[c.name for c in bad]}" if bad else ""))


def criterion_3():
    t0 = time.perf_counter()
    rows = []
    for gap in (0, 1, 2):
        for w in (0.0, 1.0, 2.0):
            num, lim, bound = dom_integral_check(1.0, 1 + gap, 1, w, DOM_T)
            rows.append((gap, w, abs(num / lim - 1), num - bound))
    secs = time.perf_counter() - t0
    worst = max(r[2] for r in rows)
    limit_ok = worst < DOM_LIMIT_REL and secs < BUDGET[3]
    over = [(g, w, e) for g, w, _, e in rows if e > 0]
    emit("3a", limit_ok, f"dom quadrature vs limit: worst relative error {worst:.2e} "
                         f"(tol {DOM_LIMIT_REL}); {secs:.2f} s")
    bound_ok = not over
    detail = "; ".join(f"r-r0={g} |w|={w:g} exceeds by {e:.1e}" for g, w, e in over)
    emit("3b", bound_ok, "dom quadrature vs bound e^{-c delta |w|^2}/delta: "
                         + (detail if over else "all 9 cases within"))
    return limit_ok, bound_ok


def criterion_4():
    res, secs, _ = block(1)
    van = res[4].report["vanishing"]
    beyond = sum(r["beyond_T0"] for r in van["regions"])
    ok = van["passed"] and beyond == 0 and secs[4] < BUDGET[4]
    lo, hi = res[4].report["interval"]
    rows = [r["rows"] for r in van["regions"]]
    # with this fixture the separated cones hold no orbit point at all
    note = " (the separated cones contain no orbit points)" if not any(rows) else ""
    return emit(4, ok, f"vanishing outside hull [{lo:.4f}, {hi:.4f}] with margin "
                       f"{van['margin']}: {beyond} rows beyond T0 in {len(rows)} cones holding "
                       f"{rows} rows{note}; {secs[4]:.1f} s")


def criterion_5():
    res, secs, _ = block(1)
    r10, r12 = res[5][10].report, res[5][12].report
    d10, d12 = r10["delta"], r12["delta"]
    absc, bound = r12["poincare_abscissa"], r12["two_rho_bound"]
    depth_gap = abs(d10 - d12) / d12
    absc_gap = max(abs(d10 - absc), abs(d12 - absc)) / absc
    ok = (depth_gap < DEPTH_AGREEMENT and absc_gap < ABSCISSA_AGREEMENT
          and 0 < min(d10, d12) and max(d10, d12) <= bound and secs[5] < BUDGET[5])
    return emit(5, ok, f"rank-one delta-hat {d10:.5f} (L=10), {d12:.5f} (L=12), gap "
                       f"{depth_gap:.1%}; abscissa {absc:.5f}, gap {absc_gap:.1%}; "
                       f"2rho bound {bound:.4f}; {secs[5]:.1f} s")


def criterion_6():
    res, secs, _ = block(1)
    rows = res[6].report["directions"]
    gaps = [r["relative_gap"] for r in rows]
    plain = [r.report["matches_plain_count"] for r in res["6b"]]
    ok = max(gaps) <= DIRECTIONAL_REL and all(plain) and secs[6] < BUDGET[6]
    text = ", ".join(f"v={r['simplex'][0]:.2f}: {r['delta']:.4f} vs {r['psi_hat']:.4f}"
                     for r in rows)
    return emit(6, ok, f"directional fits {text}; worst gap {max(gaps):.1%} "
                       f"(tol {DIRECTIONAL_REL:.0%}); H=K bisector equals plain count: "
                       f"{all(plain)}; {secs[6]:.1f} s")


def criterion_7():
    res, secs, _ = block(1)
    rep = res[7].report
    ok = bool(rep.get("within_bound")) and secs[7] < BUDGET[7]
    return emit(7, ok, f"swap pair, {rep['cosets']} cosets: delta-hat {rep['delta']:.5f} "
                       f"+- {rep['se_delta']:.5f} <= delta_Gamma {rep['delta_gamma']:.5f} "
                       f"+ 2 se = {rep['bound']:.5f}; beta-hat {rep['beta_hat']:.2f} "
                       f"+- {rep['se_beta']:.2f} (diagnostic, target {rep['beta_target']}); "
                       f"{secs[7]:.1f} s")


def criterion_8():
    res, secs, _ = block(1)
    rep = res[8].report
    r10, r12 = rep["residuals"]["10"], rep["residuals"]["12"]
    ok = res[8].passed and secs[8] < BUDGET[8]
    text = ", ".join(f"{a}: {r10[a]:.4f} -> {r12[a]:.4f}" for a in r10)
    return emit(8, ok, f"conformality residuals L=10 -> L=12 ({text}); scale invariant: "
                       f"{rep['scale_invariant']}; {secs[8]:.1f} s")


def criterion_9():
    ref = block(THREADS[0])[2]
    diffs = {}
    for n in THREADS[1:]:
        other = block(n)[2]
        diffs[n] = sorted(k for k in set(ref) | set(other) if ref.get(k) != other.get(k))
    ok = not any(diffs.values())
    return emit(9, ok, f"{len(ref)} output files of criteria 4-8 byte-identical across "
                       f"{list(THREADS)} workers" if ok else f"differing files: {diffs}")


# ---------------------------------------------------------------------------


def test_criterion_1_identity_suite():
    assert criterion_1()


def test_criterion_2_decomposition_round_trips():
    assert criterion_2()


def test_criterion_3_dom_limit():
    limit_ok, _ = criterion_3()
    assert limit_ok


def test_criterion_3_dom_bound():
    # fails at |w| = 0 with r > r0; see the decisions ledger
    _, bound_ok = criterion_3()
    assert bound_ok


def test_criterion_4_vanishing():
    assert criterion_4()


def test_criterion_5_growth_exponent():
    assert criterion_5()


def test_criterion_6_directional_counts():
    assert criterion_6()


def test_criterion_7_symmetric_count():
    assert criterion_7()


def test_criterion_8_ps_conformality():
    assert criterion_8()


def test_criterion_9_determinism():
    assert criterion_9()


if __name__ == "__main__":
    outcomes = [criterion_1(), criterion_2(), *criterion_3(), criterion_4(), criterion_5(),
                criterion_6(), criterion_7(), criterion_8(), criterion_9()]
    sys.exit(0 if all(outcomes) else 1)
