import json

import numpy as np
import pytest

from anosov.cone import estimate_limit_cone
from anosov.errors import AmbiguityError, ConfigurationError
from anosov.experiments import (ExperimentConfig, bisector_counts, chamber_region,
                                count_in_cone, group_from_dict, load_ball, run,
                                run_bisector_experiment, run_symmetric_count, sector_region,
                                simplex_box_region, vanishing_check, verify_suite)
from anosov.fitting import t_grid
from anosov.fixtures import product_schottky, rank_one_schottky
from anosov.matgroup import GroupElement, cartan_projection, norms
from anosov.symmetric import compact_pair, h_cartan_batch, h_cartan_projection, swap_pair
from anosov.words import GeneratorSystem, enumerate_ball, table_matrices

PRODUCT = product_schottky()


def _cfg(kind, depth, **params):
    return ExperimentConfig.from_dict({"experiment": {"kind": kind, "params": params},
                                       "group": {"fixture": "product"}, "depth": depth})


# --- counting -------------------------------------------------------------------

@pytest.mark.parametrize("p", [2, 3])
def test_depth_one_counts_generators(p):
    table = enumerate_ball(rank_one_schottky(p=p), 1)
    assert count_in_cone(table).N[-1] == 2 * p


def test_count_matches_brute_force_recount():
    table = enumerate_ball(PRODUCT, 5)
    region = sector_region(table.descriptor, [1.0, -1.0, 1.0, -1.0], 0.3)
    grid = t_grid(12.0)
    rec = count_in_cone(table, region, grid=grid)
    sizes = []
    for i in range(len(table)):
        mu = cartan_projection(PRODUCT.word_element(table.word(i)))
        if np.linalg.norm(mu) > 0 and np.all(region.A @ mu >= -1e-12 * np.linalg.norm(mu)):
            sizes.append(np.linalg.norm(mu))
    sizes = np.array(sizes)
    assert rec.N.tolist() == [int(np.sum(sizes <= t + 1e-12)) for t in grid]


def test_regions_contain_their_direction():
    desc = PRODUCT.descriptor
    v = np.array([1.0, -1.0, 1.0, -1.0])
    assert sector_region(desc, v, 0.2).contains(v).all()
    assert simplex_box_region(desc, [0.4, 0.4], [0.6, 0.6]).contains(v).all()
    assert chamber_region(desc).contains(v).all()
    assert not chamber_region(desc).contains(-v).any()


def test_vanishing_outside_the_limit_cone():
    table = enumerate_ball(PRODUCT, 10)
    report = vanishing_check(table, estimate_limit_cone(table))
    assert report["passed"]
    assert all(r["beyond_T0"] == 0 for r in report["regions"])


# --- bisector counts --------------------------------------------------------------

def test_bisector_with_whole_omega_is_the_plain_count():
    res = run_bisector_experiment(_cfg("bisector-count", 8))
    assert res.report["matches_plain_count"] is True


def test_bisector_omega_monotone_and_empty():
    table = enumerate_ball(PRODUCT, 6)
    pair = compact_pair(table.descriptor)
    region, grid = chamber_region(table.descriptor), t_grid(20.0)
    empty = bisector_counts(table, pair, region, norms, grid, omega_k="empty")
    assert empty.N.max() == 0
    finals = [bisector_counts(table, pair, region, norms, grid, omega_h={"radius": r}).N
              for r in (0.8, 1.2, 1.6, 2.0)]
    for small, big in zip(finals, finals[1:]):
        assert np.all(small <= big)
    assert finals[-1][-1] > finals[0][-1]


def test_bisector_aborts_when_b_sits_on_walls():
    # the diagonal subgroup lies in H for the swap pair, so every b vanishes
    table = enumerate_ball(_diagonal_system(), 3)
    pair = swap_pair(2)
    with pytest.raises(AmbiguityError):
        bisector_counts(table, pair, chamber_region(table.descriptor), norms, t_grid(5.0))


# --- symmetric counts ---------------------------------------------------------------

def _diagonal_system():
    w = swap_pair(2).w
    gens = rank_one_schottky(length=6.0)
    return GeneratorSystem([GroupElement([g.factors[0], w.T @ g.factors[0] @ w])
                            for g in gens.generators])


def test_swap_pair_on_h_valued_group_collapses():
    cfg = ExperimentConfig.from_dict({
        "experiment": {"kind": "symmetric-count"}, "pair": {"kind": "swap"}, "depth": 3,
        "group": {"factors": [{"dim": 2}, {"dim": 2}],
                  "generators": [{"matrices": [g.factors[0].tolist(), g.factors[1].tolist()]}
                                 for g in _diagonal_system().generators]}})
    table = load_ball(cfg)
    mats, invs = table_matrices(table)
    b = h_cartan_batch(swap_pair(2), mats, invs)
    # cancellation in g2^-1 g1 costs about e^{2|mu|} ulps, so stay shallow
    assert np.abs(b).max() < 1e-8


def test_symmetric_batch_matches_per_row_projection():
    table = enumerate_ball(PRODUCT, 4)
    pair = swap_pair(2)
    mats, invs = table_matrices(table)
    batch = h_cartan_batch(pair, mats, invs)
    for i in range(0, len(table), 3):
        one = h_cartan_projection(PRODUCT.word_element(table.word(i)), pair)
        assert np.allclose(batch[i], one, atol=1e-9)


def test_symmetric_count_report_fields():
    res = run_symmetric_count(_cfg("symmetric-count", 8))
    rep = res.report
    assert rep["pair"] == "swap" and rep["beta_target"] == pytest.approx(-0.5)
    assert rep["cosets"] <= rep["rows"]
    assert res.records["main"].N[-1] <= rep["cosets"]


# --- configuration and verification ---------------------------------------------------

def test_config_rejects_bad_determinant():
    spec = {"factors": [{"dim": 2}], "generators": [{"matrices": [[[2.0, 0], [0, 1]]]}]}
    with pytest.raises(ConfigurationError, match="det"):
        group_from_dict(spec)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment": {"kind": "no-such-thing"}})


def test_verify_passes_on_defaults():
    res = verify_suite(samples=200, words=2000)
    assert res.passed and res.report["failed"] == []
    # the w = 0 bound gap is reported but not fatal
    assert res.report["diagnostics_failed"]


def test_verify_reports_det_perturbation():
    a = PRODUCT.generators[0].factors
    bad = [m.tolist() for m in a]
    bad[0][0][0] *= 1 + 1e-6
    raw = {"experiment": {"kind": "verify"},
           "group": {"factors": [{"dim": 2}, {"dim": 2}],
                     "generators": [{"matrices": bad},
                                    {"matrices": [m.tolist()
                                                  for m in PRODUCT.generators[1].factors]}]}}
    res = verify_suite(raw, samples=50, words=200)
    assert not res.passed
    assert "configuration validation" in res.report["failed"]


def test_verify_catches_wrong_opposition():
    res = verify_suite(opposition=lambda x, desc: x, samples=50, words=200)
    assert not res.passed
    assert any(name.startswith("mu(g^-1)") for name in res.report["failed"])


def test_cached_table_counts_equal_fresh(tmp_path):
    cfg = _cfg("enumerate", 6)
    cfg.cache_dir = str(tmp_path)
    cached = load_ball(cfg)
    again = load_ball(cfg)
    fresh = enumerate_ball(PRODUCT, 6)
    grid = t_grid(15.0)
    assert np.array_equal(count_in_cone(again, grid=grid).N, count_in_cone(fresh, grid=grid).N)
    assert np.array_equal(cached.mu, fresh.mu)


def test_reports_are_deterministic(tmp_path):
    cfg = _cfg("cone-count", 8)
    a = run(cfg).files()
    cfg.threads = 3
    b = run(cfg).files()
    assert a == b
    json.loads(a["report.json"])
