import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from ncfv.errors import DomainError, InfeasibleError
from ncfv.optimizer import (
    RateGrid,
    UtilityConfig,
    band,
    cost,
    goodness,
    operative_range,
    optimize_rate,
    reference_grid,
    range_gate_report,
    utility,
    utility_table,
)


# Independent oracle: rebuilds the whole utility table from scipy binomial
# tails and the gate formulas, then scans it.

def oracle_table(deltas, cfg, pairs, L=800, q=8):
    s = L // q
    rows = []
    for n, m in pairs:
        p = math.prod(binom.sf(n - 1, m, 1 - d) for d in deltas)
        gates = (m - n) * n * s * (2 * q * q + 2 * q) + (m - n) * (n - 1) * s * q
        rows.append(dict(n=n, m=m, R=n / m, p=p, gates=gates))
    coded = [r for r in rows if r["m"] > r["n"]]
    least = min(coded, key=lambda r: (r["m"] - r["n"], -r["R"])) if coded else None
    ref = least["gates"] if least else None
    if cfg.normalization == "min_feasible":
        ok = [r["gates"] for r in coded if r["p"] >= cfg.rho0]
        if ok:
            ref = min(ok)
    for r in rows:
        bb = r["gates"] / ref if ref else 0.0
        r["beta"] = bb
        r["u"] = cfg.w_nc * (r["p"] - cfg.rho0) / cfg.rho0 - cfg.w_comp * math.log(1 + bb)
        r["feasible"] = bb <= cfg.beta0 + 1e-12
    return rows


def oracle_argmax(rows):
    feas = [r for r in rows if r["feasible"]]
    if not feas:
        return None
    top = max(r["u"] for r in feas)
    return max((r for r in feas if r["u"] == top), key=lambda r: r["R"])


def oracle_members(rows, fraction):
    best = oracle_argmax(rows)
    u = best["u"]
    lo = fraction * u if u > 0 else (u - 1e-9 if u == 0 else u / fraction)
    return sorted(r["R"] for r in rows if r["feasible"] and lo <= r["u"] <= u)


def test_goodness_examples():
    assert goodness(0.9, 0.9) == 0
    assert goodness(1.0, 0.5) == 1.0
    assert goodness(0.72, 0.9) == pytest.approx(-0.2)
    with pytest.raises(DomainError):
        goodness(0.5, 0)


def test_cost_examples():
    assert cost(0) == 0
    assert cost(1) == pytest.approx(0.6931, abs=1e-4)
    assert cost(1.4) == pytest.approx(0.8755, abs=1e-4)
    with pytest.raises(DomainError):
        cost(-0.1)


def test_utility_config_validation():
    cfg = UtilityConfig(w_comp=0.3)
    assert cfg.w_nc == pytest.approx(0.7)
    with pytest.raises(DomainError):
        UtilityConfig(w_comp=0.3, w_nc=0.6)
    with pytest.raises(DomainError):
        UtilityConfig(rho0=0)
    with pytest.raises(DomainError):
        UtilityConfig(beta0=0.9)
    with pytest.raises(DomainError):
        UtilityConfig(range_fraction=0)
    with pytest.raises(DomainError):
        UtilityConfig(normalization="other")


def test_grid_validation_and_order():
    g = RateGrid()
    assert [p.n for p in g.candidates()] == [5, 10, 15, 20, 25, 30, 35, 40, 45, 49]
    assert all(p.m == 50 for p in g.candidates())
    rates = [p.rate for p in reference_grid().candidates()]
    assert rates == sorted(rates) and len(set(rates)) == 20
    with pytest.raises(DomainError):
        RateGrid(counterpart_values=(10, 60))
    with pytest.raises(DomainError):
        RateGrid(mode="fixed_n", fixed_value=10, counterpart_values=(20, 20))
    with pytest.raises(DomainError):
        RateGrid(mode="diagonal")


def test_utility_spot_value():
    cfg = UtilityConfig(w_comp=0.1, rho0=0.8)
    grid = RateGrid()
    got = utility(0.8, (0.2, 0.1), cfg, grid)
    rows = oracle_table((0.2, 0.1), cfg, grid.pairs())
    want = next(r["u"] for r in rows if r["n"] == 40)
    assert got == pytest.approx(want, rel=1e-12)
    with pytest.raises(DomainError):
        utility(0.123, (0.2, 0.1), cfg, grid)


def test_utility_zero_cost_weight_at_target():
    # w_comp -> tiny: utility equals w_nc * goodness, zero when p hits rho0
    grid = RateGrid(mode="fixed_n", fixed_value=1, counterpart_values=(1,))
    cfg = UtilityConfig(w_comp=1e-9, rho0=0.5)
    assert utility(1.0, (0.5,), cfg, grid) == pytest.approx(0.0, abs=1e-12)


def test_utility_decreasing_in_w_comp():
    grid = reference_grid()
    us = [utility(30 / 40, (0.2, 0.1), UtilityConfig(w_comp=w, rho0=0.7), grid)
          for w in (0.1, 0.3, 0.5, 0.8)]
    assert all(a > b for a, b in zip(us, us[1:]))


def test_single_candidate_grid():
    grid = RateGrid(mode="fixed_m", fixed_value=10, counterpart_values=(7,))
    res = optimize_rate((0.1,), UtilityConfig(), grid)
    assert res.r_star == 0.7 and res.feasible_count == 1


def test_infeasible_grid_reported():
    # reference = the least-redundancy code; many more redundant packets blow the budget
    grid = RateGrid(mode="fixed_n", fixed_value=30, counterpart_values=(31, 60, 80))
    cfg = UtilityConfig(normalization="min_redundancy")
    rows = utility_table((0.1,), cfg, grid)
    assert [r.feasible for r in rows] == [False, False, True]
    grid2 = RateGrid(mode="fixed_n", fixed_value=30, counterpart_values=(60, 80))
    res = optimize_rate((0.1,), UtilityConfig(normalization="min_redundancy", beta0=1.0), grid2)
    assert res.feasible_count == 1
    cfg3 = UtilityConfig(normalization="min_feasible", beta0=1.0)
    bad = RateGrid(mode="fixed_n", fixed_value=2, counterpart_values=(3, 4))
    res3 = optimize_rate((0.0,), cfg3, bad)
    assert res3.feasible_count == 1  # reference itself always fits


def test_infeasible_result_and_range_error():
    grid = RateGrid(mode="fixed_n", fixed_value=30, counterpart_values=(31, 60))
    cfg = UtilityConfig(normalization="min_redundancy", rho0=0.9)
    table = [r.__class__(r.params, r.p_r, r.gates, r.beta_bar, r.utility, False)
             for r in utility_table((0.1,), cfg, grid)]
    res = optimize_rate((0.1,), cfg, grid, table=table)
    assert res.feasible_count == 0 and not res.activated and math.isnan(res.r_star)
    with pytest.raises(InfeasibleError) as err:
        operative_range((0.1,), cfg, grid, table=table)
    assert err.value.result.feasible_count == 0


def test_ties_go_to_highest_rate():
    # exact ties never occur naturally on distinct costs, so force one
    grid = RateGrid(mode="fixed_n", fixed_value=4, counterpart_values=(5, 6))
    rows = utility_table((0.0,), UtilityConfig(), grid)
    tied = [r.__class__(r.params, r.p_r, r.gates, r.beta_bar, 0.25, True) for r in rows]
    res = optimize_rate((0.0,), UtilityConfig(), grid, table=tied)
    assert res.r_star == 0.8


def test_activation_rule():
    grid = reference_grid()
    res = optimize_rate((0.2, 0.4), UtilityConfig(rho0=0.9), grid)
    assert res.u_max < 0 and not res.activated
    res = optimize_rate((0.2, 0.0), UtilityConfig(rho0=0.5), grid)
    assert res.u_max > 0 and res.activated


def test_gate_example():
    grid = RateGrid()
    rng = operative_range((0.0,), UtilityConfig(range_fraction=1.0), grid)
    report = dict(range_gate_report(rng))
    rows = {r.params.n: r.gates for r in utility_table((0.0,), UtilityConfig(), grid)}
    assert rows[40] == 6_072_000
    for r, g in report.items():
        assert g == rows[round(r * 50)]


def test_band_edges():
    assert band(2.0, 0.8) == (1.6, 2.0)
    assert band(0.0, 0.8) == (-1e-9, 0.0)
    lo, hi = band(-1.0, 0.8)
    assert hi == -1.0 and lo == pytest.approx(-1.25)


grids = st.one_of(
    st.builds(
        lambda m, ns: RateGrid("fixed_m", m, tuple(sorted(set(min(v, m) for v in ns))), L=800),
        st.integers(8, 60),
        st.lists(st.integers(1, 60), min_size=1, max_size=12),
    ),
    st.builds(
        lambda n, ms: RateGrid("fixed_n", n, tuple(sorted(set(n + v for v in ms))), L=800),
        st.integers(1, 40),
        st.lists(st.integers(0, 25), min_size=1, max_size=12),
    ),
)
configs = st.builds(
    UtilityConfig,
    w_comp=st.floats(0.05, 0.95),
    rho0=st.floats(0.3, 1.0),
    beta0=st.floats(1.0, 3.0),
    u0=st.floats(-0.5, 0.5),
    range_fraction=st.floats(0.1, 1.0),
    normalization=st.sampled_from(["min_feasible", "min_redundancy"]),
)
specs = st.lists(st.floats(0.0, 0.5), min_size=1, max_size=3)


@settings(max_examples=150, deadline=None)
@given(grids, configs, specs)
def test_optimizer_matches_exhaustive_oracle(grid, cfg, deltas):
    rows = oracle_table(deltas, cfg, grid.pairs(), grid.L, grid.q)
    best = oracle_argmax(rows)
    res = optimize_rate(deltas, cfg, grid)
    if best is None:
        assert res.feasible_count == 0
        with pytest.raises(InfeasibleError):
            operative_range(deltas, cfg, grid)
        return
    assert res.feasible_count == sum(r["feasible"] for r in rows)
    assert res.r_star == best["R"]
    assert res.u_max == pytest.approx(best["u"], rel=1e-9, abs=1e-12)
    assert res.activated == (res.u_max >= cfg.u0)
    assert res.beta_bar <= cfg.beta0 + 1e-12
    rng = operative_range(deltas, cfg, grid)
    assert sorted(rng.rates) == oracle_members(rows, cfg.range_fraction)
    assert res.r_star in rng.rates
    for c in rng.members:
        assert rng.u_bounds[0] <= c.utility <= rng.u_bounds[1]
    if res.u_max > 0:
        assert rng.u_bounds[0] == pytest.approx(cfg.range_fraction * res.u_max)


@settings(max_examples=60, deadline=None)
@given(grids, configs, specs, st.floats(0.0, 1.0))
def test_range_shrinks_as_fraction_grows(grid, cfg, deltas, extra):
    if optimize_rate(deltas, cfg, grid).feasible_count == 0:
        return
    hi_frac = cfg.range_fraction + (1 - cfg.range_fraction) * extra
    wide = set(operative_range(deltas, cfg, grid).rates)
    narrow = set(operative_range(deltas, UtilityConfig(
        w_comp=cfg.w_comp, rho0=cfg.rho0, beta0=cfg.beta0, u0=cfg.u0,
        range_fraction=hi_frac, normalization=cfg.normalization), grid).rates)
    assert narrow <= wide


@settings(max_examples=60, deadline=None)
@given(grids, configs, specs, st.floats(0, 1))
def test_raising_threshold_never_activates(grid, cfg, deltas, bump):
    a = optimize_rate(deltas, cfg, grid)
    b = optimize_rate(deltas, UtilityConfig(
        w_comp=cfg.w_comp, rho0=cfg.rho0, beta0=cfg.beta0, u0=cfg.u0 + bump,
        range_fraction=cfg.range_fraction, normalization=cfg.normalization), grid)
    assert not (b.activated and not a.activated)


@settings(max_examples=40, deadline=None)
@given(grids, configs, specs, st.randoms())
def test_grid_order_does_not_matter(grid, cfg, deltas, rnd):
    vals = list(grid.counterpart_values)
    rnd.shuffle(vals)
    shuffled = RateGrid(grid.mode, grid.fixed_value, tuple(vals), grid.L, grid.q)
    a = optimize_rate(deltas, cfg, grid)
    b = optimize_rate(deltas, cfg, shuffled)
    assert a.feasible_count == b.feasible_count
    if a.feasible_count:
        assert a == b


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 0.4), st.floats(0, 0.2), st.integers(31, 50))
def test_utility_non_increasing_in_erasure_for_fixed_reference(d1, bump, m):
    # with the reference pinned (min_redundancy) the cost term is fixed
    grid = reference_grid()
    cfg = UtilityConfig(normalization="min_redundancy", rho0=0.7)
    a = utility(30 / m, (0.2, d1), cfg, grid)
    b = utility(30 / m, (0.2, min(1.0, d1 + bump)), cfg, grid)
    assert b <= a + 1e-12
