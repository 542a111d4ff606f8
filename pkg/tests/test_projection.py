import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimicking.ito_models import (ConstantCoeff, Ensemble, Heston, TwoPointDrift, analytic_projection,
                                  nonuniqueness_mixture, simulate_ensemble)
from mimicking.paths import TimeGrid
from mimicking.projection import (CoefficientSurface, EstimatorConfig, SurfaceError, estimate_surface,
                                  make_feature, psd_repair, psd_sqrt, query, silverman_bandwidth,
                                  sqrt_surface, _nearest_nonempty)
from mimicking.updating import make

G = TimeGrid.uniform(1.0, 20)


@pytest.mark.parametrize("c, want", [
    ([[4.0, 0.0], [0.0, 9.0]], [[2.0, 0.0], [0.0, 3.0]]),
    ([[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]),
    ([[2.0, 1.0], [1.0, 2.0]], [[1.36603, 0.36603], [0.36603, 1.36603]]),
])
def test_sqrt_examples(c, want):
    assert np.allclose(psd_sqrt(np.array(c)), want, atol=5e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4))
def test_sqrt_squares_back(seed, d):
    a = np.random.default_rng(seed).standard_normal((d, d))
    c = a @ a.T
    s = psd_sqrt(c)
    assert np.allclose(s, s.T)
    assert np.allclose(s @ s, c, atol=1e-10 * max(1.0, np.abs(c).max()))


def test_sqrt_rejects_indefinite():
    with pytest.raises(SurfaceError):
        psd_sqrt(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_psd_repair_clips_only_bad():
    good = np.array([[2.0, 1.0], [1.0, 2.0]])
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    out, mask = psd_repair(np.stack([good, bad]))
    assert mask.tolist() == [False, True]
    assert np.array_equal(out[0], good)
    assert np.linalg.eigvalsh(out[1]).min() >= -1e-15


def test_constant_model_cells_are_exact():
    ens = simulate_ensemble(ConstantCoeff(0.3, 0.2), G, 5000, seed=1)
    surf = estimate_surface(ens, make("identity"))
    for s in surf.slices:
        live = s.count > 0
        assert np.all(s.b[live] == 0.3)
        assert np.max(np.abs(s.c[live] - 0.04)) <= 1e-12


def _tower_gap(ens, phi, feature=None):
    surf = estimate_surface(ens, phi, feature)
    worst = 0.0
    for (k, state), s in zip(ens.states(phi), surf.slices):
        f = (feature or make_feature(phi))(state)
        cell, _, _ = s.locate(f)
        lhs_b = np.mean(s.b[cell], axis=0)
        lhs_c = np.mean(s.c[cell], axis=0)
        rhs_b, rhs_c = ens.b[:, k].mean(0), ens.c[:, k].mean(0)
        worst = max(worst, np.max(np.abs(lhs_b - rhs_b)) / max(np.max(np.abs(rhs_b)), 1e-300),
                    np.max(np.abs(lhs_c - rhs_c)) / max(np.max(np.abs(rhs_c)), 1e-300))
    return worst


def test_tower_identity_identity_phi():
    ens = simulate_ensemble(Heston(), G, 20_000, seed=2)
    assert _tower_gap(ens, make("identity")) <= 1e-12


def test_tower_identity_maximum_phi():
    ens = simulate_ensemble(Heston(), G, 20_000, seed=3)
    assert _tower_gap(ens, make("maximum")) <= 1e-12


def test_tower_identity_with_atoms():
    ens = nonuniqueness_mixture(TimeGrid.uniform(2.0, 20), 20_000, seed=4)
    assert _tower_gap(ens, make("identity")) <= 1e-12


def test_convex_set_preservation():
    # diagonal covariance records give diagonal cells without any repair
    rng = np.random.default_rng(5)
    n, M = 4000, 5
    grid = TimeGrid.uniform(1.0, M)
    y = rng.standard_normal((n, M + 1, 2))
    b = rng.standard_normal((n, M + 1, 2))
    c = np.zeros((n, M + 1, 2, 2))
    c[..., 0, 0] = rng.random((n, M + 1))
    c[..., 1, 1] = rng.random((n, M + 1)) * 3
    ens = Ensemble(grid, y, b, c)
    surf = estimate_surface(ens, make("identity", 2), estimator=EstimatorConfig(bins=8))
    for s in surf.slices:
        assert s.repaired == 0
        assert np.all(s.c[:, 0, 1] == 0) and np.all(s.c[:, 1, 0] == 0)
        assert np.all(s.c[:, 0, 0] >= 0) and np.all(s.c[:, 1, 1] >= 0)


def test_nearest_nonempty_matches_brute_force():
    rng = np.random.default_rng(6)
    g = np.stack(np.meshgrid(np.arange(12.0), np.arange(9.0), indexing="ij"), -1).reshape(-1, 2)
    nonempty = rng.random(len(g)) < 0.2
    fb = _nearest_nonempty(g, nonempty)
    good = np.flatnonzero(nonempty)
    for i in range(len(g)):
        if nonempty[i]:
            assert fb[i] == i
        else:
            d2 = ((g[good] - g[i]) ** 2).sum(1)
            assert fb[i] == good[np.flatnonzero(d2 == d2.min())[0]]


def test_query_bin_centre_and_edge():
    ens = simulate_ensemble(TwoPointDrift(1.0), G, 20_000, seed=7)
    surf = sqrt_surface(estimate_surface(ens, make("identity")))
    s = surf.slice_at(0.5)
    centre = s.centers()[10]
    r = query(surf, 0.5, centre[0])
    cell, _, _ = s.locate(centre.reshape(1, 1))
    assert r.b[0] == s.b[s.fallback[cell[0]], 0]
    assert not r.out_of_support
    far = query(surf, 0.5, 1e3)
    assert far.out_of_support
    assert far.b[0] == s.b[s.fallback[s.n_regular - 1], 0]
    with pytest.raises(ValueError):
        query(surf, 2.0, 0.0)


def test_query_constant_surface():
    ens = simulate_ensemble(ConstantCoeff(-0.1, 0.5), G, 3000, seed=8)
    surf = sqrt_surface(estimate_surface(ens, make("identity")))
    for t in (0.0, 0.33, 1.0):
        for z in (-5.0, 0.0, 0.2, 9.0):
            r = query(surf, t, z)
            assert r.b[0] == pytest.approx(-0.1, abs=1e-15)
            assert r.c[0, 0] == pytest.approx(0.25, abs=1e-15)
            assert r.sigma[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_json_roundtrip(tmp_path):
    ens = nonuniqueness_mixture(TimeGrid.uniform(2.0, 10), 5000, seed=9)
    surf = sqrt_surface(estimate_surface(ens, make("identity")))
    surf.to_json(tmp_path / "s.json")
    back = CoefficientSurface.from_json(tmp_path / "s.json")
    assert back.grid == surf.grid and back.estimator == surf.estimator
    for a, b in zip(surf.slices, back.slices):
        for name in ("b", "c", "count", "fallback", "atoms", "leave_prob", "sigma", "c_leave", "c_stay"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name
    surf.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("t,")


def test_nadaraya_watson_option():
    ens = simulate_ensemble(TwoPointDrift(1.0), TimeGrid.uniform(1.0, 10), 20_000, seed=10)
    est = EstimatorConfig("nadaraya_watson", bins=32)
    surf = estimate_surface(ens, make("identity"), estimator=est)
    s = surf.slices[-1]
    assert s.bandwidth is not None and s.bandwidth[0] > 0
    centres = s.centers()[:, 0]
    inner = np.abs(centres) < 1.5
    exact = np.array([analytic_projection(TwoPointDrift(1.0), 1.0, y)[0] for y in centres[inner]])
    assert np.max(np.abs(s.b[inner, 0] - exact)) < 0.1
    fixed = estimate_surface(ens, make("identity"), estimator=EstimatorConfig("nadaraya_watson", 32, 0.2))
    assert fixed.slices[-1].bandwidth == [0.2]


def test_silverman_bandwidth_scale():
    x = np.random.default_rng(0).standard_normal((10_000, 1))
    assert silverman_bandwidth(x)[0] == pytest.approx(0.9 * 10_000 ** -0.2, rel=0.05)


def _two_point_mse(n, seed):
    model = TwoPointDrift(1.0)
    grid = TimeGrid.uniform(1.0, 10)
    s = estimate_surface(simulate_ensemble(model, grid, n, seed=seed), make("identity")).slices[-1]
    live = s.fallback == np.arange(s.n_cells)
    x = s.centers()[live, 0]
    exact = np.array([analytic_projection(model, 1.0, v)[0] for v in x])
    return np.average((s.b[live, 0] - exact) ** 2, weights=s.count[live])


def test_mse_decreases_with_sample_size():
    mse = [np.mean([_two_point_mse(n, seed) for seed in (11, 12)]) for n in (50_000, 100_000, 200_000)]
    assert mse[0] > mse[1] > mse[2]


def test_nonuniqueness_atom_split():
    g = TimeGrid.uniform(2.0, 40)
    ens = nonuniqueness_mixture(g, 40_000, seed=13)
    surf = estimate_surface(ens, make("identity"))
    s = surf.slice_at(1.0)
    assert s.atoms.tolist() == [[0.0]]
    assert s.leave_prob[0] == pytest.approx(0.5, abs=3 * np.sqrt(0.25 / 40_000))
    assert s.c_leave[0, 0, 0] == 1.0 and s.c_stay[0, 0, 0] == 0.0
    late = surf.slice_at(1.5)
    a = late.n_regular
    assert late.c[a, 0, 0] == 0.0
    live = late.count[:a] > 0
    assert np.all(late.c[:a][live] == 1.0)
    early = surf.slice_at(0.5)
    assert early.edges is None and early.leave_prob[0] == 0.0


def test_surface_without_coefficients_is_rejected():
    ens = simulate_ensemble(ConstantCoeff(0.0, 1.0), G, 10, seed=0, keep_coeffs=False)
    with pytest.raises(SurfaceError):
        estimate_surface(ens, make("identity"))


# -- diagonal split and equal-mass edges ------------------------------------

def _flag_ensemble(seed, n=6000, M=8):
    # records are 1 on paths sitting at their running maximum and 0 elsewhere
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(1.0, M)
    y = np.concatenate([np.zeros((n, 1, 1)), np.cumsum(rng.standard_normal((n, M, 1)), axis=1)], axis=1)
    at_max = (y[:, :, 0] == np.maximum.accumulate(y[:, :, 0], axis=1)).astype(float)
    c = np.zeros((n, M + 1, 1, 1))
    c[..., 0, 0] = 2.0 * at_max
    return Ensemble(grid, y, at_max[..., None], c)


@pytest.mark.parametrize("name, split", [("state", "diagonal"), ("level_drawdown", "zero_gap")])
def test_split_feature_maps(name, split):
    f = make_feature(make("maximum"), name)
    assert f.split == split and f.dim == 2
    state = np.array([[1.0, 3.0], [2.0, 2.0]])
    want = state if name == "state" else np.array([[1.0, 2.0], [2.0, 0.0]])
    assert np.array_equal(f(state), want)


def test_level_drawdown_needs_maximum():
    with pytest.raises(ValueError):
        make_feature(make("identity"), "level_drawdown")
    assert make_feature(make("identity")).split is None


@pytest.mark.parametrize("kind", ["histogram", "nadaraya_watson"])
@pytest.mark.parametrize("name", ["state", "level_drawdown"])
def test_split_keeps_strata_apart(kind, name):
    ens = _flag_ensemble(14)
    phi = make("maximum")
    surf = estimate_surface(ens, phi, make_feature(phi, name), EstimatorConfig(kind, bins=8))
    for s in surf.slices[1:]:
        strata = s.cell_strata()
        own = s.fallback == np.arange(s.n_cells)
        assert s.n_strata == 2 and s.n_regular == 2 * s.n_bins
        # each stratum carries only its own constant record, so no cell may blend them
        assert np.allclose(s.b[own, 0], strata[own], rtol=0, atol=1e-12)
        assert np.allclose(s.c[own, 0, 0], 2.0 * strata[own], rtol=0, atol=1e-12)
        assert np.all(strata[s.fallback] == strata)


def test_split_cells_match_brute_force_grouping():
    ens = simulate_ensemble(Heston(), G, 8000, seed=15)
    phi = make("maximum")
    surf = estimate_surface(ens, phi, estimator=EstimatorConfig(bins=6))
    k = G.steps
    _, state = list(ens.states(phi))[k]
    s = surf.slices[k]
    f = np.asarray(state, dtype=float)
    diag = f[:, 0] == f[:, 1]
    ix = [np.clip(np.searchsorted(e, f[:, j], side="right") - 1, 0, len(e) - 2) for j, e in enumerate(s.edges)]
    for stratum, on in ((0, ~diag), (1, diag)):
        for a in range(6):
            for b in range(6):
                sel = on & (ix[0] == a) & (ix[1] == b)
                cell = stratum * 36 + a * 6 + b
                assert s.count[cell] == sel.sum()
                if sel.any():
                    assert s.b[cell, 0] == pytest.approx(ens.b[sel, k, 0].mean(), rel=1e-12, abs=1e-14)


def test_tower_identity_level_drawdown():
    ens = simulate_ensemble(Heston(), G, 20_000, seed=16)
    phi = make("maximum")
    assert _tower_gap(ens, phi, make_feature(phi, "level_drawdown")) <= 1e-12


def test_quantile_edges_are_sample_quantiles():
    ens = simulate_ensemble(Heston(), G, 20_000, seed=17)
    surf = estimate_surface(ens, make("identity"), estimator=EstimatorConfig(bins=16, edges="quantile"))
    s = surf.slices[-1]
    y = ens.y[:, -1, 0]
    assert np.allclose(s.edges[0], np.quantile(y, np.linspace(0.005, 0.995, 17)), rtol=0, atol=1e-12)
    inner = s.count[:16]
    # equal mass per bin up to the clipped tails and sampling ties
    assert inner[1:-1].max() - inner[1:-1].min() <= 2


def test_edge_rule_is_validated():
    with pytest.raises(ValueError):
        EstimatorConfig(edges="log")


def test_split_surface_json_roundtrip(tmp_path):
    ens = simulate_ensemble(Heston(), G, 5000, seed=18)
    phi = make("maximum")
    surf = estimate_surface(ens, phi, make_feature(phi, "level_drawdown"), EstimatorConfig(bins=12, edges="quantile"))
    surf.to_json(tmp_path / "s.json")
    back = CoefficientSurface.from_json(tmp_path / "s.json")
    assert back.estimator == surf.estimator and back.feature_name == "level_drawdown"
    z = make_feature(phi, "level_drawdown")(np.column_stack([ens.y[:200, -1, 0], ens.y[:200].max(axis=1)[:, 0]]))
    for a, b in zip(surf.slices, back.slices):
        assert a.split == b.split == "zero_gap"
        assert np.array_equal(a.lookup(z)[0], b.lookup(z)[0])
    surf.to_csv(tmp_path / "s.csv")
    assert "stratum" in (tmp_path / "s.csv").read_text().splitlines()[0]
