import dataclasses
import math

import numpy as np
import pytest

from fleetspline.basis import curve as basis_curve
from fleetspline.datagen import BathtubParams, FleetScenario, generate
from fleetspline.forecast import (
    archetype_center,
    curve_for_new_ship,
    curve_for_new_type,
    curve_for_ship,
    curve_with_qualitative_prior,
    ship_curve_draws,
    type_curve_draws,
    type_distance_table,
    write_curve,
    write_distance_table,
)
from fleetspline.transform import yj_forward
from fleetspline.workflow import fit

from helpers import quick_config, small_fleet


def degenerate_artifact(artifact, sigma_zero=False):
    """Copy of the artifact with every draw collapsed to the posterior mean."""
    flat = artifact.flat_draws()
    mean = flat.mean(axis=0)
    if sigma_zero:
        mean = mean.copy()
        mean[-5:-1] = 1e-300  # ship/type scale draws effectively zero
    draws = np.tile(mean, (artifact.draws.shape[0], artifact.draws.shape[1], 1))
    return dataclasses.replace(artifact, draws=draws)


@pytest.fixture(scope="module")
def separated_artifact():
    """Well-pooled fleet with clearly separated type curves."""
    sc = FleetScenario(
        ships_per_type=(5, 5, 5), lifecycle=12,
        type_curves=(BathtubParams(1.0, 0.4, 0.4, 0.004, 8.0),
                     BathtubParams(2.0, 0.3, 0.9, 0.010, 6.0),
                     BathtubParams(0.5, 0.5, 0.2, 0.001, 9.0)),
        ship_sd=0.05, noise_sd=0.08, p_censor=0.0,
        warranty_censor_age=2, window_lengths=(8, 12))
    data, _ = generate(sc, 7)
    return fit(data, quick_config(seed=11))


class TestCurveForShip:
    def test_matches_per_draw_oracle(self, shared_artifact):
        art, _ = shared_artifact
        fc = curve_for_ship(art, "ship001")
        flat = art.flat_draws()
        S, K = art.S, art.K
        oracle = np.empty((len(flat), art.T))
        for d in range(len(flat)):
            alpha = flat[d, 0]
            w = flat[d, S:S + S * K].reshape(S, K)[0]
            oracle[d] = alpha + art.bm.values @ w
        np.testing.assert_allclose(fc.mean, oracle.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(fc.lower, np.quantile(oracle, 0.05, axis=0),
                                   atol=1e-12)

    def test_covers_all_ages(self, shared_artifact):
        art, _ = shared_artifact
        observed_ages = set(art.data.age[art.data.ship == 0].tolist())
        assert observed_ages != set(range(1, art.T + 1))
        fc = curve_for_ship(art, 0)
        np.testing.assert_array_equal(fc.ages, np.arange(1, art.T + 1))
        assert np.all(np.isfinite(fc.mean))

    def test_degenerate_draws_collapse_band(self, shared_artifact):
        art, _ = shared_artifact
        fc = curve_for_ship(degenerate_artifact(art), 0)
        np.testing.assert_allclose(fc.lower, fc.mean, atol=1e-12)
        np.testing.assert_allclose(fc.upper, fc.mean, atol=1e-12)

    def test_unknown_ship_raises(self, shared_artifact):
        art, _ = shared_artifact
        with pytest.raises(KeyError):
            curve_for_ship(art, "nope")
        with pytest.raises(IndexError):
            curve_for_ship(art, 99)

    def test_noise_band_wider(self, shared_artifact):
        art, _ = shared_artifact
        plain = curve_for_ship(art, 0)
        noisy = curve_for_ship(art, 0, include_noise=True)
        assert np.all((noisy.upper - noisy.lower)
                      >= (plain.upper - plain.lower) - 1e-9)
        np.testing.assert_allclose(noisy.mean, plain.mean, atol=1e-12)

    def test_original_scale_round_trip(self, shared_artifact):
        art, _ = shared_artifact
        draws_t = ship_curve_draws(art, 0)
        draws_o = art.transform.inverse(draws_t)
        back = (yj_forward(draws_o, art.transform.lam)
                - art.transform.mean) / art.transform.sd
        np.testing.assert_allclose(back, draws_t, atol=1e-10)
        fc = curve_for_ship(art, 0, scale="original")
        np.testing.assert_allclose(fc.mean, draws_o.mean(axis=0), atol=1e-12)


class TestCurveForNewShip:
    def test_plug_in_matches_type_draw_oracle(self, shared_artifact):
        art, _ = shared_artifact
        fc = curve_for_new_ship(art, "type1")
        oracle = type_curve_draws(art, "type1")
        np.testing.assert_allclose(fc.mean, oracle.mean(axis=0), atol=1e-12)

    def test_hierarchical_variant_wider(self, shared_artifact):
        art, _ = shared_artifact
        plug = curve_for_new_ship(art, "type1")
        hier = curve_for_new_ship(art, "type1", hierarchical=True)
        assert np.all((hier.upper - hier.lower)
                      >= (plug.upper - plug.lower) - 1e-9)

    def test_type_mean_within_member_ship_range(self, shared_artifact):
        art, _ = shared_artifact
        t = art.data
        members = [s for s in range(t.n_ships) if t.ship_to_type[s] == 0]
        fc = curve_for_new_ship(art, "type1")
        curves = np.stack([ship_curve_draws(art, s).mean(axis=0)
                           for s in members])
        spread = np.stack([ship_curve_draws(art, s).std(axis=0)
                           for s in members]).max(axis=0)
        lo = curves.min(axis=0) - spread
        hi = curves.max(axis=0) + spread
        assert np.all(fc.mean >= lo) and np.all(fc.mean <= hi)

    def test_unknown_type_raises(self, shared_artifact):
        art, _ = shared_artifact
        with pytest.raises(KeyError):
            curve_for_new_ship(art, "typeX")


class TestCurveForNewType:
    def test_center_is_archetype_plug_in(self, shared_artifact):
        art, _ = shared_artifact
        fc = curve_for_new_type(art)
        expected = basis_curve(art.bm, art.prefit.alpha_bar_0,
                               art.prefit.w_bar_0)
        np.testing.assert_array_equal(fc.mean, expected)
        np.testing.assert_array_equal(fc.mean, archetype_center(art))

    def test_band_wider_than_known_type(self, shared_artifact):
        art, _ = shared_artifact
        new_type = curve_for_new_type(art)
        for lab in art.data.type_labels:
            known = curve_for_new_ship(art, lab)
            assert np.mean((new_type.upper - new_type.lower)
                           >= (known.upper - known.lower) - 1e-9) >= 0.95

    def test_deterministic_given_seed(self, shared_artifact):
        art, _ = shared_artifact
        a = curve_for_new_type(art, seed=5)
        b = curve_for_new_type(art, seed=5)
        np.testing.assert_array_equal(a.lower, b.lower)


class TestQualitativePrior:
    def test_degenerate_sigma_collapses_to_donor(self, shared_artifact):
        art, _ = shared_artifact
        degen = degenerate_artifact(art, sigma_zero=True)
        fc = curve_with_qualitative_prior(degen, "type2")
        donor = type_curve_draws(degen, "type2").mean(axis=0)
        np.testing.assert_allclose(fc.mean, donor, atol=1e-9)
        np.testing.assert_allclose(fc.upper - fc.lower, 0.0, atol=1e-9)

    def test_tight_donor_narrower_than_new_type(self, separated_artifact):
        # when pooling is tight (many ships, well-separated types) a donor
        # type's posterior carries more information than the archetype-only
        # forecast, so the band narrows
        art = separated_artifact
        donor = curve_with_qualitative_prior(art, "type2")
        generic = curve_for_new_type(art)
        frac = np.mean((donor.upper - donor.lower)
                       <= (generic.upper - generic.lower) + 1e-9)
        assert frac >= 0.95

    def test_per_draw_oracle(self, shared_artifact):
        art, _ = shared_artifact
        fc = curve_with_qualitative_prior(art, "type1", seed=9)
        rng = np.random.default_rng(9)
        e = art.data.type_index("type1")
        ab = art.alpha_bar_draws()[:, e]
        wb = art.w_bar_draws()[:, e, :]
        sa = art.sigma_draws("sigma_alpha")
        sw = art.sigma_draws("sigma_w")
        alpha = ab + rng.normal(size=ab.shape) * sa
        w = wb + rng.normal(size=wb.shape) * sw[:, None]
        oracle = alpha[:, None] + w @ art.bm.values.T
        np.testing.assert_allclose(fc.mean, oracle.mean(axis=0), atol=1e-12)


class TestMonotoneUncertaintyNesting:
    def test_widths_nest_across_layers(self, separated_artifact):
        # between-type spread dominates in this fleet, so each extra layer
        # of hierarchy adds width
        art = separated_artifact
        existing = curve_for_ship(art, 0)
        new_ship = curve_for_new_ship(art, "type1", hierarchical=True)
        new_type = curve_for_new_type(art)
        w_existing = existing.upper - existing.lower
        w_new_ship = new_ship.upper - new_ship.lower
        w_new_type = new_type.upper - new_type.lower
        assert np.mean(w_existing <= w_new_ship + 1e-9) >= 0.95
        assert np.mean(w_new_ship <= w_new_type + 1e-9) >= 0.95


class TestDistanceTable:
    def test_metric_axioms(self, shared_artifact):
        art, _ = shared_artifact
        rows = type_distance_table(art)
        seen = {}
        for (a, b), dist in rows:
            assert dist >= 0.0
            assert a != b
            seen[(a, b)] = dist
        labels = art.data.type_labels
        assert len(rows) == len(labels) * (len(labels) - 1) // 2
        # identity of indiscernibles on the curves themselves
        for (a, b), dist in rows:
            ca = type_curve_draws(art, a).mean(axis=0)
            cb = type_curve_draws(art, b).mean(axis=0)
            assert dist == pytest.approx(float(np.linalg.norm(ca - cb)))
            assert (dist == 0.0) == bool(np.allclose(ca, cb))

    def test_constant_offset_gives_c_sqrt_T(self, shared_artifact):
        art, _ = shared_artifact
        flat = art.flat_draws().copy()
        mean = flat.mean(axis=0)
        # identical weights for both types; intercepts differing by c
        c = 0.37
        base = art.S * (art.K + 1)
        mean[base:base + 2] = [1.0, 1.0 + c]
        wb = art.prefit.w_bar_0
        mean[base + 2:base + 2 + 2 * art.K] = np.tile(wb, 2)
        draws = np.tile(mean, (art.draws.shape[0], art.draws.shape[1], 1))
        crafted = dataclasses.replace(art, draws=draws)
        rows = type_distance_table(crafted)
        assert rows[0][1] == pytest.approx(c * math.sqrt(art.T), abs=1e-10)

    def test_sorted_ascending(self, shared_artifact):
        art, _ = shared_artifact
        rows = type_distance_table(art)
        dists = [d for _, d in rows]
        assert dists == sorted(dists)


class TestEmission:
    def test_curve_csv_and_sidecar(self, shared_artifact, tmp_path):
        art, _ = shared_artifact
        fc = curve_for_ship(art, 0)
        csv_path, json_path = write_curve(fc, tmp_path / "ship0")
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "age,mean,lower,upper"
        assert len(lines) == art.T + 1
        assert '"mode": "existing_ship"' in json_path.read_text()

    def test_distance_csv(self, shared_artifact, tmp_path):
        art, _ = shared_artifact
        path = write_distance_table(type_distance_table(art),
                                    tmp_path / "dist.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "type_a,type_b,distance"
        assert len(lines) == 2  # one unordered pair for two types
