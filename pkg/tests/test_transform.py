import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetspline.transform import (
    PowerTransform,
    fit_transform,
    yj_forward,
    yj_inverse,
    yj_log_likelihood,
)


class TestForward:
    def test_identity_at_lam_one(self):
        assert yj_forward(5.0, 1.0) == pytest.approx(5.0, abs=1e-15)

    def test_log_branch(self):
        assert yj_forward(math.e - 1.0, 0.0) == pytest.approx(1.0, abs=1e-14)

    def test_negative_lam_two_branch(self):
        # -log(1.5), frozen from an independent high-precision evaluation
        assert yj_forward(-0.5, 2.0) == pytest.approx(-0.4054651081081644,
                                                      abs=1e-14)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            yj_forward(np.nan, 1.0)

    @settings(max_examples=120, deadline=None)
    @given(lam=st.floats(-2, 4), x=st.floats(-10, 10), dx=st.floats(1e-6, 1.0))
    def test_strictly_increasing(self, lam, x, dx):
        assert yj_forward(x + dx, lam) > yj_forward(x, lam)

    @pytest.mark.parametrize("x", [-4.0, -0.3, 0.0, 0.7, 9.0])
    def test_continuity_at_branch_points(self, x):
        # the general-lam formula must approach the analytic branch without
        # catastrophic cancellation as lam crosses 0 and 2
        for lam0 in (0.0, 2.0):
            base = yj_forward(x, lam0)
            for eps in (1e-12, -1e-12):
                assert yj_forward(x, lam0 + eps) == pytest.approx(base, abs=1e-8)


class TestInverse:
    def test_identity_at_lam_one(self):
        assert yj_inverse(5.0, 1.0) == pytest.approx(5.0, abs=1e-15)

    def test_log_branch_inverse(self):
        assert yj_inverse(1.0, 0.0) == pytest.approx(math.e - 1.0, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(x=st.floats(-10, 10), lam=st.floats(-2, 4))
    def test_round_trip(self, x, lam):
        back = yj_inverse(yj_forward(x, lam), lam)
        assert abs(back - x) / (1.0 + abs(x)) < 1e-10

    def test_domain_error_outside_image(self):
        # for lam < 0 the positive branch saturates at -1/lam
        with pytest.raises(ValueError):
            yj_inverse(2.0, -1.0)
        # for lam > 2 the negative branch saturates at -1/(lam-2)
        with pytest.raises(ValueError):
            yj_inverse(-2.0, 4.0)


class TestFit:
    def grid_oracle(self, x, step=1e-3, lo=-3.0, hi=5.0):
        grid = np.arange(lo, hi + step / 2, step)
        lls = [yj_log_likelihood(x, lam) for lam in grid]
        return grid[int(np.argmax(lls))]

    def test_gaussian_data_gives_lam_near_one(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=10000)
        pt = fit_transform(x)
        assert abs(pt.lam - 1.0) < 0.5
        assert abs(pt.lam - self.grid_oracle(x)) < 1e-2

    def test_optimizer_matches_dense_grid_oracle(self):
        rng = np.random.default_rng(3)
        for raw in (rng.lognormal(size=400), rng.normal(2, 1, size=400) ** 2,
                    rng.uniform(-2, 5, size=400)):
            pt = fit_transform(raw)
            assert abs(pt.lam - self.grid_oracle(raw)) < 1e-2

    def test_training_set_standardized(self):
        rng = np.random.default_rng(11)
        x = rng.gamma(2.0, 1.5, size=500)
        pt = fit_transform(x)
        z = pt.transform(x)
        assert np.mean(z) == pytest.approx(0.0, abs=1e-10)
        assert np.std(z) == pytest.approx(1.0, abs=1e-10)

    def test_constant_input_rejected(self):
        with pytest.raises(ValueError):
            fit_transform(np.full(10, 3.3))

    def test_too_few_values_rejected(self):
        with pytest.raises(ValueError):
            fit_transform([1.0, 2.0])

    def test_transform_inverse_round_trip(self):
        rng = np.random.default_rng(5)
        x = rng.gamma(2.0, 2.0, size=200)
        pt = fit_transform(x)
        back = pt.inverse(pt.transform(x))
        np.testing.assert_allclose(back, x, rtol=1e-10)


def test_power_transform_requires_positive_sd():
    with pytest.raises(ValueError):
        PowerTransform(lam=1.0, mean=0.0, sd=0.0)
