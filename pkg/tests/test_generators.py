import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from cipt import generators as gen
from cipt.binning import make_equal_partition


def test_exp1_structure():
    ds = gen.gen_exp1(500, 7, np.random.default_rng(0))
    assert np.all(ds.x == ds.y)
    assert ds.z_kind == "categorical" and len(ds.z_labels) == 7
    assert set(ds.x.tolist()) == {1, 2}


def test_exp1_z_uniform():
    n, M = 100_000, 5
    ds = gen.gen_exp1(n, M, np.random.default_rng(1))
    freq = np.bincount(ds.z, minlength=M) / n
    se = np.sqrt((1 / M) * (1 - 1 / M) / n)
    assert np.all(np.abs(freq - 1 / M) <= 3 * se)


class TestExp2:
    def test_conditional_endpoints(self):
        assert gen.exp2_px1(0.0, 10) == pytest.approx(0.45)
        assert gen.exp2_px1(0.1, 10) == pytest.approx(0.55)
        assert gen.exp2_px1(0.7, 10) == pytest.approx(0.55)

    @pytest.mark.parametrize("M", [2, 3, 10, 100])
    def test_conditional_range(self, M):
        z = np.linspace(0, 1, 10_001)
        p = gen.exp2_px1(z, M)
        assert p.min() >= 0.25 and p.max() <= 0.75

    def test_epsilon_guard(self):
        with pytest.raises(ValueError):
            gen.gen_exp2_null(2, 5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            gen.gen_exp2_null(100, 1, np.random.default_rng(0))

    @pytest.mark.parametrize("n,M", [(10, 2), (100, 5), (400, 400)])
    def test_density_integrates_to_one(self, n, M):
        assert gen.total_mass(gen.GeneratorSpec("exp2_null", {"n": n, "M": M})) == pytest.approx(1, abs=1e-10)

    def test_inverse_cdf_head_mass(self):
        n, M = 20, 4
        z = gen.exp2_sample_z(200_000, M, 1 / n, np.random.default_rng(2))
        head = np.mean(z <= 1 / M)
        expect = 1 - (1 / n) / M
        assert abs(head - expect) <= 4 * np.sqrt(expect * (1 - expect) / 200_000)
        assert z.min() >= 0 and z.max() <= 1

    def test_tail_uniform(self):
        z = gen.exp2_sample_z(400_000, 2, 0.4, np.random.default_rng(3))
        tail = z[z > 0.5]
        assert abs(np.mean(tail) - 0.75) < 0.01


class TestExp3:
    def test_null_at_zero(self):
        assert gen.exp3_f(0.0, 7.0) == pytest.approx(0.25)

    def test_alternative_cell(self):
        f = 0.5
        assert 4 * f / 5 - f**2 == pytest.approx(0.15)
        z = np.arcsin(np.log(2.0))  # e^{sin z} / 4 = 0.5
        assert gen.exp3_joint(z, 1.0, True)[1, 0] == pytest.approx(0.15)

    def test_alternative_valid_on_grid(self):
        j = gen.exp3_joint(np.linspace(0, 1, 10_001), 1.0, True)
        assert j.min() >= 0
        np.testing.assert_allclose(j.sum(axis=(1, 2)), 1.0, atol=1e-12)

    def test_alternative_marginals(self):
        z = np.linspace(0, 1, 101)
        j = gen.exp3_joint(z, 1.0, True)
        np.testing.assert_allclose(j[:, 0, :].sum(axis=1), gen.exp3_f(z, 1.0), atol=1e-14)

    def test_alternative_theta_fixed(self):
        with pytest.raises(ValueError):
            gen.gen_exp3(10, 2.0, True, np.random.default_rng(0))

    def test_alternative_sampling_frequencies(self):
        ds = gen.gen_exp3(200_000, 1.0, True, np.random.default_rng(4))
        grid = np.linspace(0, 1, 20_001)
        p11 = gen.exp3_joint(grid, 1.0, True)[:, 0, 0].mean()
        obs = np.mean((ds.x == 1) & (ds.y == 1))
        assert abs(obs - p11) <= 4 * np.sqrt(p11 * (1 - p11) / 200_000)


@settings(max_examples=50, deadline=None)
@given(hst.floats(0, 1), hst.floats(0, 30), hst.booleans())
def test_conditional_pmfs_valid(z, theta, alt):
    j = gen.exp3_joint(z, 1.0 if alt else theta, alt)
    assert j.min() >= -1e-12 and abs(j.sum() - 1) <= 1e-12


@pytest.mark.parametrize("maker", [
    lambda rng: gen.gen_exp3(100_000, 10.0, False, rng),
    lambda rng: gen.gen_exp2_null(100_000, 3, rng),
])
def test_null_generators_conditionally_independent(maker):
    ds = maker(np.random.default_rng(5))
    edges = np.quantile(ds.z, np.linspace(0, 1, 21))
    strata = np.clip(np.searchsorted(edges, ds.z, side="right") - 1, 0, 19)
    for s in range(20):
        m = strata == s
        if m.sum() < 100:
            continue
        a = (ds.x[m] == 1).astype(float)
        b = (ds.y[m] == 1).astype(float)
        cov = np.mean(a * b) - a.mean() * b.mean()
        se = np.sqrt(a.var() * b.var() / m.sum())
        assert abs(cov) <= 4 * se + 1e-3


class TestGenericCI:
    def test_constant_families(self):
        ds = gen.gen_generic_ci([0.5, 0.5], [[0.3, 0.7]] * 2, [[0.6, 0.4]] * 2, 50_000,
                                np.random.default_rng(6))
        tab = np.histogram2d(ds.x, ds.y, bins=[[0.5, 1.5, 2.5]] * 2)[0] / ds.n
        np.testing.assert_allclose(tab, np.outer([0.3, 0.7], [0.6, 0.4]), atol=0.01)

    def test_three_labels(self):
        ds = gen.gen_generic_ci([0.2, 0.3, 0.5], [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                                [[0.5, 0.5]] * 3, 100, np.random.default_rng(0))
        assert len(ds.z_labels) == 3
        np.testing.assert_array_equal(ds.x, ds.z + 1)

    def test_invalid_pmf(self):
        with pytest.raises(ValueError):
            gen.gen_generic_ci([0.5, 0.6], [[1, 0]] * 2, [[1, 0]] * 2, 5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            gen.gen_generic_ci([0.5, 0.5], [[1, 0]], [[1, 0]] * 2, 5, np.random.default_rng(0))


class TestSpec:
    def test_roundtrip(self):
        s = gen.GeneratorSpec("generic_ci", {"pmf_z": np.array([0.5, 0.5]),
                                             "x_family": [[1, 0], [0, 1]],
                                             "y_family": [[0.5, 0.5]] * 2})
        d = s.to_dict()
        assert d["params"]["pmf_z"] == [0.5, 0.5]
        again = gen.GeneratorSpec.from_dict(d)
        assert again.sample(10, np.random.default_rng(1)).n == 10

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            gen.GeneratorSpec("exp9")

    def test_exp2_spec_validates(self):
        with pytest.raises(ValueError):
            gen.GeneratorSpec("exp2_null", {"n": 2, "M": 3})

    def test_exp2_spec_poisson_size(self):
        s = gen.GeneratorSpec("exp2_null", {"n": 100, "M": 4})
        assert s.sample(37, np.random.default_rng(0)).n == 37


class TestBinnedMoments:
    @pytest.mark.parametrize("M", [2, 5, 10, 50])
    def test_first_cell_joint_and_marginal(self, M):
        bm = gen.binned_moments(gen.GeneratorSpec("exp2_null", {"n": 100, "M": M}),
                                make_equal_partition(M))
        cf = gen.exp2_bin1_closed_forms(M)
        assert bm.joint[0, 0, 0] == pytest.approx(cf["q11"], abs=1e-9)
        assert bm.x_marginal[0, 0] == pytest.approx(0.5, abs=1e-9)
        assert bm.y_marginal[0, 0] == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("M", [2, 5, 10, 50])
    def test_first_cell_gap_over_all_cells(self, M):
        # summed over the four cells the gap is 4 * (h^2 / 12)^2
        bm = gen.binned_moments(gen.GeneratorSpec("exp2_null", {"n": 100, "M": M}),
                                make_equal_partition(M))
        assert bm.l2_gap[0] == pytest.approx(gen.exp2_bin1_closed_forms(M)["gap_full"], abs=1e-12)

    @pytest.mark.parametrize("M", [2, 5, 10, 50])
    def test_single_cell_squared_deviation(self, M):
        bm = gen.binned_moments(gen.GeneratorSpec("exp2_null", {"n": 100, "M": M}),
                                make_equal_partition(M))
        dev = bm.joint[0, 0, 0] - bm.x_marginal[0, 0] * bm.y_marginal[0, 0]
        assert dev**2 == pytest.approx(gen.exp2_bin1_closed_forms(M)["gap_printed"], abs=1e-12)

    def test_pmfs_and_masses_normalised(self):
        bm = gen.binned_moments(gen.GeneratorSpec("exp3_alt"), make_equal_partition(7))
        np.testing.assert_allclose(bm.joint.sum(axis=(1, 2)), 1.0, atol=1e-12)
        assert bm.mass.sum() == pytest.approx(1.0, abs=1e-12)

    def test_null_family_has_small_gap(self):
        bm = gen.binned_moments(gen.GeneratorSpec("exp3_null", {"theta": 1.0}),
                                make_equal_partition(20))
        assert bm.l2_gap.max() < 1e-5
        bm_alt = gen.binned_moments(gen.GeneratorSpec("exp3_alt"), make_equal_partition(20))
        assert bm_alt.l2_gap.min() > 1e-3

    def test_no_closed_form(self):
        with pytest.raises(ValueError):
            gen.binned_moments(gen.GeneratorSpec("exp1", {"M": 3}), make_equal_partition(3))
