import itertools
import math

import numpy as np
import pytest

from beamloc import losses, uq

from helpers import entropy_oracle, gaussian_oracle, sparsification_oracle


class TestEntropy:
    def test_hand_values(self):
        assert uq.entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-15)
        assert uq.entropy([0.5, 0.25, 0.25]) == pytest.approx(1.0397, abs=1e-4)
        assert uq.entropy([0.0, 1.0, 0.0]) == 0.0
        assert uq.entropy(np.full(37, 1 / 37)) == pytest.approx(math.log(37), rel=1e-14)

    def test_rows_and_oracle(self):
        q = np.random.default_rng(0).dirichlet(np.ones(12), size=20)
        h = uq.entropy(q)
        assert h.shape == (20,)
        for row, v in zip(q.tolist(), h):
            assert v == pytest.approx(entropy_oracle(row), rel=1e-13)

    @pytest.mark.parametrize("q", [[0.5, 0.6], [1.2, -0.2]])
    def test_invalid(self, q):
        with pytest.raises(ValueError):
            uq.entropy(q)


class TestDiscretizeGaussian:
    ENDS = losses.make_grid((0, 10, 0, 10), 10).endpoints_x

    def test_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mean, var = rng.uniform(-2, 12), rng.uniform(0.05, 20)
            got = uq.discretize_gaussian(mean, var, self.ENDS)
            np.testing.assert_allclose(got, gaussian_oracle(mean, var, self.ENDS.tolist()), rtol=1e-11, atol=1e-300)
            assert abs(got.sum() - 1) < 1e-12

    def test_symmetric(self):
        p = uq.discretize_gaussian(4.5, 3.0, self.ENDS)
        np.testing.assert_allclose(p, p[::-1], rtol=1e-13)

    def test_argmax_at_bin(self):
        for j in range(10):
            assert int(np.argmax(uq.discretize_gaussian(self.ENDS[j], 0.01, self.ENDS))) == j

    def test_far_mean_stays_finite(self):
        p = uq.discretize_gaussian(1e4, 1e-6, self.ENDS)
        assert np.all(np.isfinite(p)) and p[-1] == pytest.approx(1.0)

    def test_vectorized(self):
        means, var = np.array([1.0, 5.0]), np.array([2.0, 0.5])
        batch = uq.discretize_gaussian(means, var, self.ENDS)
        for i in range(2):
            np.testing.assert_allclose(batch[i], uq.discretize_gaussian(means[i], var[i], self.ENDS), rtol=1e-15)

    def test_bad_variance(self):
        with pytest.raises(ValueError):
            uq.discretize_gaussian(0.0, 0.0, self.ENDS)


class TestSparsification:
    @pytest.mark.parametrize("variant", ["entropy", "error"])
    def test_all_permutations_of_six(self, variant):
        rng = np.random.default_rng(2)
        u0 = rng.uniform(0.1, 3, 6)
        e0 = rng.uniform(0, 5, 6)
        for perm in itertools.permutations(range(6)):
            u = u0[list(perm)]
            res = uq.sparsification(u, e0, grid_pts=12, variant=variant)
            phis, s, g, area = sparsification_oracle(u.tolist(), e0.tolist(), 12, variant)
            np.testing.assert_allclose(res.fractions, phis, atol=1e-15)
            np.testing.assert_allclose(res.s_values, s, rtol=0, atol=1e-9)
            np.testing.assert_allclose(res.g_values, g, rtol=0, atol=1e-9)
            assert res.ause == pytest.approx(area, abs=1e-9)

    def test_proportional_gives_zero(self):
        e = np.random.default_rng(3).uniform(0, 4, 50)
        for variant in ("entropy", "error"):
            res = uq.sparsification(0.37 * e, e, variant=variant)
            np.testing.assert_allclose(res.s_values, res.g_values, rtol=1e-12)
            assert res.ause == pytest.approx(0.0, abs=1e-12)

    def test_reversed_four_samples(self):
        errors, ent = [4.0, 3.0, 2.0, 1.0], [1.0, 2.0, 3.0, 4.0]
        # sorting both vectors makes the literal curve blind to the pairing
        assert uq.sparsification(ent, errors, grid_pts=4).ause == pytest.approx(0.0, abs=1e-15)
        # remaining-error curve: s = 2.5, 3, 3.5, 4 against g = 2.5, 2, 1.5, 1
        res = uq.sparsification(ent, errors, grid_pts=4, variant="error")
        np.testing.assert_allclose(res.s_values, [2.5, 3.0, 3.5, 4.0])
        np.testing.assert_allclose(res.g_values, [2.5, 2.0, 1.5, 1.0])
        assert res.ause == pytest.approx(0.25 * (0.5 + 1.5 + 2.5), abs=1e-15)

    def test_scale_and_order_invariance(self):
        rng = np.random.default_rng(4)
        u, e = rng.uniform(0.1, 2, 80), rng.uniform(0, 3, 80)
        base = uq.sparsification(u, e).ause
        assert uq.sparsification(7.5 * u, e).ause == pytest.approx(base, rel=1e-12)
        p = rng.permutation(80)
        assert uq.sparsification(u[p], e[p]).ause == pytest.approx(base, rel=1e-12)
        for variant in ("entropy", "error"):
            b = uq.sparsification(u, e, variant=variant).ause
            assert uq.sparsification(3 * u, e, variant=variant).ause == pytest.approx(b, rel=1e-12)

    def test_oracle_curve_non_increasing(self):
        e = np.random.default_rng(5).exponential(size=300)
        res = uq.sparsification(np.ones(300), e)
        assert np.all(np.diff(res.g_values) <= 1e-12)
        assert res.g_values[0] == pytest.approx(e.mean())

    def test_trim_starts_at_percentile(self):
        e = np.arange(1.0, 201.0)
        res = uq.sparsification(e[::-1].copy(), e, trim=0.01)
        assert res.xi_max == 198.0  # the two largest of 200 dropped
        assert res.g_values[0] == pytest.approx(np.mean(e[:198]))

    @pytest.mark.parametrize("args", [([1.0], [1.0]), ([1.0, 2.0], [1.0]), ([1.0, 2.0], [1.0, 2.0], 10, 0.0, "x")])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            uq.sparsification(*args)


class TestReport:
    GRID = losses.make_grid((0, 20, 0, 20), 20)

    def _outputs(self, rng, n):
        truth = rng.uniform(1, 19, size=(n, 2))
        qx = rng.dirichlet(np.ones(20), size=n)
        qy = rng.dirichlet(np.ones(20), size=n)
        rbc = np.concatenate([qx, qy, rng.normal(scale=0.1, size=(n, 2))], axis=1)
        nll = np.column_stack([truth + rng.normal(size=(n, 2)), rng.uniform(0.5, 4, size=(n, 2))])
        return {"rbc": rbc, "nll": nll}, truth

    def test_keys_and_variant(self):
        outs, truth = self._outputs(np.random.default_rng(6), 40)
        rep = uq.ause_report(outs, truth, self.GRID)
        assert set(rep) == {("nll", "x"), ("nll", "y"), ("rbc", "x"), ("rbc", "y")}
        assert all(r.variant == "entropy" and r.ause >= 0 for r in rep.values())

    def test_identical_pdfs_identical_ause(self):
        rng = np.random.default_rng(7)
        outs, truth = self._outputs(rng, 30)
        rep = uq.ause_report(outs, truth, self.GRID)
        rep2 = uq.ause_report({k: v.copy() for k, v in outs.items()}, truth, self.GRID)
        for key in rep:
            assert rep[key].ause == rep2[key].ause
            np.testing.assert_array_equal(rep[key].s_values, rep2[key].s_values)

    def test_nll_matches_manual_discretization(self):
        outs, truth = self._outputs(np.random.default_rng(8), 25)
        nll = outs["nll"]
        u = uq.entropy(uq.discretize_gaussian(nll[:, 0], nll[:, 2], self.GRID.endpoints_x))
        want = uq.sparsification(u, np.abs(nll[:, 0] - truth[:, 0]), trim=0.01).ause
        assert uq.ause_report(outs, truth, self.GRID)[("nll", "x")].ause == pytest.approx(want, rel=1e-14)

    def test_missing_head_and_short_input(self):
        outs, truth = self._outputs(np.random.default_rng(9), 10)
        with pytest.raises(ValueError, match="missing"):
            uq.ause_report({"rbc": outs["rbc"]}, truth, self.GRID)
        with pytest.raises(ValueError):
            uq.ause_report(outs, truth[:1], self.GRID)
        with pytest.raises(ValueError):
            uq.head_scores("mse", outs["nll"][:, :2], truth, self.GRID)

    def test_curves_csv(self, tmp_path):
        outs, truth = self._outputs(np.random.default_rng(10), 20)
        rep = uq.ause_report(outs, truth, self.GRID, grid_pts=10)
        uq.write_curves_csv(tmp_path / "c.csv", rep)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "head,axis,variant,phi,s,g"
        assert len(lines) == 1 + 4 * 10
        head, axis, variant, phi, s, g = lines[1].split(",")
        assert float(s) == rep[(head, axis)].s_values[0]
