import numpy as np
import pytest

from lcva.data import (
    PairSample,
    SyntheticSpec,
    UnitRecord,
    build_knn_graph,
    generate_synthetic_spillover,
    load_pairs_csv,
    load_review_units,
    load_units_csv,
    save_pairs_csv,
    save_units_csv,
    scale_outcomes_unit_interval,
    split_pairs,
    synthesize_counterfactual_matching,
)
from lcva.errors import ParseError, UsageError
from lcva.numeric import SeededRng

from . import oracles


def write(path, text):
    path.write_text(text)
    return path


class TestCsv:
    def test_empty_body(self, tmp_path):
        assert load_units_csv(write(tmp_path / "u.csv", "id,t,y,f0,f1\n")) == []

    def test_three_rows(self, tmp_path):
        p = write(tmp_path / "u.csv",
                  "id,t,y,y_cf,f0,f1\n"
                  "a,1,5.5,2.0,0.1,-3\n"
                  "b,0,1.25,,2,4e-1\n"
                  "c,0,-7,8,0,0\n")
        units = load_units_csv(p)
        assert [u.id for u in units] == ["a", "b", "c"]
        assert [u.treatment for u in units] == [1, 0, 0]
        assert [u.outcome for u in units] == [5.5, 1.25, -7.0]
        assert [u.counterfactual_outcome for u in units] == [2.0, None, 8.0]
        assert np.array_equal(units[1].covariates, [2.0, 0.4])
        assert not any(u.randomized_subset for u in units)

    def test_rct_column(self, tmp_path):
        p = write(tmp_path / "u.csv", "id,t,y,rct,f0\na,1,1,1,0\nb,0,1,0,0\n")
        assert [u.randomized_subset for u in load_units_csv(p)] == [True, False]

    @pytest.mark.parametrize("body,msg,line", [
        ("id,y,f0\na,1,0\n", "missing required column 't'", 1),
        ("id,t,y,f0\na,1,x,0\n", "non-numeric", 2),
        ("id,t,y,f0\na,1,1,0\na,0,1,0\n", "duplicate id", 3),
        ("id,t,y,f0\na,2,1,0\n", "treatment must be 0 or 1", 2),
        ("id,t,y,f0\na,1,1\n", "expected 4 cells", 2),
        ("id,t,y,f0\na,1,nan,0\n", "non-finite", 2),
    ])
    def test_parse_errors(self, tmp_path, body, msg, line):
        p = write(tmp_path / "u.csv", body)
        with pytest.raises(ParseError, match=msg) as exc:
            load_units_csv(p)
        assert exc.value.line == line

    def test_round_trip(self, tmp_path):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=30, feature_dim=3, seed=1))
        units = ds.units
        units[3].randomized_subset = True
        save_units_csv(tmp_path / "a.csv", units)
        again = load_units_csv(tmp_path / "a.csv")
        save_units_csv(tmp_path / "b.csv", again)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        for u, v in zip(units, again):
            assert (u.id, u.treatment, u.outcome, u.counterfactual_outcome, u.randomized_subset) == \
                (v.id, v.treatment, v.outcome, v.counterfactual_outcome, v.randomized_subset)
            assert np.array_equal(u.covariates, v.covariates)

    def test_pairs_round_trip(self, tmp_path):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=20, feature_dim=2, k_neighbors=2, seed=2))
        save_pairs_csv(tmp_path / "p.csv", ds.pairs, ds.units)
        assert load_pairs_csv(tmp_path / "p.csv", ds.units) == ds.pairs

    def test_pairs_unknown_id(self, tmp_path):
        units = [UnitRecord("a", [0.0], 1, 1.0), UnitRecord("b", [1.0], 0, 1.0)]
        write(tmp_path / "p.csv", "ego_id,peer_id\na,zz\n")
        with pytest.raises(ParseError, match="unknown unit id"):
            load_pairs_csv(tmp_path / "p.csv", units)

    def test_review_grouping(self, tmp_path):
        p = write(tmp_path / "r.csv",
                  "id,y,review_count,avg_rating,f0\n"
                  "p1,10,5,4.5,0\n"   # treated, positive
                  "p2,11,7,1.5,0\n"   # treated, negative
                  "p3,12,3,4.0,0\n"   # exactly three: dropped
                  "p4,13,1,5.0,0\n"   # control
                  "p5,14,4,3.0,0\n")  # treated, neutral rating: in neither
        pos = load_review_units(p, polarity="positive")
        neg = load_review_units(p, polarity="negative")
        assert [(u.id, u.treatment) for u in pos] == [("p1", 1), ("p4", 0)]
        assert [(u.id, u.treatment) for u in neg] == [("p2", 1), ("p4", 0)]


class TestKnn:
    def test_collinear(self):
        X = np.array([[0.0], [1.0], [3.0]])
        assert build_knn_graph(X, 1) == [PairSample(0, 1), PairSample(1, 0), PairSample(2, 1)]

    def test_duplicates_tie_to_lower_index(self):
        X = np.array([[5.0], [0.0], [0.0], [0.0]])
        pairs = build_knn_graph(X, 1)
        assert pairs[1] == PairSample(1, 2)
        assert pairs[2] == PairSample(2, 1)
        assert pairs[3] == PairSample(3, 1)

    def test_equidistant_tie(self):
        X = np.array([[1.0], [-1.0], [0.0]])
        assert build_knn_graph(X, 1)[2] == PairSample(2, 0)

    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_pair_count(self, k):
        X = SeededRng(k).normal((23, 3))
        pairs = build_knn_graph(X, k)
        assert len(pairs) == k * 23
        assert all(p.ego != p.peer for p in pairs)

    def test_k_too_large(self):
        with pytest.raises(UsageError):
            build_knn_graph(np.zeros((3, 1)), 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = SeededRng(seed)
        n = int(rng.integers(5, 60))
        d = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        X = rng.normal((n, d)) * rng.uniform(0.1, 100, d)
        got = [(p.ego, p.peer) for p in build_knn_graph(X, k)]
        assert got == oracles.knn_pairs(X.tolist(), k)


class TestMatching:
    def test_forced_match(self):
        units = [UnitRecord("a", [0.0], 1, 5.0), UnitRecord("b", [1.0], 0, 9.0)]
        out = synthesize_counterfactual_matching(units)
        assert [u.counterfactual_outcome for u in out] == [9.0, 5.0]

    def test_five_units(self):
        X = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.5, 3.0], [2.0, 2.0]]
        t = [1, 0, 0, 1, 1]
        y = [1.0, 2.0, 3.0, 4.0, 5.0]
        units = [UnitRecord(str(i), X[i], t[i], y[i]) for i in range(5)]
        got = [u.counterfactual_outcome for u in synthesize_counterfactual_matching(units)]
        assert got == oracles.matched_counterfactuals(X, t, y)
        assert got == [2.0, 1.0, 1.0, 2.0, 2.0]

    def test_far_unit_changes_nothing(self):
        rng = SeededRng(3)
        units = [UnitRecord(str(i), rng.normal(3), int(i % 2), float(i)) for i in range(12)]
        before = [u.counterfactual_outcome for u in synthesize_counterfactual_matching(units)]
        far = units + [UnitRecord("far", np.full(3, 1e6), 0, 99.0)]
        after = [u.counterfactual_outcome for u in synthesize_counterfactual_matching(far)][:12]
        assert before == after

    def test_needs_both_groups(self):
        with pytest.raises(UsageError):
            synthesize_counterfactual_matching([UnitRecord("a", [0.0], 1, 1.0),
                                                UnitRecord("b", [1.0], 1, 2.0)])

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = SeededRng(100 + seed)
        n = int(rng.integers(4, 60))
        X = rng.normal((n, 3))
        t = [int(v) for v in rng.integers(0, 2, n)]
        t[0], t[1] = 0, 1
        y = rng.normal(n).tolist()
        units = [UnitRecord(str(i), X[i], t[i], y[i]) for i in range(n)]
        got = [u.counterfactual_outcome for u in synthesize_counterfactual_matching(units)]
        assert got == oracles.matched_counterfactuals(X.tolist(), t, y)


class TestSynthetic:
    def test_zero_gamma_means_no_peer_effect(self):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=100, gamma=0.0, seed=4))
        po = ds.potential_outcomes
        assert np.array_equal(po[:, :, 0], po[:, :, 1])
        assert ds.provenance["true_ate"] == pytest.approx(2.0, abs=1e-12)

    def test_constant_ite_without_noise(self):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=100, tau=2.0, gamma=0.0, noise_sd=0.0, seed=5))
        t = ds.t
        y_cf = np.array([u.counterfactual_outcome for u in ds.units])
        ite = np.where(t == 1, ds.y - y_cf, y_cf - ds.y)
        np.testing.assert_allclose(ite, 2.0, atol=1e-12)

    def test_ate_identity(self):
        spec = SyntheticSpec(n_units=200, tau=1.5, gamma=0.7, noise_sd=0.0, k_neighbors=3, seed=6)
        ds = generate_synthetic_spillover(spec)
        po = ds.potential_outcomes
        assert np.mean(po[:, 1, 0] - po[:, 0, 0]) == pytest.approx(1.5, abs=1e-12)
        assert np.mean(po[:, 0, 1] - po[:, 0, 0]) == pytest.approx(0.7, abs=1e-12)
        # flipping own treatment at the observed exposure moves the outcome by tau exactly
        assert ds.provenance["true_ate"] == pytest.approx(spec.tau + spec.gamma * 0.0, abs=1e-12)

    def test_deterministic(self):
        a = generate_synthetic_spillover(SyntheticSpec(n_units=50, seed=9))
        b = generate_synthetic_spillover(SyntheticSpec(n_units=50, seed=9))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and a.pairs == b.pairs

    def test_confounded(self):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=3000, seed=1, confounding=2.0))
        base = ds.potential_outcomes[:, 0, 0]
        t = ds.t
        # treated units have higher untreated outcomes: naive contrasts are biased
        assert base[t == 1].mean() - base[t == 0].mean() > 0.3

    def test_unknown_spec_key(self):
        with pytest.raises(UsageError):
            SyntheticSpec.from_dict({"n_units": 5, "bogus": 1})


class TestScaling:
    def test_two_values(self):
        assert scale_outcomes_unit_interval([0.0, 10.0]).values.tolist() == [0.0, 1.0]

    def test_affine(self):
        s = scale_outcomes_unit_interval([2.0, 4.0, 6.0])
        assert s.values.tolist() == [0.0, 0.5, 1.0]
        assert (s.minimum, s.maximum) == (2.0, 6.0)

    def test_idempotent(self):
        y = np.array([0.0, 0.25, 1.0])
        assert np.array_equal(scale_outcomes_unit_interval(y).values, y)

    def test_constant(self):
        with pytest.raises(UsageError):
            scale_outcomes_unit_interval([3.0, 3.0])

    def test_units(self):
        units = [UnitRecord("a", [0.0], 1, 1.0), UnitRecord("b", [0.0], 0, 3.0)]
        assert scale_outcomes_unit_interval(units).values.tolist() == [0.0, 1.0]


class TestSplit:
    def dataset(self, n=10):
        return generate_synthetic_spillover(SyntheticSpec(n_units=n, feature_dim=2, seed=0))

    def test_half(self):
        tr, te = split_pairs(self.dataset(), 0.5, seed=1)
        assert len(tr.ego_indices()) == 5 and len(te.ego_indices()) == 5

    def test_deterministic(self):
        ds = self.dataset()
        assert split_pairs(ds, 0.3, 4)[0].pairs == split_pairs(ds, 0.3, 4)[0].pairs

    def test_no_ego_leak(self):
        ds = generate_synthetic_spillover(SyntheticSpec(n_units=50, k_neighbors=3, seed=2))
        tr, te = split_pairs(ds, 0.7, 3)
        assert not set(tr.ego_indices()) & set(te.ego_indices())
        assert len(tr.pairs) + len(te.pairs) == len(ds.pairs)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.01])
    def test_bad_fraction(self, frac):
        with pytest.raises(UsageError):
            split_pairs(self.dataset(), frac, 0)
