import itertools
import math

import numpy as np
import pytest

from conftest import make_library
from oracles import hand_bic, nnls_by_enumeration
from unmixkit.ensemble import (
    BmaConfig,
    bic_of_fit,
    build_quadratic_features,
    sample_model_space,
    unmix_bma,
    unmix_bma_q,
    weighted_models,
)
from unmixkit.errors import ConfigError, DataError
from unmixkit.harness import synthetic_library
from unmixkit.solvers import Technique, unmix_nnls
from unmixkit.spectra import validate_library


class TestBic:
    def test_perfect_fit_uses_floor(self):
        S = np.random.default_rng(0).uniform(size=(50, 3))
        y = S[:, 1].copy()
        expected = 50 * math.log(1e-300 / 50) + math.log(50)
        assert bic_of_fit(y, S, [1], [1.0]) == pytest.approx(expected, rel=1e-15)

    def test_size_penalty(self):
        S = np.zeros((50, 2))
        S[0, 0] = 1.0
        S[1, 1] = 1.0
        y = np.linspace(0, 1, 50)
        small = bic_of_fit(y, S, [0], [0.0])
        large = bic_of_fit(y, S, [0, 1], [0.0, 0.0])
        assert large - small == pytest.approx(math.log(50), abs=1e-12)

    def test_hand_instance(self):
        S = [[1.0, 0.5], [0.2, 1.0], [0.4, 0.4], [0.9, 0.1]]
        y = [1.1, 0.8, 0.7, 0.9]
        got = bic_of_fit(np.array(y), np.array(S), [0, 1], [0.8, 0.5])
        assert got == pytest.approx(hand_bic(y, S, [0, 1], [0.8, 0.5]), rel=1e-13)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BmaConfig(max_subset_size=0)
        with pytest.raises(ConfigError):
            BmaConfig(n_models=0)
        cfg = BmaConfig()
        assert (cfg.max_subset_size, cfg.n_models, cfg.seed, cfg.top_t_for_pairs, cfg.weight_floor) == (5, 10_000, 0, 15, 1e-12)


class TestModelSpace:
    def test_singletons_first(self):
        subsets = sample_model_space(30, 5, 200, seed=1)
        assert subsets[:30] == [(i,) for i in range(30)]
        assert len(subsets) == 200
        assert len(set(subsets)) == 200
        assert all(2 <= len(s) <= 5 for s in subsets[30:])
        assert all(list(s) == sorted(s) for s in subsets)

    def test_exhaustive_when_budget_covers_all(self):
        n = 6
        subsets = sample_model_space(n, n, 10_000, seed=3)
        expected = {c for k in range(1, n + 1) for c in itertools.combinations(range(n), k)}
        assert len(subsets) == len(expected) == 2**n - 1
        assert set(subsets) == expected

    def test_seeded(self):
        assert sample_model_space(40, 4, 500, 9) == sample_model_space(40, 4, 500, 9)
        assert sample_model_space(40, 4, 500, 9) != sample_model_space(40, 4, 500, 10)

    def test_budget_below_singletons(self):
        assert sample_model_space(10, 3, 4, 0) == [(i,) for i in range(10)]


class TestUnmixBma:
    def test_single_spectrum_is_nnls(self):
        lib = make_library([[0.2], [0.4], [0.9]])
        y = np.array([0.1, 0.25, 0.4])
        bma, nn = unmix_bma(y, lib), unmix_nnls(y, lib)
        assert np.allclose(bma.abundances, nn.abundances, atol=1e-15)
        assert bma.diagnostics["weights"].tolist() == [1.0]

    def test_two_spectrum_hand_average(self):
        S = np.array([[0.9, 0.1], [0.5, 0.4], [0.2, 0.8], [0.3, 0.3], [0.7, 0.6]])
        y = np.array([0.6, 0.5, 0.4, 0.25, 0.7])
        m = unmix_bma(y, make_library(S), BmaConfig(max_subset_size=2, n_models=100))
        fits = []
        for sub in [(0,), (1,), (0, 1)]:
            coef = nnls_by_enumeration(S[:, sub], y)
            fits.append((sub, coef, hand_bic(y.tolist(), S.tolist(), sub, coef.tolist())))
        best = min(b for _, _, b in fits)
        w = np.array([math.exp(-0.5 * (b - best)) for _, _, b in fits])
        w = np.maximum(w, 1e-12)
        w /= w.sum()
        expected = np.zeros(2)
        for (sub, coef, _), wi in zip(fits, w):
            for k, j in enumerate(sub):
                expected[j] += wi * coef[k]
        assert np.max(np.abs(m.abundances - expected)) <= 1e-10
        assert np.allclose(m.diagnostics["weights"], w, atol=1e-12)

    def test_weights_and_determinism(self):
        lib = synthetic_library(40, seed=6)
        y = lib.columns[:, [3, 9, 21]] @ [0.3, 0.3, 0.4]
        cfg = BmaConfig(n_models=800, seed=4)
        a, b = unmix_bma(y, lib, cfg), unmix_bma(y, lib, cfg)
        w = a.diagnostics["weights"]
        assert abs(w.sum() - 1.0) <= 1e-9
        assert np.all((w >= 0) & (w <= 1))
        assert np.array_equal(a.abundances, b.abundances)
        assert np.array_equal(w, b.diagnostics["weights"])
        assert np.all(a.abundances >= 0)
        bics = a.diagnostics["bics"]
        assert np.argmax(w) == np.argmin(bics)

    def test_support_threshold(self):
        lib = synthetic_library(30, seed=1)
        y = lib.columns[:, [2, 7]] @ [0.6, 0.4]
        m = unmix_bma(y, lib, BmaConfig(n_models=500))
        assert set(m.support) == set(np.flatnonzero(m.abundances >= 1e-6))
        assert np.all(m.abundances[m.abundances < 1e-6] == 0)

    def test_weighted_models_view(self):
        lib = synthetic_library(10, seed=1)
        m = unmix_bma(lib.columns[:, 0], lib, BmaConfig(n_models=50))
        members = weighted_models(m)
        assert len(members) == 50
        assert sum(x.weight for x in members) == pytest.approx(1.0, abs=1e-9)
        assert all(np.all(x.abundances >= 0) for x in members)

    def test_exhaustive_ensemble_matches_brute_force(self):
        lib = synthetic_library(5, seed=2)
        S = lib.columns
        y = S[:, [0, 3]] @ [0.4, 0.6] + 0.01 * np.random.default_rng(0).normal(size=50)
        m = unmix_bma(y, lib, BmaConfig(max_subset_size=5, n_models=100))
        subs = [c for k in range(1, 6) for c in itertools.combinations(range(5), k)]
        coefs = [nnls_by_enumeration(S[:, list(c)], y) for c in subs]
        bics = np.array([hand_bic(y.tolist(), S.tolist(), c, cf.tolist()) for c, cf in zip(subs, coefs)])
        w = np.maximum(np.exp(-0.5 * (bics - bics.min())), 1e-12)
        w /= w.sum()
        expected = np.zeros(5)
        for c, cf, wi in zip(subs, coefs, w):
            expected[list(c)] += wi * cf
        expected[expected < 1e-6] = 0.0
        assert np.max(np.abs(m.abundances - expected)) <= 1e-9


class TestQuadraticFeatures:
    def test_ones(self):
        lib = make_library(np.ones((4, 2)), names=["a", "b"])
        aug = build_quadratic_features(lib, [(0, 1)])
        assert np.allclose(aug.columns[:, 2], np.ones(4), atol=1e-15)
        assert aug.names[2] == "a × b"

    def test_disjoint_support_is_zero_and_flagged(self):
        cols = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        aug = build_quadratic_features(make_library(cols), [(0, 1)])
        assert np.array_equal(aug.columns[:, 2], np.zeros(3))
        assert any("all zeros" in f for f in validate_library(aug))

    def test_hand_rescale(self):
        lib = make_library(np.array([[1.0, 2.0], [2.0, 2.0], [3.0, 2.0]]))
        col = build_quadratic_features(lib, [(0, 1)]).columns[:, 2]
        target_norm = (math.sqrt(14) + math.sqrt(12)) / 2
        expected = np.array([2.0, 4.0, 6.0]) * target_norm / math.sqrt(56)
        assert np.allclose(col, expected, atol=1e-14)
        assert np.linalg.norm(col) == pytest.approx(target_norm, rel=1e-14)

    def test_duplicate_pair(self):
        with pytest.raises(DataError):
            build_quadratic_features(make_library(np.ones((3, 3))), [(0, 1), (0, 1)])

    @pytest.mark.parametrize("pair", [(1, 0), (0, 3), (-1, 0)])
    def test_invalid_pair(self, pair):
        with pytest.raises(DataError):
            build_quadratic_features(make_library(np.ones((3, 3))), [pair])


class TestBmaQ:
    def test_single_top_member_reduces_to_bma(self):
        lib = synthetic_library(20, seed=3)
        y = lib.columns[:, [1, 5]] @ [0.5, 0.5]
        cfg = BmaConfig(n_models=300, top_t_for_pairs=1)
        q, plain = unmix_bma_q(y, lib, cfg), unmix_bma(y, lib, cfg)
        assert q.technique is Technique.BMA_Q
        assert np.array_equal(q.abundances, plain.abundances)
        assert q.diagnostics["interactions"] == {}

    def test_true_interaction_is_strongest(self):
        lib = synthetic_library(20, seed=5)
        s1, s2 = lib.columns[:, 4], lib.columns[:, 11]
        inter = build_quadratic_features(lib, [(4, 11)]).columns[:, -1]
        y = 0.5 * s1 + 0.3 * s2 + 0.2 * inter
        m = unmix_bma_q(y, lib, BmaConfig(n_models=3000, top_t_for_pairs=6))
        strengths = m.diagnostics["interactions"]
        assert (4, 11) in strengths and len(strengths) > 1
        assert strengths[(4, 11)] == pytest.approx(0.2, abs=1e-6)
        others = [v for k, v in strengths.items() if k != (4, 11)]
        assert strengths[(4, 11)] > max(others)
        w = m.diagnostics["weights"]
        assert abs(w.sum() - 1.0) <= 1e-9

    def test_reconstruction_includes_interactions(self):
        lib = synthetic_library(12, seed=8)
        y = lib.columns[:, [0, 1]] @ [0.5, 0.5]
        m = unmix_bma_q(y, lib, BmaConfig(n_models=400, top_t_for_pairs=4))
        pairs = m.diagnostics["pairs"]
        aug = build_quadratic_features(lib, pairs)
        coef = np.concatenate([m.abundances, [m.diagnostics["interactions"][p] for p in pairs]])
        assert np.allclose(m.reconstruction, aug.columns @ coef, atol=1e-14)
