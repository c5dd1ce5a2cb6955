import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flea.adversaries import apply_adversary
from flea.filtering import (
    FilterConfig,
    FilterDiagnostics,
    alpha_quantile,
    filter_from_scores,
    filter_sources,
    filter_variant,
    flea_train,
    score_matrix,
    select_sources,
)
from flea.learners import FairLearnerConfig, fit_learner
from flea.model import accuracy
from flea.tabular import SourceBundle, split_sources

from conftest import make_toy


def test_alpha_quantile_examples():
    vals = list(range(1, 11))
    assert alpha_quantile(vals, 0.5) == 5
    assert alpha_quantile(vals, 1.0) == 10
    assert alpha_quantile([5, 1, 4, 2, 3], 3 / 5) == 3
    assert alpha_quantile([5, 1, 4, 2, 3], 0.6) == 3


def test_alpha_quantile_errors():
    with pytest.raises(ValueError):
        alpha_quantile([], 0.5)
    with pytest.raises(ValueError):
        alpha_quantile([1.0], 0.0)


def test_filter_config_range():
    with pytest.raises(ValueError):
        FilterConfig(alpha=0.4)
    with pytest.raises(ValueError):
        FilterConfig(alpha=1.01)


def test_hand_matrix_selects_clean_block():
    D = np.array([
        [0.00, 0.05, 0.10, 0.60, 0.70],
        [0.05, 0.00, 0.08, 0.50, 0.55],
        [0.10, 0.08, 0.00, 0.65, 0.50],
        [0.60, 0.50, 0.65, 0.00, 0.20],
        [0.70, 0.55, 0.50, 0.20, 0.00],
    ])
    q, threshold, selected = select_sources(D, 0.6)
    assert np.allclose(q, [0.10, 0.08, 0.10, 0.50, 0.50])
    assert threshold == 0.10
    assert selected == [0, 1, 2]


def test_equal_scores_select_everything():
    D = np.full((6, 6), 0.3)
    np.fill_diagonal(D, 0.0)
    assert select_sources(D, 0.5)[2] == list(range(6))


def _random_d(rng, n):
    D = rng.random((n, n))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0.0)
    return D


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.floats(0.5, 1.0), st.integers(0, 2**31))
def test_selection_is_permutation_equivariant(n, alpha, seed):
    rng = np.random.default_rng(seed)
    D = _random_d(rng, n)
    perm = rng.permutation(n)
    _, _, sel = select_sources(D, alpha)
    _, _, sel_p = select_sources(D[np.ix_(perm, perm)], alpha)
    assert sorted(perm[sel_p].tolist()) == sel


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.floats(0.5, 1.0), st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_threshold_monotone_in_entries(n, alpha, seed, bump):
    rng = np.random.default_rng(seed)
    D = _random_d(rng, n)
    i, j = rng.choice(n, 2, replace=False)
    E = D.copy()
    E[i, j] += bump
    assert select_sources(E, alpha)[1] >= select_sources(D, alpha)[1]


@settings(max_examples=60, deadline=None)
@given(arrays(float, (6, 6), elements=st.floats(0, 1)), st.floats(0.5, 1.0))
def test_selected_set_nonempty_and_consistent(D, alpha):
    np.fill_diagonal(D, 0.0)
    q, threshold, sel = select_sources(D, alpha)
    assert sel
    assert sel == [i for i in range(6) if q[i] <= threshold]


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 8), st.floats(0.5, 1.0), st.integers(0, 2**31))
def test_dominating_row_selected_with_dominated_one(n, alpha, seed):
    rng = np.random.default_rng(seed)
    D = _random_d(rng, n)
    q, _, sel = select_sources(D, alpha)
    for i in range(n):
        for j in sel:
            if q[i] <= q[j]:
                assert i in sel


def _bundle(n_sources=4, n=120, seed=0):
    return split_sources(make_toy(n=n * n_sources, seed=seed), n_sources, seed)


def test_score_matrix_diagonal_and_symmetry():
    scores = score_matrix(_bundle())
    for i, row in enumerate(scores):
        assert row[i].d_score == 0.0
        for j, p in enumerate(row):
            assert p == scores[j][i]


def test_diagnostics_roundtrip_and_rows():
    b = _bundle()
    diag = filter_sources(b, FilterConfig(alpha=0.75))
    back = FilterDiagnostics.from_dict(json.loads(json.dumps(diag.to_dict())))
    assert np.array_equal(back.d_matrix, diag.d_matrix)
    assert back.selected == diag.selected and back.pair_scores == diag.pair_scores
    assert b.merged(diag.selected).n == sum(b[i].n for i in diag.selected)


def test_filter_variant_uses_one_measure():
    b = _bundle()
    diag = filter_variant(b, FilterConfig(), "disb_only")
    expected = [[abs(s.protected.mean() - t.protected.mean()) for t in b] for s in b]
    assert np.allclose(diag.d_matrix, expected)
    with pytest.raises(ValueError):
        filter_variant(b, FilterConfig(), "bogus")


def test_filter_from_scores_matches_filter_sources():
    b = _bundle()
    direct = filter_sources(b, FilterConfig(alpha=0.5))
    again = filter_from_scores(score_matrix(b), 0.5)
    assert again.selected == direct.selected
    assert np.array_equal(again.d_matrix, direct.d_matrix)


def test_flip_both_sources_are_rejected():
    b = apply_adversary("FB", split_sources(make_toy(n=1500, seed=3, a_shift=1.5), 5, 3), [1, 3], 0)
    assert filter_sources(b, FilterConfig(alpha=0.6)).selected == [0, 2, 4]


def test_flea_train_uses_selected_sources():
    b = apply_adversary("FL", _bundle(5, 200, seed=4), [0], 0)
    model, diag = flea_train(b, FilterConfig(alpha=0.6), FairLearnerConfig())
    expected, _ = fit_learner(b.merged(diag.selected), FairLearnerConfig())
    assert np.array_equal(model.params, expected.params)


def test_flea_without_adversary_close_to_all_data():
    data = make_toy(n=1500, seed=5)
    test = make_toy(n=2000, seed=6)
    b = split_sources(data, 5, 0)
    model, _ = flea_train(b, FilterConfig(alpha=0.6), FairLearnerConfig())
    full, _ = fit_learner(data, FairLearnerConfig())
    assert abs(accuracy(model, test) - accuracy(full, test)) <= 0.02


def test_bundle_requires_two_sources():
    with pytest.raises(ValueError):
        SourceBundle((make_toy(n=10),))
