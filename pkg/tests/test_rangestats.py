"""Range counting and the exact set-identity decompositions."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rangelab._fastpath import pack_positions, prefix_range_counts
from rangelab.rangestats import (
    block_statistics,
    decomposition_check,
    p_fold_intersection,
    range_count,
    self_intersection_count,
)
from rangelab.walks import builtin_distribution, sample_path


def _positions_from_steps(step_indices, support):
    steps = support[np.asarray(step_indices, dtype=np.int64)]
    return np.cumsum(steps.astype(np.int64), axis=0)


_SRW_SUPPORT = builtin_distribution("srw").support.astype(np.int64)

step_lists = st.lists(st.integers(0, 3), min_size=1, max_size=200)
pow2_step_lists = st.integers(0, 7).flatmap(
    lambda k: st.lists(st.integers(0, 3), min_size=2**k, max_size=2**k))


def test_range_count_tiny():
    # 4 steps, revisit: E,N,W,S brings the walk home; origin is not
    # counted, so four distinct sites.
    pos = np.array([[1, 0], [1, 1], [0, 1], [0, 0]])
    stats = range_count(pos)
    assert stats.count == 4
    stats2 = range_count(np.array([[1, 0], [1, 0], [1, 0]]))
    assert stats2.count == 1


@given(step_lists)
def test_range_count_matches_python_set(idx):
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    want = len({tuple(p) for p in pos.tolist()})
    assert range_count(pos).count == want


@given(step_lists)
def test_prefix_counts_structure(idx):
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    prefix = prefix_range_counts(pack_positions(pos))
    assert prefix[-1] == range_count(pos).count
    jumps = np.diff(np.concatenate([[0], prefix]))
    assert set(jumps.tolist()) <= {0, 1}


@given(pow2_step_lists)
def test_dyadic_decomposition_is_exact(idx):
    """Leaf ranges minus sibling overlaps reproduce the range on every
    power-of-two path, not just on average."""
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    rec = decomposition_check(pos, kind="dyadic")
    assert rec.lhs == rec.rhs
    assert rec.exact


@given(step_lists)
def test_binary_decomposition_is_exact(idx):
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    rec = decomposition_check(pos, kind="binary")
    assert rec.lhs == rec.rhs
    assert sum(rec.block_counts) >= rec.lhs


def test_decomposition_rejects_unknown_kind():
    pos = np.array([[0, 1], [1, 1]])
    with pytest.raises(ValueError):
        decomposition_check(pos, kind="ternary")


def test_decomposition_on_sampled_walks():
    srw = builtin_distribution("srw")
    for replica in range(8):
        path = sample_path(srw, 1024, master_seed=77, replica=replica)
        assert decomposition_check(path, kind="dyadic").exact
        assert decomposition_check(path, kind="binary").exact


@given(st.lists(st.integers(0, 3), min_size=1, max_size=60),
       st.lists(st.integers(0, 3), min_size=1, max_size=60),
       st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_p_fold_intersection_matches_sets(a, b, c):
    paths = [_positions_from_steps(x, _SRW_SUPPORT) for x in (a, b, c)]
    got = p_fold_intersection(paths)
    sets = [{tuple(p) for p in path.tolist()} for path in paths]
    assert got.count == len(sets[0] & sets[1] & sets[2])


@given(step_lists)
def test_self_intersection_count_brute(idx):
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    n = pos.shape[0]
    brute = sum(1 for i in range(n) for j in range(i + 1, n)
                if (pos[i] == pos[j]).all())
    assert self_intersection_count(pos) == brute


@given(step_lists, st.integers(1, 8))
def test_block_statistics_bracket(idx, blocks):
    """Block-count sum bounds the range above; subtracting pairwise
    overlaps bounds it below (inclusion-exclusion truncation)."""
    blocks = min(blocks, len(idx))
    pos = _positions_from_steps(idx, _SRW_SUPPORT)
    stats = block_statistics(pos, num_blocks=blocks)
    assert stats.lower_bound <= stats.total <= stats.upper_bound
