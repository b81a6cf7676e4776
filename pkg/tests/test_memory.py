import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamsearch.errors import DimensionMismatch, IndexOutOfRange, ZeroNorm
from siamsearch.memory import MemoryBank, similarities_to_bank


def test_refresh_normalises_and_is_idempotent():
    F = np.random.default_rng(0).normal(size=(5, 3))
    bank = MemoryBank(5, 3)
    bank.refresh(F)
    np.testing.assert_allclose(bank.M, F / np.linalg.norm(F, axis=1, keepdims=True))
    first = bank.M.copy()
    bank.refresh(F)
    assert np.array_equal(bank.M, first)
    np.testing.assert_allclose(np.linalg.norm(bank.M, axis=1), 1.0, atol=1e-12)


def test_refresh_errors():
    bank = MemoryBank(2, 2)
    with pytest.raises(DimensionMismatch):
        bank.refresh(np.ones((3, 2)))
    with pytest.raises(ZeroNorm):
        bank.refresh([[1.0, 0.0], [0.0, 0.0]])


def test_momentum_limits():
    bank = MemoryBank.from_features([[1.0, 0.0], [0.0, 1.0]], lam=0.0)
    bank.momentum_update(0, [3.0, 4.0])
    np.testing.assert_array_equal(bank.M[0], [0.6, 0.8])
    bank = MemoryBank.from_features([[1.0, 0.0], [0.0, 1.0]], lam=1.0)
    bank.momentum_update(0, [3.0, 4.0])
    np.testing.assert_array_equal(bank.M[0], [1.0, 0.0])


def test_momentum_blend_hand_arithmetic():
    bank = MemoryBank.from_features([[1.0, 0.0]], lam=0.2)
    bank.momentum_update(0, [0.0, 1.0])
    norm = math.sqrt(0.2**2 + 0.8**2)
    np.testing.assert_allclose(bank.M[0], [0.2 / norm, 0.8 / norm], atol=1e-12)
    np.testing.assert_allclose(bank.M[0], [0.24254, 0.97014], atol=1e-5)


def test_momentum_update_errors():
    bank = MemoryBank(2, 2)
    with pytest.raises(IndexOutOfRange):
        bank.momentum_update(2, [1.0, 0.0])
    with pytest.raises(ZeroNorm):
        bank.momentum_update(0, [0.0, 0.0])


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 5), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)),
                min_size=1, max_size=20),
       st.floats(0, 1))
def test_rows_stay_unit_and_updates_are_local(updates, lam):
    bank = MemoryBank.from_features(np.random.default_rng(1).normal(size=(6, 3)), lam=lam)
    for t, *f in updates:
        if np.linalg.norm(f) < 1e-6:
            continue
        before = bank.M.copy()
        bank.momentum_update(t, np.array(f))
        others = np.arange(6) != t
        assert np.array_equal(bank.M[others], before[others])
    np.testing.assert_allclose(np.linalg.norm(bank.M, axis=1), 1.0, atol=1e-9)


def test_update_batch_ascending_order():
    a = MemoryBank.from_features(np.eye(3), lam=0.5)
    b = MemoryBank.from_features(np.eye(3), lam=0.5)
    F = np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    a.update_batch([2, 0], F)
    b.momentum_update(0, F[1])
    b.momentum_update(2, F[0])
    assert np.array_equal(a.M, b.M)


def test_similarities_to_bank():
    bank = MemoryBank.from_features(np.eye(4))
    np.testing.assert_array_equal(similarities_to_bank(np.array([2.0, 0, 0, 0]), bank), [1, 0, 0, 0])
    F = np.random.default_rng(2).normal(size=(6, 5))
    bank = MemoryBank.from_features(F)
    f = np.random.default_rng(3).normal(size=5)
    expected = [np.dot(f, row) / (np.linalg.norm(f) * np.linalg.norm(row)) for row in F]
    np.testing.assert_allclose(similarities_to_bank(f, bank), expected, atol=1e-12)
    assert similarities_to_bank(F[3], bank)[3] == pytest.approx(1.0, abs=1e-12)
