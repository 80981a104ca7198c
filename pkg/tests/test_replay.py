import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meet_replay.replay import (
    PRIORITY_FLOOR,
    EmptyBufferError,
    ReplayBuffer,
    Transition,
    meet_priority,
    meet_priority_raw,
    meet_priority_terms,
    normalize_batch_stats,
    per_priority,
)


def tr(x=0.0, r=0.0):
    return Transition(np.array([x, -x]), np.array([x]), r, np.array([x + 1, -x]), False)


def buffer(strategy="meet", capacity=8, n=0, **kw):
    buf = ReplayBuffer(capacity, 2, 1, strategy, **kw)
    for i in range(n):
        buf.store(tr(float(i)))
    return buf


def test_first_store_gets_unit_priority():
    buf = buffer()
    slot = buf.store(tr())
    assert buf.priorities[slot] == 1.0 and buf.tree.get(slot) == 1.0


def test_store_uses_max_priority():
    buf = buffer(n=2)
    buf.update_priorities([0, 1], [0.2, 0.9])
    slot = buf.store(tr(5.0))
    assert buf.priorities[slot] == 0.9


def test_ring_overwrites_oldest():
    buf = buffer(capacity=2)
    assert [buf.store(tr(float(i))) for i in range(3)] == [0, 1, 0]
    assert len(buf) == 2
    assert buf.get(0).state[0] == 2.0
    assert buf.get(0).visit_count == 0


def test_sample_frequencies(rng):
    buf = buffer(n=2)
    buf.update_priorities([0, 1], [1.0, 3.0])
    slots, w = buf.sample_batch(100_000, rng)
    assert 0.74 <= np.mean(slots == 1) <= 0.76
    assert np.all(w == 1.0)


def test_uniform_ignores_priorities(rng):
    buf = buffer("uniform", n=4)
    buf.update_priorities([0], [100.0])
    slots, _ = buf.sample_batch(100_000, rng)
    np.testing.assert_allclose(np.bincount(slots) / slots.size, 0.25, atol=0.01)


class Scripted:
    """Stand-in generator returning fixed uniforms."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def random(self, k):
        return self.values[:k]


def test_visits_count_every_occurrence():
    buf = buffer(n=3)
    slots, _ = buf.sample_batch(3, Scripted([0.1, 0.2, 0.9]))
    assert list(slots) == [0, 0, 2]
    assert list(buf.visits[:3]) == [2, 0, 1]


def test_empty_buffer_error(rng):
    with pytest.raises(EmptyBufferError):
        buffer().sample_batch(4, rng)


def test_per_importance_weights(rng):
    buf = buffer("per", n=2, beta=0.5)
    buf.update_priorities([0, 1], [1.0, 3.0])
    slots, w = buf.sample_batch(50, rng)
    probs = np.array([0.25, 0.75])[slots]
    expected = (2 * probs) ** -0.5
    np.testing.assert_allclose(w, expected / expected.max())


def test_meet_priority_examples():
    assert meet_priority(0.5, 0.2, 1) == pytest.approx(0.2)
    assert meet_priority(0.3, 0.0, 5) == PRIORITY_FLOOR
    assert meet_priority(0.3, 0.0, 5, eps=0.05) == 0.05
    for n in (1, 2, 50):
        assert meet_priority(1.0, 0.37, n) == pytest.approx(0.37)
    with pytest.raises(ValueError):
        meet_priority(0.5, 0.5, 0)


def test_eq3_eq4_agree_vectorised(rng):
    mu, var, n = rng.random(100_000), rng.random(100_000), rng.integers(1, 1001, size=100_000)
    direct = meet_priority_raw(mu, var, n)
    split = sum(meet_priority_terms(mu, var, n))
    nz = direct != 0
    assert np.max(np.abs(direct[nz] - split[nz]) / np.abs(direct[nz])) < 1e-12


@settings(max_examples=300)
@given(st.floats(0, 1), st.floats(1e-3, 1), st.integers(1, 999))
def test_exploration_decays_with_visits(mu, var, n):
    if mu < 1.0 - 1e-9:
        assert meet_priority_raw(mu, var, n + 1) < meet_priority_raw(mu, var, n)
    assert meet_priority_raw(mu, var, n) >= var * mu - 1e-15


def test_exploration_converges_to_exploitation():
    mu, var = 0.3, 0.8
    assert meet_priority_raw(mu, var, 10**9) == pytest.approx(var * mu, rel=1e-8)


@settings(max_examples=300)
@given(st.floats(0, 0.99), st.floats(1e-3, 1), st.integers(2, 999), st.floats(1e-3, 0.5))
def test_exploitation_ordering(mu, var, n, step):
    assert meet_priority_raw(min(mu + step, 1.0), var, n) > meet_priority_raw(mu, var, n)
    assert meet_priority_raw(mu, min(var + step, 1.5), n) > meet_priority_raw(mu, var, n)


def test_normalize_examples():
    mus, var = normalize_batch_stats([-2, 0, 2], [0, 4, 1])
    np.testing.assert_allclose(mus, [0, 0.5, 1])
    np.testing.assert_allclose(var, [0, 1, 0.25])
    mus, var = normalize_batch_stats([3, 3], [0, 0])
    np.testing.assert_array_equal(mus, [0.5, 0.5])
    np.testing.assert_array_equal(var, [0, 0])
    with pytest.raises(ValueError):
        normalize_batch_stats([np.nan], [1.0])


def test_per_priority_examples():
    assert per_priority(0.0, 0.6, 1e-6) == pytest.approx(1e-6**0.6)
    assert per_priority(-7.0, 0.0) == 1.0
    assert per_priority(-3.0, 1.0, 0.0) == 3.0


def test_update_priorities_floor_and_tracking(rng):
    buf = buffer(n=3, eps=1e-6)
    buf.update_priorities([0, 1, 2], [0.0, 1.0, 3.0])
    assert buf.priorities[0] == 1e-6
    slots, _ = buf.sample_batch(100_000, rng)
    np.testing.assert_allclose(np.bincount(slots, minlength=3) / slots.size, [0, 0.25, 0.75], atol=0.01)
    before = buf.tree.leaves().copy()
    buf.update_priorities([1, 2], [1.0, 3.0])
    np.testing.assert_array_equal(buf.tree.leaves(), before)
    with pytest.raises(IndexError):
        buf.update_priorities([5], [1.0])


def test_zero_variance_priority_stays_sampleable(rng):
    buf = buffer(n=2, eps=1e-6)
    buf.update_priorities([0, 1], [meet_priority(0.4, 0.0, 3), 1e-6])
    slots, _ = buf.sample_batch(10_000, rng)
    assert set(slots) == {0, 1}


def test_max_priority_insertion_fuzz(rng):
    buf = buffer(capacity=64)
    for step in range(2000):
        slot = buf.store(tr(float(step)))
        assert buf.priorities[slot] == buf.priorities[: len(buf)].max()
        if step % 3 == 0:
            slots, _ = buf.sample_batch(4, rng)
            buf.update_priorities(slots, rng.random(4))


def test_tree_mirrors_priorities(rng):
    buf = buffer(capacity=16)
    for i in range(40):
        buf.store(tr(float(i)))
        slots, _ = buf.sample_batch(3, rng)
        buf.update_priorities(slots, rng.random(3) * 5)
        np.testing.assert_array_equal(buf.tree.leaves()[: len(buf)], buf.priorities[: len(buf)])


def test_dump(tmp_path):
    buf = buffer(n=3)
    path = tmp_path / "buf.bin"
    buf.dump(path)
    raw = path.read_bytes()
    assert raw[:8] == b"MEETBUF1"
    table = np.frombuffer(raw[20:], dtype="<f8").reshape(3, -1)
    assert table.shape[1] == 2 + 1 + 1 + 2 + 1 + 1 + 1
    np.testing.assert_array_equal(table[:, -1], buf.priorities[:3])
