import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dsmc import Role, SlotStream, StreamKey, derive_stream, replicate_seed, run_dsmc
from dsmc.models import simulate_scalar_lgssm, lgssm_fk


@given(seed=st.integers(0, 2**64 - 1), level=st.integers(0, 20), node=st.integers(0, 10**6),
       role=st.sampled_from(list(Role)))
def test_same_key_same_bytes(seed, level, node, role):
    key = StreamKey(seed, level, node, role)
    a = derive_stream(key).random(1000)
    b = derive_stream(StreamKey(seed, level, node, role)).random(1000)
    assert a.tobytes() == b.tobytes()


def test_neighbouring_nodes_are_independent_looking():
    a = derive_stream(StreamKey(7, 2, 10, Role.PAIR_RESAMPLE)).random(100_000)
    b = derive_stream(StreamKey(7, 2, 11, Role.PAIR_RESAMPLE)).random(100_000)
    assert stats.ks_2samp(a, b).pvalue > 0.001
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


def test_roles_and_counters_change_the_stream():
    base = StreamKey(3)
    seen = {derive_stream(base.child(role=r)).random() for r in Role}
    seen |= {derive_stream(base.child(counter=c)).random() for c in range(1, 5)}
    assert len(seen) == len(Role) + 4


def test_million_draws_pass_distribution_tests():
    g = derive_stream(StreamKey(11, 1, 1))
    assert stats.kstest(g.random(1_000_000), "uniform").pvalue > 1e-3
    assert stats.kstest(g.standard_normal(1_000_000), "norm").pvalue > 1e-3


@given(seed=st.integers(0, 2**63), rep=st.integers(0, 10**6))
def test_replicate_seed_deterministic_and_63_bit(seed, rep):
    s = replicate_seed(seed, rep)
    assert s == replicate_seed(seed, rep)
    assert 0 <= s < 2**63


def test_replicate_seeds_distinct():
    assert len({replicate_seed(0, r) for r in range(1000)}) == 1000


def test_slot_stream_is_per_slot():
    ss = SlotStream.from_key(StreamKey(5, role=Role.PAIR_RESAMPLE))
    full = ss.uniforms(np.arange(10), 3)
    single = ss.uniforms(np.array([7]), 3)
    assert full[7] == single[0]


def test_worker_count_does_not_change_output():
    lg, _ = simulate_scalar_lgssm(12, seed=1)
    model = lgssm_fk(lg, "smoother")
    for resampler in ("multinomial", "rejection-lazy", "mh-lazy"):
        a, _ = run_dsmc(model, 64, resampler, seed=9, workers=1)
        b, _ = run_dsmc(model, 64, resampler, seed=9, workers=8)
        assert np.array_equal(a.trajectories, b.trajectories)
