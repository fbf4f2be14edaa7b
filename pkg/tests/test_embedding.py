import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmlv.embedding import (
    ChainBreakPolicy,
    Embedding,
    EmbeddingError,
    HardwareGraph,
    HardwareRangeError,
    IsingProblem,
    QuboProblem,
    check_hardware_range,
    clamp_units,
    cycle_graph,
    embed_problem,
    find_embedding,
    ising_ground_states,
    lattice_graph,
    load_problem,
    path_graph,
    qubo_to_ising,
    rbm_ground_state,
    rbm_to_qubo,
    save_problem,
    scale_problem,
    spins_to_bits,
    unembed_sample,
    unembed_samples,
    validate_embedding,
)
from rbmlv.model import RbmModel, all_states, energy

from oracles import bit_tuples, energy_terms, ising_argmin, ising_energy, qubo_energy


def random_ising(n, rng, scale=1.0, density=0.6):
    J = {(i, j): float(rng.uniform(-scale, scale))
         for i in range(n) for j in range(i + 1, n) if rng.random() < density}
    return IsingProblem(rng.uniform(-scale, scale, n), J, float(rng.normal()))


# -- formulation


def test_zero_model_gives_zero_qubo():
    q = rbm_to_qubo(RbmModel.zeros(3, 2))
    assert np.all(q.linear == 0) and q.quadratic == {} and q.offset == 0


def test_one_by_one_qubo():
    q = rbm_to_qubo(RbmModel([[1.0]], [0.0], [0.0]))
    assert q.quadratic == {(0, 1): -1.0}
    assert q.linear.tolist() == [0.0, 0.0]


def test_qubo_energy_equals_rbm_energy_everywhere():
    m = RbmModel.random(3, 2, 4, scale=1.0)
    q = rbm_to_qubo(m)
    for x in bit_tuples(5):
        ref = energy_terms(m.W, m.b, m.c, x[:3], x[3:])
        assert qubo_energy(q.linear, q.quadratic, q.offset, x) == pytest.approx(ref, abs=1e-12)
        assert q.energy(np.array(x)) == pytest.approx(ref, abs=1e-12)


def test_zero_qubo_gives_zero_ising():
    p = qubo_to_ising(QuboProblem(np.zeros(3), {}, 0.0))
    assert np.all(p.h == 0) and p.J == {} and p.offset == 0


def test_ising_energy_equals_qubo_energy_everywhere():
    rng = np.random.default_rng(6)
    lin = rng.normal(size=6)
    quad = {(i, j): float(rng.normal()) for i, j in itertools.combinations(range(6), 2) if rng.random() < 0.5}
    q = QuboProblem(lin, quad, 0.3)
    p = qubo_to_ising(q)
    for x in bit_tuples(6):
        s = [2 * b - 1 for b in x]
        assert ising_energy(p.h, p.J, p.offset, s) == pytest.approx(qubo_energy(lin, quad, 0.3, x), abs=1e-12)


def test_conversion_preserves_argmin():
    m = RbmModel.random(4, 3, 12, scale=1.5)
    p = qubo_to_ising(rbm_to_qubo(m))
    _, argmins = ising_argmin(p.h, p.J, p.offset)
    x_states = all_states(7)
    e = energy(m, x_states)
    best = {tuple(2 * int(b) - 1 for b in x) for x in x_states[e <= e.min() + 1e-9]}
    assert argmins == best


def test_scale_factor():
    rng = np.random.default_rng(0)
    p = random_ising(5, rng)
    same = scale_problem(p, 1.0)
    assert np.array_equal(same.h, p.h) and same.J == p.J
    half = scale_problem(p, 2.0)
    np.testing.assert_allclose(half.h, p.h / 2)
    assert all(half.J[k] == pytest.approx(v / 2) for k, v in p.J.items())
    assert ising_argmin(half.h, half.J)[1] == ising_argmin(p.h, p.J)[1]
    with pytest.raises(ValueError):
        scale_problem(p, 0.0)


@settings(max_examples=25)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_brute_force_ground_states_match_oracle(n, seed):
    p = random_ising(n, np.random.default_rng(seed))
    e, states = ising_ground_states(p)
    ref_e, ref_set = ising_argmin(p.h, p.J, p.offset)
    assert e == pytest.approx(ref_e, abs=1e-9)
    assert {tuple(int(v) for v in s) for s in states} == ref_set


@settings(max_examples=25)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_rbm_ground_state_matches_full_enumeration(n_v, n_h, seed):
    m = RbmModel.random(n_v, n_h, seed, scale=2.0)
    e, x = rbm_ground_state(m)
    e_all = energy(m, all_states(m.n_units))
    assert e == pytest.approx(e_all.min(), abs=1e-9)
    assert energy(m, x) == pytest.approx(e, abs=1e-9)


def test_problem_json_round_trip(tmp_path):
    p = random_ising(4, np.random.default_rng(1))
    save_problem(p, tmp_path / "p.json")
    back = load_problem(tmp_path / "p.json")
    assert np.array_equal(back.h, p.h) and back.J == p.J and back.offset == p.offset
    q = rbm_to_qubo(RbmModel.random(2, 2, 0))
    save_problem(q, tmp_path / "q.json")
    assert load_problem(tmp_path / "q.json").quadratic == q.quadratic


def test_ising_rejects_malformed_couplers():
    with pytest.raises(ValueError):
        IsingProblem([0.0, 0.0], {(1, 1): 1.0})
    with pytest.raises(ValueError):
        IsingProblem([0.0, 0.0], {(0, 2): 1.0})


def test_hardware_range_check():
    check_hardware_range(IsingProblem([4.0, -4.0], {(0, 1): -1.0}))
    with pytest.raises(HardwareRangeError):
        check_hardware_range(IsingProblem([4.5], {}))
    with pytest.raises(HardwareRangeError):
        check_hardware_range(IsingProblem([0.0, 0.0], {(0, 1): 1.2}))


# -- hardware graphs


def test_edgelist_round_trip(tmp_path):
    hw = lattice_graph(4, 4, 0, degree_cap=6)
    hw.write_edgelist(tmp_path / "hw.txt")
    back = HardwareGraph.read_edgelist(tmp_path / "hw.txt")
    assert back == hw
    assert max(hw.degree(u) for u in range(16)) <= 6


def test_hardware_graph_validation():
    with pytest.raises(ValueError):
        HardwareGraph(3, frozenset({(1, 1)}))
    with pytest.raises(ValueError):
        HardwareGraph(3, frozenset({(0, 1), (0, 2)}), degree_cap=1)
    with pytest.raises(ValueError):
        HardwareGraph(2, frozenset({(0, 5)}))


# -- embedding search


def test_edge_embeds_into_path():
    hw = path_graph(2)
    emb = find_embedding([(0, 1)], hw, 0)
    validate_embedding(emb, [(0, 1)], hw)
    assert emb.chain_lengths() == {0: 1, 1: 1}


def test_triangle_embeds_into_hexagon():
    hw = cycle_graph(6)
    edges = [(0, 1), (1, 2), (0, 2)]
    emb = find_embedding(edges, hw, 1)
    validate_embedding(emb, edges, hw)


def test_complete_bipartite_embeds_into_lattice():
    hw = lattice_graph(10, 20, 3)
    edges = [(i, 4 + j) for i in range(4) for j in range(4)]
    emb = find_embedding(edges, hw, 3)
    validate_embedding(emb, edges, hw)
    lengths = emb.chain_lengths()
    assert set(lengths) == set(range(8)) and min(lengths.values()) >= 1


def test_impossible_embedding_raises():
    with pytest.raises(EmbeddingError):
        find_embedding([(0, 1), (1, 2), (0, 2)], path_graph(3), 0, max_attempts=10)


def test_validator_reports_broken_chains():
    hw = path_graph(4)
    with pytest.raises(EmbeddingError):
        validate_embedding(Embedding({0: (0, 2), 1: (1,)}), [(0, 1)], hw)  # disconnected chain
    with pytest.raises(EmbeddingError):
        validate_embedding(Embedding({0: (0,), 1: (2,)}), [(0, 1)], hw)  # chains do not touch


# -- physical problems


def test_identity_embedding_reproduces_problem():
    p = random_ising(4, np.random.default_rng(2), scale=0.5)
    phys = embed_problem(p, Embedding.identity(4))
    np.testing.assert_array_equal(phys.h, p.h)
    assert phys.J == p.J


def test_field_splits_along_chain():
    hw = path_graph(2)
    phys = embed_problem(IsingProblem([0.4], {}), Embedding({0: (0, 1)}), -1.0, hw)
    np.testing.assert_allclose(phys.h, [0.2, 0.2])
    assert phys.J == {(0, 1): -1.0}


def test_embedded_ground_state_unembeds_to_logical_ground_state():
    rng = np.random.default_rng(5)
    hw = cycle_graph(6)
    edges = [(0, 1), (1, 2), (0, 2)]
    p = IsingProblem(rng.uniform(-0.3, 0.3, 3), {e: float(rng.uniform(-0.3, 0.3)) for e in edges})
    emb = Embedding({0: (0, 1), 1: (2, 3), 2: (4, 5)})
    validate_embedding(emb, edges, hw)
    phys = embed_problem(p, emb, -1.0, hw)
    _, logical = ising_argmin(p.h, p.J)
    _, physical = ising_ground_states(phys)
    for s in physical:
        bits, count = unembed_sample(s, emb)
        assert count == 0
        assert tuple(2 * int(b) - 1 for b in bits) in logical


def test_clamping():
    p = IsingProblem([0.1, -0.2, 0.3], {(0, 1): 0.2, (1, 2): -0.1})
    emb = Embedding.identity(3)
    same = clamp_units(p, emb, {})
    assert np.array_equal(same.h, p.h) and same.J == p.J
    forced = clamp_units(p, emb, {0: 1, 2: 0})
    assert forced.h.tolist() == [-4.0, -0.2, 4.0]
    _, gs = ising_argmin(forced.h, forced.J)
    assert all(s[0] == 1 and s[2] == -1 for s in gs)
    every = clamp_units(p, emb, {0: 0, 1: 1, 2: 1})
    _, gs = ising_argmin(every.h, every.J)
    assert gs == {(-1, 1, 1)}


def test_clamping_covers_the_whole_chain():
    p = IsingProblem([0.0, 0.0], {})
    emb = Embedding({0: (0, 1, 2), 1: (3,)})
    phys = embed_problem(p, emb, -1.0, path_graph(4))
    forced = clamp_units(phys, emb, {0: 1})
    assert forced.h.tolist() == [-4.0, -4.0, -4.0, 0.0]


# -- unembedding


def test_unembed_unanimous_and_majority():
    emb = Embedding({0: (0, 1, 2), 1: (3,)})
    bits, count = unembed_sample([1, 1, 1, -1], emb)
    assert bits.tolist() == [1, 0] and count == 0
    bits, count = unembed_sample([1, 1, -1, 1], emb)
    assert bits.tolist() == [1, 1] and count == 1


def test_unembed_tie_and_discard():
    emb = Embedding({0: (0, 1)})
    bits, count = unembed_sample([-1, 1], emb)
    assert bits.tolist() == [0] and count == 1  # first node wins a tie
    bits, count = unembed_sample([-1, 1], emb, ChainBreakPolicy.DISCARD)
    assert bits is None and count == 1
    _, valid, broken = unembed_samples(np.array([[1, 1], [1, -1]]), emb, "discard")
    assert valid.tolist() == [True, False] and broken.tolist() == [0, 1]


def test_unembed_checks_width():
    with pytest.raises(ValueError):
        unembed_samples(np.ones((1, 3)), Embedding.identity(2))


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=9))
def test_unembed_identity_is_spin_to_bit(spins):
    bits, count = unembed_sample(spins, Embedding.identity(len(spins)))
    assert np.array_equal(bits, spins_to_bits(spins)) and count == 0
