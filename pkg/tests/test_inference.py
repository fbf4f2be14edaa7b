import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmlv.embedding import rbm_ground_state
from rbmlv.inference import (
    AnnealerConfig,
    ClampMask,
    McmcConfig,
    annealer_sample,
    classification_error,
    classify_annealer,
    classify_mcmc,
    classify_mcmc_batch,
    exhaustive_solver,
    generate,
    reconstruct,
)
from rbmlv.model import RbmModel, all_states, energy
from rbmlv.samplers import AnnealSchedule
from rbmlv.training import Dataset, apply_update, exact_loglik_gradient

# 2x2 images with 3 classes; every class has one distinctive pattern
PATTERNS = np.array([
    [1, 0, 0, 1, 1, 0, 0],
    [0, 1, 1, 0, 0, 1, 0],
    [1, 1, 0, 0, 0, 0, 1],
], dtype=np.uint8)
TINY = Dataset(PATTERNS, [0, 1, 2], 2, 3)


@pytest.fixture(scope="module")
def memorizer():
    """Exact likelihood ascent on the three patterns until they dominate the model."""
    m = RbmModel.random(7, 4, 0, scale=0.1)
    for _ in range(1500):
        m = apply_update(m, exact_loglik_gradient(m, PATTERNS), 1.0)
    return m


def exact(sf=1.0):
    return AnnealerConfig(sf=sf, solver=exhaustive_solver)


def brute_force_minimum(model, clamp: ClampMask):
    x = all_states(model.n_units)
    keep = np.all(x[:, : model.n_v][:, clamp.clamped] == clamp.values[clamp.clamped], axis=1)
    e = energy(model, x[keep])
    return float(e.min()), x[keep][e <= e.min() + 1e-9]


# -- clamp masks


def test_clamp_mask_forms():
    full = ClampMask([True, False, True], [1, 1, 0])
    assert full.values.tolist() == [1, 0, 0]
    short = ClampMask([True, False, True], [1, 1])
    assert short.values.tolist() == [1, 0, 1]
    with pytest.raises(ValueError):
        ClampMask([True, False], [1, 1, 1])
    lab = ClampMask.label(7, 3, 2)
    assert lab.clamped.tolist() == [False] * 4 + [True] * 3 and lab.values.tolist() == [0] * 6 + [1]


def test_random_pixel_mask_fraction():
    m = ClampMask.random_pixels(PATTERNS[0], 4, 0.5, rng=1)
    assert m.clamped.sum() == 2 and not m.clamped[4:].any()
    assert np.all(m.values[m.clamped] == PATTERNS[0][m.clamped])


# -- classification


def test_memorized_patterns_are_classified(memorizer):
    pred = classify_mcmc_batch(memorizer, TINY.images, McmcConfig(burn_in=50, votes=50), rng=0, n_classes=3)
    assert pred.tolist() == [0, 1, 2]
    assert classify_mcmc(memorizer, PATTERNS[1, :4], 50, 50, rng=1, n_classes=3) == 1
    assert classification_error(memorizer, TINY, McmcConfig(50, 50), rng=2) == 0.0


def test_annealer_classifies_memorized_patterns(memorizer):
    for k in range(3):
        assert classify_annealer(memorizer, PATTERNS[k, :4], exact(), rng=0, n_classes=3) == k


def test_fully_clamped_annealer_returns_clamped_label(memorizer):
    # the saturating clamp fields must dominate the scaled problem, hence sf=10
    assert classify_annealer(memorizer, PATTERNS[0, :4], exact(10.0), 0, 3, clamp_labels=[0, 0, 1]) == 2


def test_weak_clamp_can_be_overridden_by_strong_weights(memorizer):
    # at sf=1 this model's couplers outweigh a field of 4, so the label clamp loses
    assert classify_annealer(memorizer, PATTERNS[0, :4], exact(1.0), 0, 3, clamp_labels=[0, 0, 1]) == 0


def test_zero_model_votes_are_uniform():
    m = RbmModel.zeros(4 + 3, 2)
    images = np.zeros((3000, 4), dtype=np.uint8)
    pred = classify_mcmc_batch(m, images, McmcConfig(burn_in=2, votes=9), rng=3, n_classes=3)
    freq = np.bincount(pred, minlength=3) / 3000
    # ties go to class 0, so only check every class appears with a sizeable share
    assert freq.min() > 0.15 and abs(freq.sum() - 1) < 1e-12


def test_random_engine_error_near_nine_tenths():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 10, 4000)
    patterns = np.zeros((4000, 4 + 10), dtype=np.uint8)
    patterns[np.arange(4000), 4 + labels] = 1
    ds = Dataset(patterns, labels, 2, 10)
    guess = lambda model, images, r: r.integers(0, 10, len(images))
    err = classification_error(RbmModel.zeros(14, 2), ds, guess, rng=1)
    assert 0 <= err <= 1 and err == pytest.approx(0.9, abs=0.02)


def test_classification_error_range_and_empty_set(memorizer):
    err = classification_error(memorizer, TINY, McmcConfig(5, 5), rng=0)
    assert 0.0 <= err <= 1.0
    with pytest.raises(ValueError):
        classification_error(memorizer, TINY.subset([]), McmcConfig(), rng=0)


def test_default_settings():
    cfg = McmcConfig()
    assert (cfg.burn_in, cfg.votes) == (400, 100)
    assert generate.__defaults__[2] == 3  # top_k


def test_mcmc_is_seed_reproducible(memorizer):
    a = classify_mcmc_batch(memorizer, TINY.images, McmcConfig(3, 3), rng=11, n_classes=3)
    b = classify_mcmc_batch(memorizer, TINY.images, McmcConfig(3, 3), rng=11, n_classes=3)
    assert np.array_equal(a, b)


# -- annealer path


def test_exhaustive_annealer_finds_ground_state():
    m = RbmModel.random(4, 3, 5, scale=0.6)
    ss, info = annealer_sample(m, exact(2.0), rng=0)
    gs_e, _ = rbm_ground_state(m)
    assert np.allclose(ss.energies, gs_e) and info["n_discarded"] == 0


def test_exhaustive_annealer_respects_clamps():
    m = RbmModel.random(4, 3, 8, scale=0.5)
    clamp = ClampMask([True, False, True, False], [1, 0, 0, 0])
    ss, _ = annealer_sample(m, exact(), rng=0, clamp=clamp)
    ref_e, ref_states = brute_force_minimum(m, clamp)
    assert np.allclose(ss.energies, ref_e)
    assert {s.tobytes() for s in ss.states} == {s.tobytes() for s in ref_states}


def test_sqa_path_returns_rbm_energies():
    m = RbmModel.random(3, 2, 1)
    cfg = AnnealerConfig(schedule=AnnealSchedule.sqa(20, trotter_slices=2), n_reads=30)
    ss, info = annealer_sample(m, cfg, rng=4)
    assert ss.n_requested == 30 and info["n_reads"] == 30
    np.testing.assert_allclose(ss.energies, energy(m, ss.states))


# -- reconstruction and generation


def test_memorized_pattern_is_reconstructed(memorizer):
    mask = ClampMask([True, True, False, False, True, False, False], PATTERNS[0])
    assert reconstruct(memorizer, mask, McmcConfig(burn_in=100), rng=0).tolist() == PATTERNS[0].tolist()
    assert reconstruct(memorizer, mask, exact(), rng=0).tolist() == PATTERNS[0].tolist()


def test_full_clamp_reconstructs_itself(memorizer):
    mask = ClampMask(np.ones(7, bool), PATTERNS[2])
    assert reconstruct(memorizer, mask, McmcConfig(), rng=0).tolist() == PATTERNS[2].tolist()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=7, max_size=7), st.lists(st.integers(0, 1), min_size=7, max_size=7),
       st.integers(0, 2**16))
def test_clamped_bits_survive_reconstruction(mask, values, seed):
    m = RbmModel.random(7, 3, seed, scale=2.0)
    clamp = ClampMask(mask, values)
    out = reconstruct(m, clamp, McmcConfig(burn_in=3, n_chains=4), rng=seed)
    assert np.array_equal(out[clamp.clamped], clamp.values[clamp.clamped])
    out = reconstruct(m, clamp, AnnealerConfig(schedule=AnnealSchedule.sqa(5, trotter_slices=2), n_reads=4),
                      rng=seed)
    assert np.array_equal(out[clamp.clamped], clamp.values[clamp.clamped])


def test_generation_top_one_is_conditional_ground_state(memorizer):
    for label in range(3):
        res = generate(memorizer, label, exact(), rng=0, top_k=1, n_classes=3)
        ref_e, ref_states = brute_force_minimum(memorizer, ClampMask.label(7, 3, label))
        assert res.energies[0] == pytest.approx(ref_e, abs=1e-9)
        assert res.visibles[0].tolist() in ref_states[:, :7].tolist()
        assert res.visibles[0].tolist() == PATTERNS[label].tolist()


def test_generation_ranking(memorizer):
    res = generate(memorizer, 1, McmcConfig(burn_in=200, n_chains=10), rng=5, top_k=4, n_classes=3)
    assert res.energies == sorted(res.energies)
    assert len({v.tobytes() for v in res.visibles}) == len(res.visibles)
    assert all(v[4:].tolist() == [0, 1, 0] for v in res.visibles)
    assert res.complete == (len(res.visibles) == 4)
    with pytest.raises(ValueError):
        generate(memorizer, 1, top_k=0, n_classes=3)
