import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmlv.model import RbmModel
from rbmlv.training import (
    Dataset,
    Gradient,
    TrainingConfig,
    TrainingDiverged,
    apply_update,
    binarize,
    block_average,
    cd_k_gradient,
    exact_log_likelihood,
    exact_loglik_gradient,
    load_checkpoint,
    load_optdigits,
    train,
    train_test_split,
)

from oracles import block_average_reference, log_likelihood

# 4x4 gray images (max 16) with 3 classes; 2x2 block means are
# A: 16, 0, 0, 8   B: 4, 15, 15.75, 0.25   C: 9, 9, 9, 9
FIXTURE = """\
16,16,0,0,16,16,0,0,0,0,8,8,0,0,8,8,0
0,4,12,16,4,8,16,16,16,16,0,0,16,15,0,1,2
9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,9,1
"""
# threshold = 16 / 2 = 8, pixels strictly above it are set; label one-hot appended
FIXTURE_PATTERNS = [
    [1, 0, 0, 0, 1, 0, 0],
    [0, 1, 1, 0, 0, 0, 1],
    [1, 1, 1, 1, 0, 1, 0],
]


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- dataset


def test_fixture_bits_match_hand_computation(tmp_path):
    ds = load_optdigits(write(tmp_path, FIXTURE), resolution=2, n_classes=3)
    assert ds.patterns.tolist() == FIXTURE_PATTERNS
    assert ds.labels.tolist() == [0, 2, 1]
    assert ds.resolution == 2 and ds.n_pixels == 4


def test_zero_and_saturated_rows(tmp_path):
    rows = ",".join(["0"] * 64) + ",3\n" + ",".join(["16"] * 64) + ",5\n"
    ds = load_optdigits(write(tmp_path, rows), resolution=8, threshold=4)
    assert ds.patterns[0, :64].sum() == 0
    assert ds.patterns[1, :64].sum() == 64
    assert ds.patterns[0, 64 + 3] == 1 and ds.patterns[1].sum() == 65


def test_block_average_matches_reference_for_uneven_blocks():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 17, (2, 64)).astype(float)
    for dst in (3, 5, 8):
        got = block_average(img, dst)
        for k in range(2):
            ref = block_average_reference(img[k].reshape(8, 8).tolist(), 8, dst)
            np.testing.assert_allclose(got[k].reshape(dst, dst), ref, atol=1e-12)


def test_binarize_threshold_is_strict():
    img = np.full((1, 4), 8.0)
    assert binarize(img, 2, threshold=8).sum() == 0
    assert binarize(img, 2, threshold=7.99).sum() == 4


@pytest.mark.parametrize("text", [
    "1,2,3,4,x\n",              # non-numeric
    "1,2,3,4,0\n1,2,3,0\n",     # ragged
    "1,2,3,4,0.5\n",            # fractional label
    "1,2,3,4,7\n",              # label out of range
])
def test_malformed_rows_are_rejected(tmp_path, text):
    with pytest.raises(ValueError):
        load_optdigits(write(tmp_path, text), resolution=2, n_classes=3)


def test_dataset_requires_one_hot_labels():
    with pytest.raises(ValueError):
        Dataset(np.array([[1, 0, 1, 1]], dtype=np.uint8), np.array([0]), 1, 3)


def test_split_takes_first_patterns_for_training(tmp_path):
    rows = "".join(",".join(["0"] * 4 + [str(k % 3)]) + "\n" for k in range(20))
    ds = load_optdigits(write(tmp_path, rows), resolution=2, n_classes=3)
    tr, te = train_test_split(ds, 5, 6, seed=1)
    assert tr.labels.tolist() == [0, 1, 2, 0, 1]
    tr2, te2 = train_test_split(ds, 5, 6, seed=1)
    assert np.array_equal(te.patterns, te2.patterns) and len(te) == 6
    with pytest.raises(ValueError):
        train_test_split(ds, 15, 6, seed=0)


# -- gradients


def test_cd_gradient_rejects_empty_batch():
    with pytest.raises(ValueError):
        cd_k_gradient(RbmModel.zeros(2, 2), np.zeros((0, 2)), 1, 0)


def test_cd_gradient_of_zero_model_in_expectation():
    m = RbmModel.zeros(4, 3)
    v = np.array([[1, 0, 1, 1]], dtype=np.uint8)
    batch = np.repeat(v, 20000, axis=0)
    g = cd_k_gradient(m, batch, 1, np.random.default_rng(0))
    np.testing.assert_allclose(g.db, v[0] - 0.5, atol=0.02)
    np.testing.assert_allclose(g.dc, 0.0, atol=1e-12)


def test_exact_gradient_of_zero_model_single_pattern():
    v = np.array([[1, 0, 0, 1, 1]])
    g = exact_loglik_gradient(RbmModel.zeros(5, 2), v)
    np.testing.assert_allclose(g.db, v[0] - 0.5, atol=1e-12)


def _log_lik_flat(theta, n_v, n_h, batch):
    W = theta[: n_v * n_h].reshape(n_h, n_v)
    b = theta[n_v * n_h : n_v * n_h + n_v]
    c = theta[n_v * n_h + n_v :]
    return log_likelihood(W.tolist(), b.tolist(), c.tolist(), batch)


def test_exact_gradient_matches_finite_differences_of_reference():
    rng = np.random.default_rng(8)
    m = RbmModel.random(3, 2, rng)
    batch = rng.integers(0, 2, (4, 3))
    theta = np.concatenate([m.W.ravel(), m.b, m.c])
    step = 1e-5
    fd = np.zeros_like(theta)
    for k in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[k] += step
        dn[k] -= step
        fd[k] = (_log_lik_flat(up, 3, 2, batch) - _log_lik_flat(dn, 3, 2, batch)) / (2 * step)
    got = exact_loglik_gradient(m, batch).flat() * len(batch)  # batch mean -> batch sum
    np.testing.assert_allclose(got, fd, atol=1e-6)


def test_exact_log_likelihood_matches_reference():
    rng = np.random.default_rng(2)
    m = RbmModel.random(4, 2, rng)
    batch = rng.integers(0, 2, (5, 4))
    assert exact_log_likelihood(m, batch) * 5 == pytest.approx(log_likelihood(m.W, m.b, m.c, batch), abs=1e-10)


def test_gradient_vanishes_at_likelihood_maximum():
    # a single pattern has no finite maximizer, so use a product-form batch
    # whose empirical distribution the model can match exactly
    batch = np.array([[0, 0]] * 1 + [[1, 0]] * 2 + [[0, 1]] * 2 + [[1, 1]] * 4)
    m = RbmModel.random(2, 1, 4, scale=0.1)
    for _ in range(20000):
        g = exact_loglik_gradient(m, batch)
        if np.linalg.norm(g.flat()) < 1e-7:
            break
        m = apply_update(m, g, 2.0)
    assert np.linalg.norm(exact_loglik_gradient(m, batch).flat()) < 1e-6
    # the empirical distribution is representable, so the maximum is its negative entropy
    emp = np.array([1, 2, 2, 4]) / 9
    assert exact_log_likelihood(m, batch) == pytest.approx(float(emp @ np.log(emp)), abs=1e-8)


# -- updates and training


@given(st.floats(0.001, 0.5), st.floats(0.0, 1.9), st.integers(1, 20))
def test_decay_contracts_geometrically_without_gradient(lr, decay, steps):
    m = RbmModel.random(3, 2, 0)
    zero = Gradient(np.zeros((2, 3)), np.zeros(3), np.zeros(2))
    out = m
    for _ in range(steps):
        out = apply_update(out, zero, lr, decay)
    np.testing.assert_allclose(out.W, m.W * (1 - lr * decay) ** steps, rtol=1e-9, atol=1e-300)
    np.testing.assert_array_equal(out.b, m.b)


def test_heavy_decay_shrinks_weights_monotonically():
    m = RbmModel.random(4, 3, 1)
    zero = Gradient(np.zeros((3, 4)), np.zeros(4), np.zeros(3))
    sizes = [np.abs(m.W).max()]
    for _ in range(5):
        m = apply_update(m, zero, 0.1, 10.0 - 1e-9)
        sizes.append(np.abs(m.W).max())
    assert all(a >= b for a, b in zip(sizes, sizes[1:])) and sizes[-1] < 1e-9


def test_weight_cap_clips():
    m = RbmModel(np.array([[0.9, -0.9]]), [0, 0], [0])
    g = Gradient(np.array([[1.0, -1.0]]), np.zeros(2), np.zeros(1))
    assert np.abs(apply_update(m, g, 1.0, weight_cap=1.0).W).max() == 1.0


def _tiny_patterns():
    return np.array([[1, 0, 1, 1], [0, 1, 0, 0]], dtype=np.uint8)


def test_zero_learning_rate_leaves_model_unchanged():
    m = RbmModel.random(4, 3, 5)
    out, trace = train(m, _tiny_patterns(), TrainingConfig(learning_rate=0.0, epochs=7, checkpoints=()))
    assert out == m and len(trace.records) == 7


def test_training_raises_likelihood_of_tiny_patterns():
    m = RbmModel.random(4, 3, 0, scale=0.01)
    cfg = TrainingConfig(kG=5, learning_rate=0.05, epochs=500, batch_size=2, weight_decay=0.0, checkpoints=())
    out, _ = train(m, _tiny_patterns(), cfg, rng=3)
    assert exact_log_likelihood(out, _tiny_patterns()) > exact_log_likelihood(m, _tiny_patterns())


def test_training_is_bit_reproducible():
    m = RbmModel.random(4, 3, 0, scale=0.1)
    cfg = TrainingConfig(epochs=20, batch_size=1, rng_seed=9, checkpoints=())
    a, _ = train(m, _tiny_patterns(), cfg)
    b, _ = train(m, _tiny_patterns(), cfg)
    assert a.digest() == b.digest()


def test_checkpoints_and_trace(tmp_path):
    m = RbmModel.random(4, 3, 0, scale=0.1)
    cfg = TrainingConfig(epochs=6, checkpoints=(0, 2, 6))
    out, trace = train(m, _tiny_patterns(), cfg, checkpoint_dir=tmp_path, evaluate=lambda model: 0.25)
    assert sorted(trace.checkpoints) == [0, 2, 6]
    assert trace.checkpoints[0] == m and trace.checkpoints[6] == out
    loaded, epoch = load_checkpoint(tmp_path / "epoch_00002.json")
    assert epoch == 2 and loaded == trace.checkpoints[2]
    assert [r.classif_error for r in trace.records] == [None, 0.25, None, None, None, 0.25]
    trace.write_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,recon_error,max_abs_w,classif_error" and len(lines) == 7


def test_divergence_reports_epoch(monkeypatch):
    import rbmlv.training as training

    real = training.cd_k_gradient
    calls = []

    def blows_up_on_third_call(model, batch, kG, rng=None):
        calls.append(1)
        g = real(model, batch, kG, rng)
        return Gradient(g.dW + np.nan, g.db, g.dc) if len(calls) == 3 else g

    monkeypatch.setattr(training, "cd_k_gradient", blows_up_on_third_call)
    cfg = TrainingConfig(epochs=5, batch_size=1, checkpoints=())
    with pytest.raises(TrainingDiverged) as info:
        train(RbmModel.random(4, 3, 0), _tiny_patterns(), cfg)
    assert info.value.epoch == 2  # two updates per epoch


@pytest.mark.parametrize("kwargs", [{"kG": 0}, {"learning_rate": -1.0}, {"weight_decay": -0.1}])
def test_invalid_training_config(kwargs):
    with pytest.raises(ValueError):
        TrainingConfig(**kwargs)
