import math

import numpy as np
import pytest

from vcguard.datasets import LabeledDataset
from vcguard.errors import DivergenceError, InputError
from vcguard.tinynet import (
    AdamState,
    EpochRecord,
    FgsmConfig,
    Mlp,
    TrainConfig,
    TrainTrajectory,
    accuracy,
    adam_step,
    backward,
    fgsm,
    forward,
    input_gradient,
    load_checkpoint,
    save_checkpoint,
    smoothed_cross_entropy,
    softmax,
    train,
)

from _oracles import central_difference, forward_naive

# Scalar Adam trace (theta0 = 1, lr = 0.1, grads 0.5 / -0.3 / 0.2) computed
# by an independent step-by-step script with the standard bias correction.
ADAM_TRACE = (0.9000000019999999, 0.8808501989417751, 0.8461074307908819)


def tiny_net(dims, seed=0):
    return Mlp.init(dims, seed=seed)


# --- forward -------------------------------------------------------------------


def test_forward_zero_parameters_zero_logits():
    net = Mlp(
        layer_dims=(3, 4, 2),
        weights=[np.zeros((3, 4)), np.zeros((4, 2))],
        biases=[np.zeros(4), np.zeros(2)],
    )
    out = forward(net, np.ones((5, 3)))
    assert np.all(out == 0.0)


def test_forward_identity_single_layer():
    net = Mlp(layer_dims=(3, 3), weights=[np.eye(3)], biases=[np.zeros(3)])
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(forward(net, x), x)


def test_forward_matches_naive_oracle():
    rng = np.random.default_rng(21)
    net = tiny_net((6, 5, 4, 3), seed=2)
    batch = rng.normal(0, 1, (8, 6))
    np.testing.assert_allclose(
        forward(net, batch),
        forward_naive(net.weights, net.biases, batch.tolist()),
        atol=1e-10,
    )


def test_forward_rejects_width_mismatch():
    net = tiny_net((4, 3, 2))
    with pytest.raises(InputError):
        forward(net, np.ones((2, 5)))


# --- softmax --------------------------------------------------------------------


def test_softmax_symmetric_pair():
    np.testing.assert_array_equal(softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_shift_invariance():
    z = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(softmax(z), softmax(z + 100.0))
    rng = np.random.default_rng(8)
    z = rng.normal(0, 3, (4, 6))
    np.testing.assert_allclose(softmax(z), softmax(z + 17.3), atol=1e-12)


def test_softmax_matches_direct_formula():
    rng = np.random.default_rng(13)
    z = rng.normal(0, 2, 9)
    direct = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(softmax(z), direct, rtol=1e-12)


def test_softmax_on_simplex():
    rng = np.random.default_rng(14)
    p = softmax(rng.normal(0, 5, (50, 7)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(InputError):
        softmax(np.array([1.0, float("inf")]))


# --- smoothed cross-entropy -------------------------------------------------------


def test_ce_one_hot_correct_is_zero():
    probs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert smoothed_cross_entropy(probs, [0, 1], smoothing=0.0) == 0.0


def test_ce_uniform_is_log_c():
    probs = np.full((4, 5), 0.2)
    assert smoothed_cross_entropy(probs, [0, 1, 2, 3], 0.0) == pytest.approx(
        math.log(5), rel=1e-12
    )


def test_ce_matches_scalar_oracle():
    rng = np.random.default_rng(31)
    raw = rng.exponential(1, (6, 4))
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 4, 6)
    s = 0.1
    total = 0.0
    for i, y in enumerate(labels):
        for j in range(4):
            q = (1 - s) * (1.0 if j == y else 0.0) + s / 4
            total -= q * math.log(probs[i, j])
    assert smoothed_cross_entropy(probs, labels, s) == pytest.approx(total / 6, rel=1e-12)


def test_ce_label_out_of_range():
    with pytest.raises(InputError):
        smoothed_cross_entropy(np.full((2, 3), 1 / 3), [0, 3], 0.0)


# --- backward -----------------------------------------------------------------------


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(44)
    net = tiny_net((5, 6, 4), seed=5)
    batch = rng.uniform(0, 1, (10, 5))
    labels = rng.integers(0, 4, 10)
    cfg = TrainConfig(label_smoothing=0.1)
    dw, db = backward(net, batch, labels, cfg)

    def loss():
        logits = forward(net, batch)
        return smoothed_cross_entropy(softmax(logits), labels, cfg.label_smoothing)

    ref = central_difference(loss, net.weights + net.biases, step=1e-5)
    for got, want in zip(dw + db, ref):
        denom = np.maximum(np.abs(want), 1e-3)
        assert np.max(np.abs(got - want) / denom) < 1e-4


def test_backward_linear_net_closed_form():
    # Single affine layer, no smoothing: dW = x^T (p - onehot) for one sample.
    rng = np.random.default_rng(45)
    w = rng.normal(0, 1, (4, 3))
    net = Mlp(layer_dims=(4, 3), weights=[w], biases=[np.zeros(3)])
    x = rng.uniform(0, 1, (1, 4))
    y = np.array([2])
    dw, db = backward(net, x, y, TrainConfig(label_smoothing=0.0))
    p = softmax(forward(net, x))
    p[0, 2] -= 1.0
    np.testing.assert_allclose(dw[0], x.T @ p, atol=1e-12)
    np.testing.assert_allclose(db[0], p[0], atol=1e-12)


def test_backward_dead_relu_zero_gradient():
    # Large negative biases kill every hidden unit, so first-layer weight
    # gradients vanish.
    net = tiny_net((3, 4, 2), seed=1)
    net.biases[0][:] = -1e3
    dw, _ = backward(net, np.ones((4, 3)), np.zeros(4, dtype=int), TrainConfig())
    assert np.all(dw[0] == 0.0)


# --- adam ----------------------------------------------------------------------------


def test_adam_first_step_bounded_by_lr():
    params = [np.array([1.0, -2.0, 3.0])]
    grads = [np.array([10.0, -0.3, 1e-4])]
    state = AdamState.zeros(params)
    new_params, new_state = adam_step(state, params, grads, lr=0.05)
    assert new_state.step == 1
    assert np.max(np.abs(new_params[0] - params[0])) <= 0.05 * (1 + 1e-6)


def test_adam_zero_gradient_keeps_params():
    params = [np.array([0.5, -0.5])]
    state = AdamState.zeros(params)
    new_params, _ = adam_step(state, params, [np.zeros(2)], lr=0.1)
    np.testing.assert_array_equal(new_params[0], params[0])


def test_adam_scalar_trace_matches_oracle():
    params = [np.array([1.0])]
    state = AdamState.zeros(params)
    for grad, expected in zip([0.5, -0.3, 0.2], ADAM_TRACE):
        params, state = adam_step(state, params, [np.array([grad])], lr=0.1)
        assert params[0][0] == pytest.approx(expected, abs=1e-12)


# --- train ----------------------------------------------------------------------------


def test_train_memorizes_single_sample():
    rng = np.random.default_rng(50)
    x = np.tile(rng.uniform(0, 1, 8), (10, 1))
    data = LabeledDataset(x, np.full(10, 1))
    net = tiny_net((8, 6, 3), seed=3)
    traj = train(net, data, data, TrainConfig(epochs=1, batch_size=4, seed=0))
    assert traj.records[-1].train_accuracy == 1.0


def test_train_deterministic_under_seed():
    rng = np.random.default_rng(51)
    imgs = rng.uniform(0, 1, (60, 8))
    labels = rng.integers(0, 3, 60)
    data = LabeledDataset(imgs, labels)
    outs = []
    for _ in range(2):
        net = tiny_net((8, 6, 3), seed=3)
        traj = train(net, data, data, TrainConfig(epochs=3, batch_size=16, seed=9))
        outs.append((net, traj))
    (n1, t1), (n2, t2) = outs
    assert t1 == t2
    for w1, w2 in zip(n1.weights, n2.weights):
        np.testing.assert_array_equal(w1, w2)


def test_train_zero_epochs_keeps_initial_net():
    rng = np.random.default_rng(52)
    data = LabeledDataset(rng.uniform(0, 1, (10, 4)), rng.integers(0, 2, 10))
    net = tiny_net((4, 3, 2), seed=7)
    before = [w.copy() for w in net.weights]
    traj = train(net, data, data, TrainConfig(epochs=0))
    assert traj.records == ()
    for w, b in zip(net.weights, before):
        np.testing.assert_array_equal(w, b)


def test_train_divergence_guard():
    rng = np.random.default_rng(53)
    data = LabeledDataset(rng.uniform(0, 1, (40, 4)), rng.integers(0, 2, 40))
    net = tiny_net((4, 3, 2), seed=7)
    with pytest.raises(DivergenceError):
        train(net, data, data, TrainConfig(epochs=50, learning_rate=1e200, batch_size=8))


def test_trajectory_requires_increasing_epochs():
    rec = EpochRecord(epoch=1, train_accuracy=0.5, val_accuracy=0.5, val_log_vcs=(0.0,))
    with pytest.raises(InputError):
        TrainTrajectory(records=(rec, rec))


# --- input_gradient ---------------------------------------------------------------------


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(60)
    net = tiny_net((5, 6, 3), seed=11)
    x = rng.uniform(0.2, 0.8, 5)
    y = 2
    got = input_gradient(net, x, y)
    x_var = x.copy()

    def loss():
        logits = forward(net, x_var)
        p = softmax(logits)
        return -math.log(max(p[y], 1e-300))

    ref = central_difference(loss, [x_var], step=1e-5)[0]
    denom = np.maximum(np.abs(ref), 1e-3)
    assert np.max(np.abs(got - ref) / denom) < 1e-4


def test_input_gradient_linear_model_closed_form():
    rng = np.random.default_rng(61)
    w = rng.normal(0, 1, (4, 3))
    net = Mlp(layer_dims=(4, 3), weights=[w], biases=[np.zeros(3)])
    x = rng.uniform(0, 1, (2, 4))
    y = np.array([0, 2])
    got = input_gradient(net, x, y)
    p = softmax(forward(net, x))
    p[np.arange(2), y] -= 1.0
    np.testing.assert_allclose(got, p @ w.T, atol=1e-12)


def test_input_gradient_confident_correct_is_tiny():
    # Weights scaled up make the correct logit dominate; the loss saturates
    # and its input gradient all but vanishes.
    w = np.zeros((3, 2))
    w[0, 0] = 60.0
    net = Mlp(layer_dims=(3, 2), weights=[w], biases=[np.zeros(2)])
    g = input_gradient(net, np.array([1.0, 0.3, 0.3]), 0)
    assert np.linalg.norm(g) < 1e-10


def test_input_gradient_per_sample_independence():
    rng = np.random.default_rng(62)
    net = tiny_net((4, 5, 3), seed=12)
    xs = rng.uniform(0, 1, (6, 4))
    ys = rng.integers(0, 3, 6)
    batch = input_gradient(net, xs, ys)
    for i in range(6):
        # rows agree up to BLAS summation-order noise
        np.testing.assert_allclose(
            batch[i], input_gradient(net, xs[i], ys[i]), atol=1e-12
        )


# --- fgsm -------------------------------------------------------------------------------


def test_fgsm_zero_epsilon_identity():
    x = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(fgsm(x, np.array([1.0, -1.0, 0.5]), FgsmConfig(0.0)), x)


def test_fgsm_step_and_clip():
    cfg = FgsmConfig(0.1)
    assert fgsm(np.array([0.5]), np.array([2.0]), cfg)[0] == pytest.approx(0.6)
    assert fgsm(np.array([0.95]), np.array([2.0]), cfg)[0] == 1.0
    assert fgsm(np.array([0.05]), np.array([-2.0]), cfg)[0] == 0.0


def test_fgsm_sign_zero_leaves_pixel():
    out = fgsm(np.array([0.4]), np.array([0.0]), FgsmConfig(0.2))
    assert out[0] == 0.4


def test_fgsm_linf_bound_property():
    rng = np.random.default_rng(70)
    x = rng.uniform(0, 1, (20, 9))
    g = rng.normal(0, 1, (20, 9))
    for eps in (0.01, 0.1, 0.5):
        adv = fgsm(x, g, FgsmConfig(eps))
        assert np.all(adv >= 0.0) and np.all(adv <= 1.0)
        assert np.max(np.abs(adv - x)) <= eps + 1e-15


def test_fgsm_shape_mismatch():
    with pytest.raises(InputError):
        fgsm(np.ones(3), np.ones(4), FgsmConfig(0.1))


# --- accuracy ----------------------------------------------------------------------------


def test_accuracy_all_correct():
    net = Mlp(layer_dims=(2, 2), weights=[np.eye(2) * 10], biases=[np.zeros(2)])
    data = LabeledDataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
    assert accuracy(net, data) == 1.0


def test_accuracy_matches_counting_oracle():
    rng = np.random.default_rng(80)
    net = tiny_net((4, 5, 3), seed=4)
    imgs = rng.uniform(0, 1, (40, 4))
    labels = rng.integers(0, 3, 40)
    data = LabeledDataset(imgs, labels)
    preds = np.argmax(forward(net, imgs), axis=1)
    expected = sum(1 for p, y in zip(preds, labels) if p == y) / 40
    assert accuracy(net, data) == pytest.approx(expected)


def test_accuracy_tie_resolves_to_lowest_class():
    net = Mlp(layer_dims=(2, 3), weights=[np.zeros((2, 3))], biases=[np.zeros(3)])
    data = LabeledDataset(np.array([[0.3, 0.4], [0.2, 0.1]]), np.array([0, 2]))
    assert accuracy(net, data) == 0.5  # all-zero logits predict class 0


def test_accuracy_empty_dataset_errors():
    net = tiny_net((2, 2))
    with pytest.raises(InputError):
        accuracy(net, LabeledDataset(np.empty((0, 2)), np.empty(0, dtype=int)))


# --- checkpoints --------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    net = tiny_net((7, 5, 4), seed=19)
    path = tmp_path / "model.vcg"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_dims == net.layer_dims
    for a, b in zip(loaded.weights + loaded.biases, net.weights + net.biases):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_save_is_byte_stable(tmp_path):
    net = tiny_net((6, 4, 2), seed=23)
    p1, p2 = tmp_path / "a.vcg", tmp_path / "b.vcg"
    save_checkpoint(net, p1)
    save_checkpoint(net, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().startswith(b"VCG-MLP-1")


def test_checkpoint_wrong_magic(tmp_path):
    path = tmp_path / "bad.vcg"
    path.write_bytes(b"NOT-A-NET" + b"\x00" * 64)
    with pytest.raises(InputError, match="checkpoint"):
        load_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    net = tiny_net((6, 4, 2), seed=23)
    path = tmp_path / "model.vcg"
    save_checkpoint(net, path)
    data = path.read_bytes()
    for cut in (5, 12, 20, len(data) - 3):
        clipped = tmp_path / f"cut{cut}.vcg"
        clipped.write_bytes(data[:cut])
        with pytest.raises(InputError):
            load_checkpoint(clipped)
