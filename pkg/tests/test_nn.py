import numpy as np
import pytest

from fhe_fedsim import nn, qsim
from fhe_fedsim.nn.layers import Linear, QuantumLayer, ReLU
from fhe_fedsim.nn.models import Model

EXPECTED_COUNTS = {
    "cnn": 2068,
    "cnn-qnn": 2112,
    "cnn-qcnn": 2241,
    "fx": 2052,
    "fx-qnn": 2096,
    "fx-qcnn": 4145,
}


def fd_model_check(model, x, y, rng, entries_per_tensor=8, h=1e-4):
    """Worst |finite difference - backprop| over sampled parameter entries.

    Probes run the forward pass at float64 (parameters stay float32) so
    the difference quotient is not drowned by activation rounding."""
    x64 = x.astype(np.float64)
    _, grads = model.loss_and_grad(x, y)
    grad_by_name = dict(grads)
    worst = 0.0
    for name, p in model.parameters():
        flat = p.reshape(-1)
        count = min(entries_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=count, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            hi = float(flat[idx])  # the perturbation as actually stored in f32
            lp, _ = model.loss_and_grad(x64, y)
            flat[idx] = orig - h
            lo = float(flat[idx])
            lm, _ = model.loss_and_grad(x64, y)
            flat[idx] = orig
            worst = max(worst, abs((lp - lm) / (hi - lo) - grad_by_name[name].reshape(-1)[idx]))
    return worst


# ---------------------------------------------------------------------------
# architectures


@pytest.mark.parametrize("arch,count", sorted(EXPECTED_COUNTS.items()))
def test_trainable_parameter_counts(arch, count):
    model = nn.build_model(arch, 32, np.random.default_rng(0))
    assert model.parameter_count() == count


def test_cnn_tensor_breakdown():
    model = nn.build_model("cnn", 32, np.random.default_rng(0))
    sizes = {name: arr.size for name, arr in model.parameters()}
    assert sizes["conv1.weight"] + sizes["conv1.bias"] == 224
    assert sizes["conv2.weight"] + sizes["conv2.bias"] == 1168
    assert sizes["fc1.weight"] + sizes["fc1.bias"] == 544
    assert sizes["fc2.weight"] + sizes["fc2.bias"] == 132
    assert len(sizes) == 8


def test_forward_emits_four_logits():
    x = np.random.default_rng(1).uniform(0, 1, (3, 3, 16, 16)).astype(np.float32)
    for arch in nn.ARCHITECTURES:
        model = nn.build_model(arch, 16, np.random.default_rng(0))
        assert model.forward(x).shape == (3, 4)


def test_models_are_size_agnostic():
    model = nn.build_model("cnn", 8, np.random.default_rng(0))
    for size in (8, 16, 33):
        x = np.zeros((2, 3, size, size), dtype=np.float32)
        assert model.forward(x).shape == (2, 4)


def test_unknown_arch_and_tiny_input_rejected():
    with pytest.raises(nn.ModelError):
        nn.build_model("vgg", 32, np.random.default_rng(0))
    with pytest.raises(nn.ModelError):
        nn.build_model("cnn", 4, np.random.default_rng(0))


def test_build_is_deterministic():
    a = nn.build_model("cnn-qnn", 16, np.random.default_rng(9))
    b = nn.build_model("cnn-qnn", 16, np.random.default_rng(9))
    for (na, pa), (nb, pb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        assert np.array_equal(pa, pb)


# ---------------------------------------------------------------------------
# loss and gradients


def test_uniform_logits_loss_is_ln4():
    logits = np.zeros((10, 4), dtype=np.float32)
    labels = np.arange(10) % 4
    loss, dlogits = nn.softmax_cross_entropy(logits, labels)
    assert abs(loss - np.log(4)) < 1e-6
    assert dlogits.shape == (10, 4)


def test_cnn_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    model = nn.build_model("cnn", 8, np.random.default_rng(3))
    x = rng.uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
    y = np.array([0, 1, 2, 3])
    assert fd_model_check(model, x, y, rng) < 1e-4


def test_toy_hybrid_gradients_match_finite_differences():
    # 2-qubit hybrid: every gradient entry within 1e-4 of central differences
    rng = np.random.default_rng(4)
    build = np.random.default_rng(5)
    model = Model("toy", [], [
        Linear("l1", 3, 2, build),
        QuantumLayer("q", qsim.basic_entangler(n_qubits=2, n_layers=2), build),
        Linear("l2", 2, 4, build),
    ])
    x = rng.uniform(-1, 1, (5, 3)).astype(np.float32)
    y = np.array([0, 1, 2, 3, 0])
    _, grads = model.loss_and_grad(x, y)
    grad_by_name = dict(grads)
    h = 1e-2
    worst = 0.0
    for name, p in model.parameters():
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = model.loss_and_grad(x, y)
            flat[idx] = orig - h
            lm, _ = model.loss_and_grad(x, y)
            flat[idx] = orig
            worst = max(worst, abs((lp - lm) / (2 * h) - grad_by_name[name].reshape(-1)[idx]))
    assert worst < 1e-4


def test_downsized_hybrid_full_model_check():
    # cnn trunk at 8x8 feeding a 2-qubit layer, sampled entries, 1e-4 relative
    rng = np.random.default_rng(6)
    build = np.random.default_rng(7)
    trunk = nn.build_model("cnn", 8, build).layers[:-1]  # drop fc2
    model = Model("downsized", [], trunk + [
        Linear("fc2", 32, 2, build),
        QuantumLayer("q", qsim.basic_entangler(n_qubits=2, n_layers=2), build),
        Linear("fc3", 2, 4, build),
    ])
    x = rng.uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
    y = np.array([0, 1, 2, 3])
    _, grads = model.loss_and_grad(x, y)
    scale = max(np.max(np.abs(g)) for _, g in grads)
    assert fd_model_check(model, x, y, rng, entries_per_tensor=4) / max(scale, 1.0) < 1e-4


def test_sgd_zero_lr_is_identity():
    model = nn.build_model("cnn", 8, np.random.default_rng(8))
    before = [(n, a.copy()) for n, a in model.parameters()]
    x = np.random.default_rng(9).uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
    _, grads = model.loss_and_grad(x, np.array([0, 1, 2, 3]))
    nn.sgd_step(model, grads, lr=0.0)
    for (n, b), (_, a) in zip(before, model.parameters()):
        assert np.array_equal(b, a), n


def test_frozen_extractor_untouched_by_training():
    model = nn.build_model("fx", 8, np.random.default_rng(10))
    frozen_before = [(n, a.copy()) for n, a in model.frozen_parameters()]
    assert frozen_before  # the stand-in trunk exists and is excluded from trainables
    x = np.random.default_rng(11).uniform(0, 1, (8, 3, 8, 8)).astype(np.float32)
    y = np.random.default_rng(12).integers(0, 4, 8)
    for _ in range(100):
        _, grads = model.loss_and_grad(x, y)
        nn.sgd_step(model, grads, lr=0.05)
    for (n, b), (_, a) in zip(frozen_before, model.frozen_parameters()):
        assert np.array_equal(b, a), n


def test_sgd_converges_on_separable_toy_set():
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, (64, 2)).astype(np.float32)
    y = (x[:, 0] + x[:, 1] > 0).astype(np.int64)  # labels in {0,1} of 4 classes
    model = Model("toy", [], [Linear("l1", 2, 16, np.random.default_rng(14)),
                              ReLU(),
                              Linear("l2", 16, 4, np.random.default_rng(15))])
    for _ in range(200):
        _, grads = model.loss_and_grad(x, y)
        nn.sgd_step(model, grads, lr=0.3)
    acc = (model.forward(x).argmax(axis=1) == y).mean()
    assert acc == 1.0


def test_set_parameters_roundtrip_and_order_check():
    model = nn.build_model("cnn-qnn", 8, np.random.default_rng(16))
    named = model.get_parameters()
    other = nn.build_model("cnn-qnn", 8, np.random.default_rng(17))
    other.set_parameters(named)
    for (_, a), (_, b) in zip(other.parameters(), named):
        assert np.array_equal(a, b)
    with pytest.raises(nn.ModelError):
        other.set_parameters(list(reversed(named)))


def test_loss_decreases_early_for_every_architecture():
    x, y = nn.synthetic_dataset(21, 64, 8)
    for arch in nn.ARCHITECTURES:
        model = nn.build_model(arch, 8, np.random.default_rng(22))
        losses = []
        for _ in range(5):
            epoch_loss = 0.0
            for i in range(0, 64, 16):
                loss, grads = model.loss_and_grad(x[i : i + 16], y[i : i + 16])
                nn.sgd_step(model, grads, lr=0.1)
                epoch_loss += loss
            losses.append(epoch_loss)
        assert losses[-1] < losses[0], arch
