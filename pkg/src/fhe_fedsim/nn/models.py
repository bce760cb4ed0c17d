"""The six model architectures and their training primitives.

All models emit 4 class logits. The `fx` family runs a frozen, seeded
random conv trunk with a 512-wide output in place of a pretrained feature
extractor: same output contract, no pretrained weights, so only the
trainable head is meaningful for accuracy comparisons.

Trainable parameter counts (must hold exactly):
    cnn 2,068   cnn-qnn 2,112   cnn-qcnn 2,241
    fx  2,052   fx-qnn  2,096   fx-qcnn  4,145
"""

import copy

import numpy as np

from .. import qsim
from .layers import (
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2,
    QuantumLayer,
    ReLU,
    softmax_cross_entropy,
)

ARCHITECTURES = ("cnn", "cnn-qnn", "cnn-qcnn", "fx", "fx-qnn", "fx-qcnn")


class ModelError(Exception):
    pass


class Model:
    """Ordered layer pipeline; `frozen_layers` run forward-only."""

    def __init__(self, arch_id, frozen_layers, layers):
        self.arch_id = arch_id
        self.frozen_layers = frozen_layers
        self.layers = layers

    def forward(self, x):
        h = x
        for layer in self.frozen_layers:
            h = layer.forward(h)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def loss_and_grad(self, x, labels):
        logits = self.forward(x)
        loss, dout = softmax_cross_entropy(logits, labels)
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return loss, self.gradients()

    def parameters(self):
        """Ordered (name, array) pairs of trainable tensors."""
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def gradients(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def frozen_parameters(self):
        out = []
        for layer in self.frozen_layers:
            out.extend(layer.params())
        return out

    def parameter_count(self):
        return sum(int(np.prod(a.shape)) for _, a in self.parameters())

    def get_parameters(self):
        return [(name, arr.copy()) for name, arr in self.parameters()]

    def set_parameters(self, named):
        current = dict(self.parameters())
        if [n for n, _ in named] != [n for n, _ in self.parameters()]:
            raise ModelError("parameter tensor names/order do not match this model")
        for name, arr in named:
            dst = current[name]
            arr = np.asarray(arr, dtype=np.float32).reshape(dst.shape)
            dst[...] = arr

    def clone(self):
        return copy.deepcopy(self)


def sgd_step(model, grads, lr, momentum=0.0, velocity=None):
    """p <- p - lr*g on trainable tensors; frozen tensors are untouched.
    Returns the velocity dict (used only when momentum > 0)."""
    params = model.parameters()
    if [n for n, _ in grads] != [n for n, _ in params]:
        raise ModelError("gradient tensor names/order do not match this model")
    if momentum > 0.0 and velocity is None:
        velocity = {name: np.zeros_like(arr) for name, arr in params}
    for (name, p), (_, g) in zip(params, grads):
        if momentum > 0.0:
            v = velocity[name]
            v *= np.float32(momentum)
            v += g
            p -= np.float32(lr) * v
        else:
            p -= np.float32(lr) * g
    return velocity


def _cnn_trunk(rng, fc2_out):
    return [
        Conv2d("conv1", 3, 8, rng),
        ReLU(),
        MaxPool2(),
        Conv2d("conv2", 8, 16, rng),
        ReLU(),
        MaxPool2(),
        GlobalAvgPool(),
        Linear("fc1", 16, 32, rng),
        ReLU(),
        Linear("fc2", 32, fc2_out, rng),
    ]


def _frozen_extractor(rng):
    """Seeded random conv trunk with a 512-wide output (stand-in for a
    pretrained feature extractor; weights live outside the trainable set)."""
    return [
        Conv2d("fx1", 3, 24, rng, stride=2),
        ReLU(),
        Conv2d("fx2", 24, 96, rng, stride=2),
        ReLU(),
        Conv2d("fx3", 96, 512, rng, stride=2),
        ReLU(),
        GlobalAvgPool(),
    ]


def build_model(arch_id, input_size, rng):
    if input_size < 8:
        raise ModelError(f"input_size must be >= 8 pixels, got {input_size}")
    if arch_id == "cnn":
        return Model(arch_id, [], _cnn_trunk(rng, 4))
    if arch_id == "cnn-qnn":
        layers = _cnn_trunk(rng, 4)
        layers += [QuantumLayer("q", qsim.basic_entangler(n_qubits=4, n_layers=6), rng),
                   Linear("fc3", 4, 4, rng)]
        return Model(arch_id, [], layers)
    if arch_id == "cnn-qcnn":
        layers = _cnn_trunk(rng, 8)
        layers += [QuantumLayer("q", qsim.qcnn_circuit(), rng),
                   Linear("fc3", 4, 4, rng)]
        return Model(arch_id, [], layers)
    if arch_id == "fx":
        return Model(arch_id, _frozen_extractor(rng), [Linear("fc", 512, 4, rng)])
    if arch_id == "fx-qnn":
        return Model(arch_id, _frozen_extractor(rng),
                     [Linear("fc1", 512, 4, rng),
                      QuantumLayer("q", qsim.basic_entangler(n_qubits=4, n_layers=6), rng),
                      Linear("fc2", 4, 4, rng)])
    if arch_id == "fx-qcnn":
        return Model(arch_id, _frozen_extractor(rng),
                     [Linear("fc1", 512, 8, rng),
                      QuantumLayer("q", qsim.qcnn_circuit(), rng),
                      Linear("fc2", 4, 4, rng)])
    raise ModelError(f"unknown architecture {arch_id!r}; expected one of {ARCHITECTURES}")


def classification_metrics(logits, labels, n_classes=4):
    """Accuracy, macro precision/recall/F1, and mean cross-entropy loss."""
    pred = logits.argmax(axis=1)
    loss, _ = softmax_cross_entropy(logits, labels)
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return {
        "accuracy": float(np.mean(pred == labels)),
        "precision": float(np.mean(precision)),
        "recall": float(np.mean(recall)),
        "f1": float(np.mean(f1)),
        "loss": loss,
    }


def evaluate_model(model, images, labels, batch_size=64):
    logits = np.concatenate(
        [model.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)])
    return classification_metrics(logits, labels)
