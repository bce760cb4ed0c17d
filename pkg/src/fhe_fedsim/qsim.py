"""Dense statevector simulation of the parameterized circuits used by the
hybrid models: angle embedding, ring-entangler layers, and the 8-qubit
convolution/pooling ansatz, with Pauli-Z readouts and exact two-term
parameter-shift gradients.

Conventions:
  - little-endian wires: wire 0 is the least significant amplitude bit;
  - RX(t) = [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]], RY/RZ standard;
  - every parameterized gate is a plain single-angle rotation. The pooling
    layer's controlled-RY is emitted as RY(t/2) CNOT RY(-t/2) CNOT, which
    keeps the two-term shift rule exact (slots carry a +-1/2 coefficient,
    applied by the chain rule when slot gradients are folded per parameter).

Evaluation is batched over samples: embedding angles may differ per sample,
trainable angles are shared. The gate loop is a hot kernel (numba with a
numpy fallback, see backend.py). No shot noise, no density matrices; at
most MAX_QUBITS qubits.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .backend import kernels
from .constants import MAX_QUBITS

_K = kernels("qsim")

_KIND_CODE = {"rx": 0, "ry": 1, "rz": 2, "cnot": 3}


class QsimError(Exception):
    pass


@dataclass(frozen=True)
class GateOp:
    """One gate. Rotations resolve their angle as
    `angle + coeff * params[param]` or `angle + coeff * inputs[input]`."""

    kind: str
    wires: tuple
    angle: float = 0.0
    param: int = -1
    input: int = -1
    coeff: float = 1.0


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    ops: tuple
    n_params: int
    n_inputs: int
    readout_wires: tuple = field(default=())

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise QsimError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        seen_params = set()
        for op in self.ops:
            if op.kind not in _KIND_CODE:
                raise QsimError(f"unknown gate kind {op.kind!r}")
            for w in op.wires:
                if not 0 <= w < self.n_qubits:
                    raise QsimError(f"wire {w} out of range for {self.n_qubits} qubits")
            if op.kind == "cnot" and (len(op.wires) != 2 or op.wires[0] == op.wires[1]):
                raise QsimError("cnot needs two distinct wires")
            if op.param >= 0:
                seen_params.add(op.param)
        if seen_params != set(range(self.n_params)):
            raise QsimError("every trainable parameter must appear in at least one slot")
        for w in self.readout_wires:
            if not 0 <= w < self.n_qubits:
                raise QsimError(f"readout wire {w} out of range")

    @property
    def param_slots(self):
        slots = {p: [] for p in range(self.n_params)}
        for idx, op in enumerate(self.ops):
            if op.param >= 0:
                slots[op.param].append(idx)
        return slots

    @property
    def input_slots(self):
        slots = {i: [] for i in range(self.n_inputs)}
        for idx, op in enumerate(self.ops):
            if op.input >= 0:
                slots[op.input].append(idx)
        return slots

    @cached_property
    def _packed(self):
        kinds = np.array([_KIND_CODE[op.kind] for op in self.ops], dtype=np.int64)
        wires0 = np.array([op.wires[0] for op in self.ops], dtype=np.int64)
        wires1 = np.array(
            [op.wires[1] if len(op.wires) > 1 else 0 for op in self.ops], dtype=np.int64)
        return kinds, wires0, wires1


# ---------------------------------------------------------------------------
# evaluation


def _as_batch(circuit, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    if single:
        inputs = inputs[None, :]
    if inputs.shape[1] != circuit.n_inputs:
        raise QsimError(f"expected {circuit.n_inputs} input features, got {inputs.shape[1]}")
    return inputs, single


def _check_params(circuit, params):
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    if params.shape[0] != circuit.n_params:
        raise QsimError(f"expected {circuit.n_params} parameters, got {params.shape[0]}")
    return params


def _theta_matrix(circuit, inputs, params):
    """(n_ops, B) resolved rotation angles (cnot rows stay zero)."""
    n_ops = len(circuit.ops)
    thetas = np.zeros((n_ops, inputs.shape[0]))
    for idx, op in enumerate(circuit.ops):
        if op.kind == "cnot":
            continue
        if op.param >= 0:
            thetas[idx] = op.angle + op.coeff * params[op.param]
        elif op.input >= 0:
            thetas[idx] = op.angle + op.coeff * inputs[:, op.input]
        else:
            thetas[idx] = op.angle
    return thetas


def _run_packed(circuit, thetas, n_batch):
    states = np.zeros((n_batch, 1 << circuit.n_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    kinds, wires0, wires1 = circuit._packed
    _K.run_circuit(kinds, wires0, wires1, thetas, states)
    norms = np.linalg.norm(states, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise QsimError("statevector norm drifted")
    return states


def run(circuit, inputs, params):
    """Final statevectors, shape (B, 2^n)."""
    inputs, _ = _as_batch(circuit, inputs)
    params = _check_params(circuit, params)
    return _run_packed(circuit, _theta_matrix(circuit, inputs, params), inputs.shape[0])


def _z_expectations(states, n, wires):
    probs = np.abs(states) ** 2
    out = np.empty((states.shape[0], len(wires)))
    for k, w in enumerate(wires):
        p = probs.reshape(states.shape[0], 1 << (n - 1 - w), 2, 1 << w)
        out[:, k] = p[:, :, 0, :].sum(axis=(1, 2)) - p[:, :, 1, :].sum(axis=(1, 2))
    return out


def expectations(circuit, inputs, params, readout_wires=None):
    """Pauli-Z expectation per readout wire; (R,) for a single sample,
    (B, R) for a batch."""
    wires = circuit.readout_wires if readout_wires is None else tuple(readout_wires)
    inputs, single = _as_batch(circuit, inputs)
    params = _check_params(circuit, params)
    thetas = _theta_matrix(circuit, inputs, params)
    states = _run_packed(circuit, thetas, inputs.shape[0])
    vals = _z_expectations(states, circuit.n_qubits, wires)
    return vals[0] if single else vals


def param_shift_grad(circuit, inputs, params, readout_wires=None):
    """Exact gradients of every readout expectation.

    Returns (d_params, d_inputs): (R, P) and (R, I) for one sample, or
    (B, R, P) and (B, R, I) for a batch. Each rotation slot contributes
    coeff * (f(+pi/2) - f(-pi/2)) / 2, summed over slots that share a
    parameter.
    """
    wires = circuit.readout_wires if readout_wires is None else tuple(readout_wires)
    inputs_b, single = _as_batch(circuit, inputs)
    params = _check_params(circuit, params)
    n_batch = inputs_b.shape[0]
    base = _theta_matrix(circuit, inputs_b, params)
    d_params = np.zeros((n_batch, len(wires), circuit.n_params))
    d_inputs = np.zeros((n_batch, len(wires), circuit.n_inputs))
    half_pi = np.pi / 2.0

    def shifted_eval(idx, shift):
        thetas = base.copy()
        thetas[idx] += shift
        states = _run_packed(circuit, thetas, n_batch)
        return _z_expectations(states, circuit.n_qubits, wires)

    for idx, op in enumerate(circuit.ops):
        if op.param < 0 and op.input < 0:
            continue
        slot_grad = op.coeff * (shifted_eval(idx, half_pi) - shifted_eval(idx, -half_pi)) / 2.0
        if op.param >= 0:
            d_params[:, :, op.param] += slot_grad
        else:
            d_inputs[:, :, op.input] += slot_grad
    return (d_params[0], d_inputs[0]) if single else (d_params, d_inputs)


def apply_gate(state, kind, wires, angle=0.0):
    """Apply one gate to a single statevector (tests and small tools)."""
    state = np.ascontiguousarray(state, dtype=np.complex128)
    dim = state.shape[0]
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise QsimError("statevector length must be a power of two")
    if kind not in _KIND_CODE:
        raise QsimError(f"unknown gate kind {kind!r}")
    if max(wires) >= n:
        raise QsimError(f"wire {max(wires)} out of range")
    states = state[None, :].copy()
    kinds = np.array([_KIND_CODE[kind]], dtype=np.int64)
    wires0 = np.array([wires[0]], dtype=np.int64)
    wires1 = np.array([wires[1] if len(wires) > 1 else 0], dtype=np.int64)
    _K.run_circuit(kinds, wires0, wires1, np.array([[angle]], dtype=np.float64), states)
    return states[0]


# ---------------------------------------------------------------------------
# circuit templates


def angle_embedding(n_qubits):
    """Feature i becomes the RX angle on wire i."""
    return tuple(GateOp("rx", (w,), input=w) for w in range(n_qubits))


def embedding_circuit(n_qubits):
    """Just the angle embedding (useful on its own in tests)."""
    return Circuit(n_qubits=n_qubits, ops=angle_embedding(n_qubits), n_params=0,
                   n_inputs=n_qubits, readout_wires=tuple(range(n_qubits)))


def basic_entangler(n_qubits=4, n_layers=6, embed=True):
    """Per layer: one RX per wire (layer-major parameter order), then a ring
    of CNOTs 0->1, ..., n-1->0 (a single CNOT for two qubits)."""
    ops = list(angle_embedding(n_qubits)) if embed else []
    p = 0
    for _ in range(n_layers):
        for w in range(n_qubits):
            ops.append(GateOp("rx", (w,), param=p))
            p += 1
        if n_qubits == 2:
            ops.append(GateOp("cnot", (0, 1)))
        elif n_qubits > 2:
            for w in range(n_qubits):
                ops.append(GateOp("cnot", (w, (w + 1) % n_qubits)))
    return Circuit(n_qubits=n_qubits, ops=tuple(ops), n_params=p,
                   n_inputs=n_qubits if embed else 0,
                   readout_wires=tuple(range(n_qubits)))


def qcnn_circuit(embed=True):
    """8-qubit alternating convolution/pooling ansatz, 21 parameters.

    Three stages, each: a convolution sublayer (RY(a) RY(b) / CNOT /
    RY(c) RY(c) on every adjacent active pair, 3 shared parameters) then a
    pooling sublayer (controlled-RY(d) from the discarded qubit, RZ(e),
    RY(f) on the survivor, 3 shared parameters) halving the active set
    8 -> 4 -> 2 -> 1. A final shared RZ(g) RY(h) RZ(k) block dresses the
    four readout wires (the survivors of the first pooling).
    """
    n_qubits = 8
    ops = list(angle_embedding(n_qubits)) if embed else []
    active = list(range(n_qubits))
    p = 0
    for _ in range(3):
        a, bq, c, d, e, f = range(p, p + 6)
        p += 6
        for x, y in zip(active, active[1:]):
            ops += [
                GateOp("ry", (x,), param=a),
                GateOp("ry", (y,), param=bq),
                GateOp("cnot", (x, y)),
                GateOp("ry", (x,), param=c),
                GateOp("ry", (y,), param=c),
            ]
        survivors = []
        for j in range(0, len(active), 2):
            keep, drop = active[j], active[j + 1]
            ops += [
                GateOp("ry", (keep,), param=d, coeff=0.5),
                GateOp("cnot", (drop, keep)),
                GateOp("ry", (keep,), param=d, coeff=-0.5),
                GateOp("cnot", (drop, keep)),
                GateOp("rz", (keep,), param=e),
                GateOp("ry", (keep,), param=f),
            ]
            survivors.append(keep)
        active = survivors
    g, h, k = p, p + 1, p + 2
    p += 3
    readout = (0, 2, 4, 6)
    for w in readout:
        ops += [GateOp("rz", (w,), param=g), GateOp("ry", (w,), param=h),
                GateOp("rz", (w,), param=k)]
    return Circuit(n_qubits=n_qubits, ops=tuple(ops), n_params=p,
                   n_inputs=n_qubits if embed else 0, readout_wires=readout)
