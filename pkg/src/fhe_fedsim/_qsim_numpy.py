"""Pure-numpy twin of the jitted statevector gate loop.

Same packed-circuit contract as _qsim_numba; rotations act on the
(batch, high, 2, low) view of the state tensor.
"""

import numpy as np

RX, RY, RZ, CNOT = 0, 1, 2, 3


def run_circuit(kinds, wires0, wires1, thetas, states):
    n_batch, dim = states.shape
    n_qubits = dim.bit_length() - 1
    for o in range(kinds.shape[0]):
        k = kinds[o]
        if k == CNOT:
            view = states.reshape((n_batch,) + (2,) * n_qubits)
            axc = 1 + (n_qubits - 1 - wires0[o])
            axt = 1 + (n_qubits - 1 - wires1[o])
            i10 = [slice(None)] * (n_qubits + 1)
            i11 = [slice(None)] * (n_qubits + 1)
            i10[axc], i10[axt] = 1, 0
            i11[axc], i11[axt] = 1, 1
            tmp = view[tuple(i10)].copy()
            view[tuple(i10)] = view[tuple(i11)]
            view[tuple(i11)] = tmp
            continue
        w = wires0[o]
        half = 0.5 * thetas[o][:, None, None]
        if k == RZ:
            e = np.cos(half) - 1j * np.sin(half)
            view = states.reshape(n_batch, -1, 2, 1 << w)
            view[:, :, 0, :] *= e
            view[:, :, 1, :] *= np.conj(e)
            continue
        c = np.cos(half)
        s = np.sin(half)
        view = states.reshape(n_batch, -1, 2, 1 << w)
        a0 = view[:, :, 0, :].copy()
        a1 = view[:, :, 1, :]
        if k == RX:
            ims = -1j * s
            view[:, :, 0, :] = c * a0 + ims * a1
            view[:, :, 1, :] = ims * a0 + c * a1
        else:
            view[:, :, 0, :] = c * a0 - s * a1
            view[:, :, 1, :] = s * a0 + c * a1
