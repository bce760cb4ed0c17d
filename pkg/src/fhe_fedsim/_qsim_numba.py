"""Numba-jitted batched statevector gate loop.

States are (B, 2^n) complex128, modified in place. The circuit arrives
packed: gate kind codes (0=rx, 1=ry, 2=rz, 3=cnot), wire indices, and a
(n_ops, B) matrix of resolved rotation angles (rows for cnot are unused).
Wire w addresses bit w of the amplitude index (little-endian).
"""

import numpy as np
from numba import njit

RX, RY, RZ, CNOT = 0, 1, 2, 3


@njit(cache=True)
def run_circuit(kinds, wires0, wires1, thetas, states):
    n_batch, dim = states.shape
    for o in range(kinds.shape[0]):
        k = kinds[o]
        if k == CNOT:
            cbit = 1 << wires0[o]
            tbit = 1 << wires1[o]
            for b in range(n_batch):
                row = states[b]
                for idx in range(dim):
                    if (idx & cbit) != 0 and (idx & tbit) == 0:
                        j = idx | tbit
                        tmp = row[idx]
                        row[idx] = row[j]
                        row[j] = tmp
        elif k == RZ:
            wbit = 1 << wires0[o]
            for b in range(n_batch):
                half = 0.5 * thetas[o, b]
                e0 = complex(np.cos(half), -np.sin(half))
                e1 = complex(np.cos(half), np.sin(half))
                row = states[b]
                for idx in range(dim):
                    if idx & wbit:
                        row[idx] = row[idx] * e1
                    else:
                        row[idx] = row[idx] * e0
        else:
            wbit = 1 << wires0[o]
            step = wbit << 1
            for b in range(n_batch):
                half = 0.5 * thetas[o, b]
                c = np.cos(half)
                s = np.sin(half)
                row = states[b]
                if k == RX:
                    ims = -1j * s
                    for base in range(0, dim, step):
                        for lo in range(base, base + wbit):
                            hi = lo + wbit
                            a0 = row[lo]
                            a1 = row[hi]
                            row[lo] = c * a0 + ims * a1
                            row[hi] = ims * a0 + c * a1
                else:
                    for base in range(0, dim, step):
                        for lo in range(base, base + wbit):
                            hi = lo + wbit
                            a0 = row[lo]
                            a1 = row[hi]
                            row[lo] = c * a0 - s * a1
                            row[hi] = s * a0 + c * a1
