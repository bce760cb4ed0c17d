"""Pure-numpy twin of the jitted NTT kernels (same math, vectorized).

Bit-identical to _ntt_numba so either can back the ring module; see that
module's docstring for the batched (L, N) layout and the arithmetic
conventions. Butterfly stages are vectorized over the group dimension.
"""

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhi(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    t = a_lo * b_lo
    w = a_hi * b_lo + (t >> _S32)
    y = a_lo * b_hi + (w & _MASK32)
    return a_hi * b_hi + (w >> _S32) + (y >> _S32)


def _shoup_mul(x, w, w_sh, q):
    r = w * x - _mulhi(w_sh, x) * q
    return np.where(r >= q, r - q, r)


def _redc(lo, hi, q, qinv):
    m = lo * qinv
    t = hi + _mulhi(m, q) + (lo != np.uint64(0)).astype(np.uint64)
    return np.where(t >= q, t - q, t)


def ntt_forward_batch(rows, psi, psi_sh, qs):
    n = rows.shape[1]
    for k in range(rows.shape[0]):
        a = rows[k]
        q = qs[k]
        t = n
        m = 1
        while m < n:
            t >>= 1
            w = psi[k, m : 2 * m, None]
            w_sh = psi_sh[k, m : 2 * m, None]
            blk = a.reshape(m, 2 * t)
            u = blk[:, :t]
            v = _shoup_mul(blk[:, t:], w, w_sh, q)
            x = u + v
            y = u + q - v
            blk[:, :t] = np.where(x >= q, x - q, x)
            blk[:, t:] = np.where(y >= q, y - q, y)
            m <<= 1


def ntt_inverse_batch(rows, ipsi, ipsi_sh, qs, n_invs, n_inv_shs):
    n = rows.shape[1]
    for k in range(rows.shape[0]):
        a = rows[k]
        q = qs[k]
        t = 1
        m = n
        while m > 1:
            h = m >> 1
            w = ipsi[k, h : 2 * h, None]
            w_sh = ipsi_sh[k, h : 2 * h, None]
            blk = a.reshape(h, 2 * t)
            u = blk[:, :t]
            v = blk[:, t:]
            x = u + v
            d = u + q - v
            d = np.where(d >= q, d - q, d)
            blk[:, :t] = np.where(x >= q, x - q, x)
            blk[:, t:] = _shoup_mul(d, w, w_sh, q)
            t <<= 1
            m = h
        a[:] = _shoup_mul(a, n_invs[k], n_inv_shs[k], q)


def pointwise_mul_batch(a, b, out, qs, qinvs, r2s):
    q = qs[:, None]
    qinv = qinvs[:, None]
    r2 = r2s[:, None]
    t = _redc(a * b, _mulhi(a, b), q, qinv)
    out[:] = _redc(t * r2, _mulhi(t, r2), q, qinv)


def add_batch(a, b, out, qs):
    q = qs[:, None]
    s = a + b
    out[:] = np.where(s >= q, s - q, s)


def sub_batch(a, b, out, qs):
    q = qs[:, None]
    s = a + q - b
    out[:] = np.where(s >= q, s - q, s)


def neg_batch(a, out, qs):
    q = qs[:, None]
    out[:] = np.where(a == np.uint64(0), np.uint64(0), q - a)


def mul_scalar_batch(a, out, ws, w_shs, qs):
    out[:] = _shoup_mul(a, ws[:, None], w_shs[:, None], qs[:, None])


def reduce_signed_batch(coeffs, out, qs):
    for k in range(out.shape[0]):
        out[k] = np.mod(coeffs, np.int64(qs[k])).astype(np.uint64)
