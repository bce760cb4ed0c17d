"""Numba-jitted negacyclic NTT kernels over 64-bit prime fields.

All kernels are batched over the RNS dimension: arrays are (L, N) uint64
with one row per prime, and per-prime constants arrive as (L,) arrays.
Rows are independent; loops stay serial (kernels target single-core boxes
and fed may parallelize across clients above us).

Arithmetic notes (shared with the numpy twin):
  - twiddle multiplies use Shoup's precomputed-quotient trick
        w*x mod q = lo(w*x) - hi(w_shoup*x)*q, one conditional subtract,
    valid for q < 2^62;
  - general products (both operands varying) use Montgomery REDC twice,
    with qinv = -q^{-1} mod 2^64 and r2 = 2^128 mod q;
  - 64x64 -> high 64 bits is built from 32-bit limbs since neither numba
    nor numpy exposes a 128-bit type.

The transform pair is the standard decimation Cooley-Tukey forward /
Gentleman-Sande inverse with the 2N-th root powers folded in (tables are
stored in bit-reversed order), so X^N = -1 wraparound needs no separate
pre/post twist.
"""

from numba import njit, uint64

_MASK32 = uint64(0xFFFFFFFF)


@njit(uint64(uint64, uint64), cache=True, inline="always")
def _mulhi(a, b):
    a_lo = a & _MASK32
    a_hi = a >> uint64(32)
    b_lo = b & _MASK32
    b_hi = b >> uint64(32)
    t = a_lo * b_lo
    w = a_hi * b_lo + (t >> uint64(32))
    y = a_lo * b_hi + (w & _MASK32)
    return a_hi * b_hi + (w >> uint64(32)) + (y >> uint64(32))


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _shoup_mul(x, w, w_sh, q):
    r = w * x - _mulhi(w_sh, x) * q
    if r >= q:
        r -= q
    return r


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _redc(lo, hi, q, qinv):
    m = lo * qinv
    t = hi + _mulhi(m, q)
    if lo != uint64(0):
        t += uint64(1)
    if t >= q:
        t -= q
    return t


@njit(cache=True)
def ntt_forward_batch(rows, psi, psi_sh, qs):
    n = rows.shape[1]
    for k in range(rows.shape[0]):
        a = rows[k]
        p = psi[k]
        p_sh = psi_sh[k]
        q = qs[k]
        t = n
        m = 1
        while m < n:
            t >>= 1
            for i in range(m):
                w = p[m + i]
                w_sh = p_sh[m + i]
                j1 = 2 * i * t
                for j in range(j1, j1 + t):
                    u = a[j]
                    v = _shoup_mul(a[j + t], w, w_sh, q)
                    x = u + v
                    if x >= q:
                        x -= q
                    y = u + q - v
                    if y >= q:
                        y -= q
                    a[j] = x
                    a[j + t] = y
            m <<= 1


@njit(cache=True)
def ntt_inverse_batch(rows, ipsi, ipsi_sh, qs, n_invs, n_inv_shs):
    n = rows.shape[1]
    for k in range(rows.shape[0]):
        a = rows[k]
        p = ipsi[k]
        p_sh = ipsi_sh[k]
        q = qs[k]
        t = 1
        m = n
        while m > 1:
            h = m >> 1
            j1 = 0
            for i in range(h):
                w = p[h + i]
                w_sh = p_sh[h + i]
                for j in range(j1, j1 + t):
                    u = a[j]
                    v = a[j + t]
                    x = u + v
                    if x >= q:
                        x -= q
                    a[j] = x
                    d = u + q - v
                    if d >= q:
                        d -= q
                    a[j + t] = _shoup_mul(d, w, w_sh, q)
                j1 += 2 * t
            t <<= 1
            m = h
        n_inv = n_invs[k]
        n_inv_sh = n_inv_shs[k]
        for j in range(n):
            a[j] = _shoup_mul(a[j], n_inv, n_inv_sh, q)


@njit(cache=True)
def pointwise_mul_batch(a, b, out, qs, qinvs, r2s):
    for k in range(a.shape[0]):
        q = qs[k]
        qinv = qinvs[k]
        r2 = r2s[k]
        for j in range(a.shape[1]):
            x = a[k, j]
            y = b[k, j]
            t = _redc(x * y, _mulhi(x, y), q, qinv)
            out[k, j] = _redc(t * r2, _mulhi(t, r2), q, qinv)


@njit(cache=True)
def add_batch(a, b, out, qs):
    for k in range(a.shape[0]):
        q = qs[k]
        for j in range(a.shape[1]):
            s = a[k, j] + b[k, j]
            if s >= q:
                s -= q
            out[k, j] = s


@njit(cache=True)
def sub_batch(a, b, out, qs):
    for k in range(a.shape[0]):
        q = qs[k]
        for j in range(a.shape[1]):
            s = a[k, j] + q - b[k, j]
            if s >= q:
                s -= q
            out[k, j] = s


@njit(cache=True)
def neg_batch(a, out, qs):
    for k in range(a.shape[0]):
        q = qs[k]
        for j in range(a.shape[1]):
            v = a[k, j]
            out[k, j] = uint64(0) if v == uint64(0) else q - v


@njit(cache=True)
def mul_scalar_batch(a, out, ws, w_shs, qs):
    for k in range(a.shape[0]):
        q = qs[k]
        w = ws[k]
        w_sh = w_shs[k]
        for j in range(a.shape[1]):
            out[k, j] = _shoup_mul(a[k, j], w, w_sh, q)


@njit(cache=True)
def reduce_signed_batch(coeffs, out, qs):
    """Lift signed int64 coefficients into residue rows."""
    for k in range(out.shape[0]):
        q = int(qs[k])
        for j in range(coeffs.shape[0]):
            r = coeffs[j] % q
            if r < 0:
                r += q
            out[k, j] = uint64(r)
