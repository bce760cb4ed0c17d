"""Exact arithmetic in the negacyclic ring Z_Q[X]/(X^N + 1), RNS form.

A polynomial lives as one residue row per active prime, either in
coefficient form or in the NTT (evaluation) domain. All values are
immutable after construction; every operation returns a fresh poly, so
ring values can be shared freely across worker threads.

Primes are scanned deterministically: the first prime >= 2^bits with
q = 1 (mod 2N), so the same requested sizes always produce the same
context. The seeded samplers are deliberately *not* cryptographic; this
artifact measures cost and correctness, not security.
"""

from dataclasses import dataclass
from math import exp

import gmpy2
import numpy as np

from .backend import kernels

_K = kernels()


class RingError(Exception):
    """Structural mismatch between ring operands (degree/primes/domain)."""


class LevelExhaustedError(RingError):
    """No prime left to drop."""


# ---------------------------------------------------------------------------
# primes and per-prime NTT tables


def is_ntt_prime(q, degree):
    return q % (2 * degree) == 1 and gmpy2.is_prime(q)


def generate_primes(degree, bit_sizes):
    """First-fit upward scan: for each requested size, the smallest unused
    prime >= 2^bits congruent to 1 mod 2N."""
    step = 2 * degree
    found = []
    for bits in bit_sizes:
        if bits < 4 or bits > 61:
            raise ValueError(f"prime bit size {bits} outside supported range [4, 61]")
        cand = (1 << bits) + 1
        while cand in found or not is_ntt_prime(cand, degree):
            cand += step
        found.append(cand)
    return tuple(found)


@dataclass(frozen=True)
class ModulusChain:
    """Distinct NTT-friendly primes; their product is the ciphertext modulus."""

    primes: tuple
    bit_sizes: tuple

    def __post_init__(self):
        if len(self.primes) != len(set(self.primes)):
            raise ValueError("modulus chain primes must be pairwise distinct")

    @classmethod
    def generate(cls, degree, bit_sizes):
        return cls(primes=generate_primes(degree, bit_sizes), bit_sizes=tuple(bit_sizes))

    def __len__(self):
        return len(self.primes)

    def modulus(self, level=None):
        level = len(self.primes) if level is None else level
        q = 1
        for p in self.primes[:level]:
            q *= p
        return q


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _find_2n_root(q, degree):
    """Deterministic smallest base whose ((q-1)/2N)-th power has order 2N."""
    two_n = 2 * degree
    e = (q - 1) // two_n
    for base in range(2, 1000):
        c = pow(base, e, q)
        if pow(c, degree, q) == q - 1:
            return c
    raise RingError(f"no 2N-th root found for q={q}")  # unreachable for valid primes


def _shoup(w, q):
    return (w << 64) // q


@dataclass(frozen=True)
class StackedTables:
    """Per-prime NTT/Montgomery constants stacked along the RNS axis."""

    qs: np.ndarray        # (L,) uint64
    psi: np.ndarray       # (L, N) 2N-th root powers, bit-reversed order
    psi_sh: np.ndarray
    ipsi: np.ndarray
    ipsi_sh: np.ndarray
    n_invs: np.ndarray    # (L,)
    n_inv_shs: np.ndarray
    qinvs: np.ndarray     # (L,) -q^{-1} mod 2^64
    r2s: np.ndarray       # (L,) 2^128 mod q


_PRIME_TABLES = {}
_STACKED_TABLES = {}


def _prime_tables(q, degree):
    """Single-prime rows; chain subsets share these (rescale reuses them)."""
    key = (q, degree)
    row = _PRIME_TABLES.get(key)
    if row is None:
        rev = _bit_reverse_indices(degree)
        root = _find_2n_root(q, degree)
        iroot = pow(root, -1, q)
        fwd, inv = [0] * degree, [0] * degree
        w, iw = 1, 1
        for j in range(degree):
            fwd[j], inv[j] = w, iw
            w = (w * root) % q
            iw = (iw * iroot) % q
        psi = np.empty(degree, dtype=np.uint64)
        psi_sh = np.empty(degree, dtype=np.uint64)
        ipsi = np.empty(degree, dtype=np.uint64)
        ipsi_sh = np.empty(degree, dtype=np.uint64)
        for j in range(degree):
            f, i = fwd[rev[j]], inv[rev[j]]
            psi[j] = f
            psi_sh[j] = _shoup(f, q)
            ipsi[j] = i
            ipsi_sh[j] = _shoup(i, q)
        n_inv = pow(degree, -1, q)
        row = (psi, psi_sh, ipsi, ipsi_sh, n_inv, _shoup(n_inv, q),
               (-pow(q, -1, 1 << 64)) % (1 << 64), (1 << 128) % q)
        _PRIME_TABLES[key] = row
    return row


def tables_for(primes, degree):
    key = (tuple(primes), degree)
    tab = _STACKED_TABLES.get(key)
    if tab is None:
        rows = [_prime_tables(q, degree) for q in primes]
        tab = StackedTables(
            qs=np.array(primes, dtype=np.uint64),
            psi=np.stack([r[0] for r in rows]),
            psi_sh=np.stack([r[1] for r in rows]),
            ipsi=np.stack([r[2] for r in rows]),
            ipsi_sh=np.stack([r[3] for r in rows]),
            n_invs=np.array([r[4] for r in rows], dtype=np.uint64),
            n_inv_shs=np.array([r[5] for r in rows], dtype=np.uint64),
            qinvs=np.array([r[6] for r in rows], dtype=np.uint64),
            r2s=np.array([r[7] for r in rows], dtype=np.uint64),
        )
        _STACKED_TABLES[key] = tab
    return tab


# ---------------------------------------------------------------------------
# RNS polynomials


@dataclass(frozen=True)
class RnsPoly:
    """Residue rows (one per active prime), coefficient or NTT domain."""

    primes: tuple
    data: np.ndarray  # (level, degree) uint64, read-only
    ntt: bool

    def __post_init__(self):
        if self.data.dtype != np.uint64 or self.data.ndim != 2:
            raise RingError("RnsPoly data must be a (level, degree) uint64 array")
        if self.data.shape[0] != len(self.primes):
            raise RingError("residue row count does not match prime count")
        n = self.data.shape[1]
        if n < 2 or n & (n - 1):
            raise RingError(f"degree must be a power of two >= 2, got {n}")
        self.data.setflags(write=False)

    @property
    def degree(self):
        return self.data.shape[1]

    @property
    def level(self):
        return len(self.primes)

    def restrict(self, level):
        """Projection onto the first `level` primes."""
        if not 1 <= level <= self.level:
            raise RingError(f"cannot restrict level-{self.level} poly to level {level}")
        return RnsPoly(self.primes[:level], self.data[:level].copy(), self.ntt)


def zero(primes, degree, ntt=False):
    return RnsPoly(tuple(primes), np.zeros((len(primes), degree), dtype=np.uint64), ntt)


def from_signed_coeffs(coeffs, primes, degree):
    """Lift signed integer coefficients into every residue row."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.int64)
    if coeffs.shape != (degree,):
        raise RingError(f"expected {degree} coefficients, got {coeffs.shape}")
    tab = tables_for(primes, degree)
    rows = np.empty((len(primes), degree), dtype=np.uint64)
    _K.reduce_signed_batch(coeffs, rows, tab.qs)
    return RnsPoly(tuple(primes), rows, ntt=False)


def constant(value, primes, degree, ntt=False):
    """The constant polynomial `value` (an integer)."""
    rows = np.zeros((len(primes), degree), dtype=np.uint64)
    for i, q in enumerate(primes):
        rows[i, 0] = value % q
    poly = RnsPoly(tuple(primes), rows, ntt=False)
    return to_ntt(poly) if ntt else poly


def _check_pair(a, b):
    if a.degree != b.degree:
        raise RingError(f"degree mismatch: {a.degree} vs {b.degree}")
    if a.primes != b.primes:
        raise RingError("active prime sets differ")
    if a.ntt != b.ntt:
        raise RingError("domain mismatch (coefficient vs NTT form)")


def add(a, b):
    _check_pair(a, b)
    out = np.empty_like(a.data)
    _K.add_batch(a.data, b.data, out, tables_for(a.primes, a.degree).qs)
    return RnsPoly(a.primes, out, a.ntt)


def sub(a, b):
    _check_pair(a, b)
    out = np.empty_like(a.data)
    _K.sub_batch(a.data, b.data, out, tables_for(a.primes, a.degree).qs)
    return RnsPoly(a.primes, out, a.ntt)


def negate(a):
    out = np.empty_like(a.data)
    _K.neg_batch(a.data, out, tables_for(a.primes, a.degree).qs)
    return RnsPoly(a.primes, out, a.ntt)


def to_ntt(a):
    if a.ntt:
        return a
    tab = tables_for(a.primes, a.degree)
    out = a.data.copy()
    _K.ntt_forward_batch(out, tab.psi, tab.psi_sh, tab.qs)
    return RnsPoly(a.primes, out, ntt=True)


def from_ntt(a):
    if not a.ntt:
        return a
    tab = tables_for(a.primes, a.degree)
    out = a.data.copy()
    _K.ntt_inverse_batch(out, tab.ipsi, tab.ipsi_sh, tab.qs, tab.n_invs, tab.n_inv_shs)
    return RnsPoly(a.primes, out, ntt=False)


def pointwise_mul(a, b):
    """Slotwise product of two NTT-domain polys."""
    _check_pair(a, b)
    if not a.ntt:
        raise RingError("pointwise_mul requires NTT-domain operands")
    tab = tables_for(a.primes, a.degree)
    out = np.empty_like(a.data)
    _K.pointwise_mul_batch(a.data, b.data, out, tab.qs, tab.qinvs, tab.r2s)
    return RnsPoly(a.primes, out, ntt=True)


def negacyclic_mul(a, b):
    """Product in Z_q[X]/(X^N+1): forward NTT, slotwise multiply, inverse NTT.

    NTT-domain inputs multiply slotwise and stay in the NTT domain;
    coefficient-domain inputs round-trip through the transform.
    """
    _check_pair(a, b)
    if a.ntt:
        return pointwise_mul(a, b)
    return from_ntt(pointwise_mul(to_ntt(a), to_ntt(b)))


def drop_last_prime(a, round_result):
    """Remove the last residue row; with round_result, divide-and-round by it.

    Rounding uses the standard RNS rescale correction: subtract the
    centered remainder mod q_last from every remaining row, then multiply
    by q_last^{-1}. Result is within +-1 of the true rounded quotient.
    """
    if a.level < 2:
        raise LevelExhaustedError("cannot drop the only remaining prime")
    if not round_result:
        return RnsPoly(a.primes[:-1], a.data[:-1].copy(), a.ntt)
    if a.ntt:
        raise RingError("rounding drop requires a coefficient-domain poly")
    q_last = a.primes[-1]
    half = q_last // 2
    keep = a.primes[:-1]
    tab = tables_for(keep, a.degree)
    last = a.data[-1].astype(np.int64)
    centered = np.where(last > half, last - q_last, last)
    diff = np.empty((len(keep), a.degree), dtype=np.uint64)
    if half < min(keep):
        # |centered| < every kept prime: two corrections replace the division.
        for i, q in enumerate(keep):
            d = a.data[i].astype(np.int64) - centered
            d = np.where(d < 0, d + q, d)
            d = np.where(d >= q, d - q, d)
            diff[i] = d.astype(np.uint64)
    else:
        for i, q in enumerate(keep):
            diff[i] = np.mod(a.data[i].astype(np.int64) - centered, q).astype(np.uint64)
    invs = np.array([pow(q_last, -1, q) for q in keep], dtype=np.uint64)
    inv_shs = np.array([_shoup(pow(q_last, -1, q), q) for q in keep], dtype=np.uint64)
    out = np.empty_like(diff)
    _K.mul_scalar_batch(diff, out, invs, inv_shs, tab.qs)
    return RnsPoly(keep, out, ntt=False)


# ---------------------------------------------------------------------------
# samplers (seeded, deterministic; not hardened)

_GAUSS_TABLES = {}


def _gaussian_table(sigma, tail_cut):
    key = (sigma, tail_cut)
    tab = _GAUSS_TABLES.get(key)
    if tab is None:
        bound = int(tail_cut * sigma)
        support = np.arange(-bound, bound + 1, dtype=np.int64)
        weights = np.array([exp(-(x * x) / (2.0 * sigma * sigma)) for x in support])
        tab = (support, np.cumsum(weights / weights.sum()))
        _GAUSS_TABLES[key] = tab
    return tab


def sample_poly(kind, primes, degree, rng, sigma=3.2, tail_cut=6.0):
    """uniform: residues uniform per prime; ternary: shared {-1,0,1} vector;
    gaussian: shared discrete gaussian, truncated at tail_cut*sigma."""
    primes = tuple(primes)
    if kind == "uniform":
        rows = np.empty((len(primes), degree), dtype=np.uint64)
        for i, q in enumerate(primes):
            rows[i] = rng.integers(0, q, size=degree, dtype=np.uint64)
        return RnsPoly(primes, rows, ntt=False)
    if kind == "ternary":
        coeffs = rng.integers(-1, 2, size=degree, dtype=np.int64)
        return from_signed_coeffs(coeffs, primes, degree)
    if kind == "gaussian":
        if sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        support, cdf = _gaussian_table(sigma, tail_cut)
        draws = support[np.searchsorted(cdf, rng.random(degree))]
        return from_signed_coeffs(draws, primes, degree)
    raise ValueError(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# big-integer CRT (test oracles and the rare wide-coefficient decode path)


def crt_lift_centered(a):
    """Reconstruct centered integer coefficients via big-int CRT.

    Off the hot path by design: used by oracles and as the decode
    fallback when coefficients exceed the leading prime.
    """
    poly = from_ntt(a)
    q_full = 1
    for p in poly.primes:
        q_full *= p
    total = [0] * poly.degree
    for i, p in enumerate(poly.primes):
        m = q_full // p
        m_inv = pow(m % p, -1, p)
        factor = m * m_inv
        row = poly.data[i]
        for j in range(poly.degree):
            total[j] = (total[j] + int(row[j]) * factor) % q_full
    half = q_full // 2
    return [v - q_full if v > half else v for v in total]
