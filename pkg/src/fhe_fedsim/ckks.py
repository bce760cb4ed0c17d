"""CKKS-style approximate encryption for real vectors: keygen, canonical
embedding encode/decode, RLWE encrypt/decrypt, and the homomorphic ops an
encrypted weighted average needs (add, plain multiply, rescale).

Conventions pinned here:
  - The working modulus chain is the configured chain reordered by bit
    size, largest first, so rescale always drops the smallest remaining
    prime; with the default {60,40,40,60} request the first rescale
    divides by a ~2^40 prime and the post-rescale scale lands back at
    the encoding scale.
  - Ciphertext and plaintext polynomials are stored in the NTT domain;
    the serialized wire format carries NTT-domain residues.
  - Plaintext multipliers that will be consumed by a following rescale
    should be encoded at scale = `context.rescale_prime(level)` so the
    rescaled scale is exactly delta (see `fed.fedavg_encrypted`).
  - Slots follow the standard orbit-of-5 ordering of the primitive
    2N-th roots; encode/decode are two length-2N FFTs.

There is no relinearization, rotation, or bootstrapping here: a weighted
average needs no ciphertext-by-ciphertext product. Randomness is seeded
and reproducible by design, which also means it is not IND-CPA grade.
"""

import contextvars
import struct
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import ring
from .constants import (
    DEFAULT_BIT_SIZES,
    DEFAULT_DEGREE,
    DEFAULT_SCALE_LOG2,
    GAUSSIAN_SIGMA,
    GAUSSIAN_TAIL_CUT,
    SCALE_MATCH_REL_TOL,
)


class CkksError(Exception):
    pass


class CapacityError(CkksError):
    """More values than slots."""


class SerializationError(CkksError):
    """Malformed ciphertext bytes."""


WIRE_VERSION = 1
HEADER_SIZE = 17  # version byte, u32 degree, u32 level, f64 log2(scale)

_INT64_SAFE = float(1 << 62)


# ---------------------------------------------------------------------------
# secret-key access accounting (protocol-hygiene instrumentation)

_ROLE = contextvars.ContextVar("fhe_fedsim_role", default="<unscoped>")
_SECRET_ACCESSES = Counter()


@contextmanager
def role_scope(name):
    """Tag secret-key uses inside the block with `name` (per-thread)."""
    token = _ROLE.set(name)
    try:
        yield
    finally:
        _ROLE.reset(token)


def current_role():
    return _ROLE.get()


def secret_key_accesses():
    return dict(_SECRET_ACCESSES)


def reset_secret_key_accesses():
    _SECRET_ACCESSES.clear()


def _note_secret_access():
    _SECRET_ACCESSES[_ROLE.get()] += 1


# ---------------------------------------------------------------------------
# context and keys

_ROT_CACHE = {}


def _rot_indices(degree):
    """Slot j reads the root 5^j mod 2N (conjugates fill the other half)."""
    rot = _ROT_CACHE.get(degree)
    if rot is None:
        two_n = 2 * degree
        rot = np.empty(degree // 2, dtype=np.int64)
        r = 1
        for j in range(degree // 2):
            rot[j] = r
            r = (r * 5) % two_n
        _ROT_CACHE[degree] = rot
    return rot


@dataclass(frozen=True)
class CkksContext:
    degree: int
    chain: ring.ModulusChain
    delta: float
    configured_bit_sizes: tuple

    @classmethod
    def create(cls, degree=DEFAULT_DEGREE, bit_sizes=DEFAULT_BIT_SIZES,
               scale_log2=DEFAULT_SCALE_LOG2):
        if degree < 8 or degree & (degree - 1):
            raise CkksError(f"degree must be a power of two >= 8, got {degree}")
        if len(bit_sizes) < 2:
            raise CkksError("need at least two primes (one droppable)")
        # Largest first (stable), so the smallest prime is dropped first.
        working = tuple(sorted(bit_sizes, reverse=True))
        chain = ring.ModulusChain.generate(degree, working)
        delta = float(2.0 ** scale_log2)
        for q in chain.primes[1:]:
            if delta >= q:
                raise CkksError(
                    f"scale 2^{scale_log2} must stay below every droppable prime "
                    f"(violated by {q})")
        return cls(degree=degree, chain=chain, delta=delta,
                   configured_bit_sizes=tuple(bit_sizes))

    @property
    def slot_count(self):
        return self.degree // 2

    @property
    def max_level(self):
        return len(self.chain)

    def primes_at(self, level):
        if not 1 <= level <= self.max_level:
            raise CkksError(f"level {level} outside [1, {self.max_level}]")
        return self.chain.primes[:level]

    def rescale_prime(self, level):
        """The prime a rescale at `level` divides by."""
        return self.chain.primes[level - 1]


@dataclass(frozen=True)
class SecretKey:
    s: ring.RnsPoly  # ternary, NTT domain, full chain


@dataclass(frozen=True)
class PublicKey:
    b: ring.RnsPoly  # -a*s + e, NTT domain, full chain
    a: ring.RnsPoly


@dataclass(frozen=True)
class Plaintext:
    poly: ring.RnsPoly
    scale: float
    level: int

    def __post_init__(self):
        if self.scale <= 0:
            raise CkksError("plaintext scale must be positive")
        if self.level != self.poly.level:
            raise CkksError("plaintext level disagrees with its polynomial")


@dataclass(frozen=True)
class Ciphertext:
    c0: ring.RnsPoly
    c1: ring.RnsPoly
    scale: float
    level: int

    def __post_init__(self):
        if self.c0.primes != self.c1.primes:
            raise CkksError("ciphertext components live at different levels")
        if self.level != self.c0.level:
            raise CkksError("ciphertext level disagrees with its polynomials")
        if self.scale <= 0:
            raise CkksError("ciphertext scale must be positive")

    @property
    def degree(self):
        return self.c0.degree


def _uniform_ntt(primes, degree, rng):
    # Uniform residues are uniform in either domain; tag directly as NTT.
    rows = np.empty((len(primes), degree), dtype=np.uint64)
    for i, q in enumerate(primes):
        rows[i] = rng.integers(0, q, size=degree, dtype=np.uint64)
    return ring.RnsPoly(tuple(primes), rows, ntt=True)


def _gaussian_ntt(primes, degree, rng):
    e = ring.sample_poly("gaussian", primes, degree, rng,
                         sigma=GAUSSIAN_SIGMA, tail_cut=GAUSSIAN_TAIL_CUT)
    return ring.to_ntt(e)


def keygen(ctx, rng):
    primes = ctx.chain.primes
    s = ring.to_ntt(ring.sample_poly("ternary", primes, ctx.degree, rng))
    a = _uniform_ntt(primes, ctx.degree, rng)
    e = _gaussian_ntt(primes, ctx.degree, rng)
    b = ring.sub(e, ring.pointwise_mul(a, s))
    return SecretKey(s=s), PublicKey(b=b, a=a)


# ---------------------------------------------------------------------------
# encode / decode via the canonical embedding


def encode(values, ctx, level=None, scale=None):
    level = ctx.max_level if level is None else level
    scale = ctx.delta if scale is None else float(scale)
    if scale <= 0:
        raise CkksError("encoding scale must be positive")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise CkksError("encode expects a 1-D vector")
    if values.shape[0] > ctx.slot_count:
        raise CapacityError(
            f"{values.shape[0]} values exceed {ctx.slot_count} slots; "
            "chunk before encoding")
    n = ctx.degree
    rot = _rot_indices(n)
    w = np.zeros(2 * n, dtype=np.complex128)
    w[rot[: values.shape[0]]] = values
    w[2 * n - rot[: values.shape[0]]] = values  # conj of a real value
    coeffs = np.fft.fft(w)[:n].real / n * scale
    primes = ctx.primes_at(level)
    peak = float(np.max(np.abs(coeffs))) if n else 0.0
    if peak < _INT64_SAFE:
        poly = ring.from_signed_coeffs(np.rint(coeffs).astype(np.int64), primes, n)
    else:
        # Wide-coefficient path (huge scales): exact residues from python ints.
        ints = [int(round(c)) for c in coeffs]
        rows = np.empty((len(primes), n), dtype=np.uint64)
        for i, q in enumerate(primes):
            rows[i] = np.array([c % q for c in ints], dtype=np.uint64)
        poly = ring.RnsPoly(tuple(primes), rows, ntt=False)
    return Plaintext(poly=ring.to_ntt(poly), scale=scale, level=level)


def _centered_coeffs(poly):
    """Centered integer coefficients as float64.

    Fast path reads the leading (largest) prime's row and cross-checks it
    against the other rows; inconsistency means the value does not fit
    under the leading prime and we fall back to big-int CRT.
    """
    q0 = poly.primes[0]
    r0 = poly.data[0].astype(np.int64)
    centered = np.where(r0 > q0 // 2, r0 - q0, r0)
    for i, q in enumerate(poly.primes[1:], start=1):
        if not np.array_equal(np.mod(centered, q).astype(np.uint64), poly.data[i]):
            return np.array(ring.crt_lift_centered(poly), dtype=np.float64)
    return centered.astype(np.float64)


def decode(pt, ctx):
    poly = ring.from_ntt(pt.poly)
    n = ctx.degree
    coeffs = _centered_coeffs(poly)
    evals = np.conj(np.fft.fft(coeffs, 2 * n))
    return evals[_rot_indices(n)].real / pt.scale


# ---------------------------------------------------------------------------
# encrypt / decrypt and homomorphic operations


def encrypt(pt, pk, rng):
    level = pt.level
    primes = pt.poly.primes
    degree = pt.poly.degree
    u = ring.to_ntt(ring.sample_poly("ternary", primes, degree, rng))
    e0 = _gaussian_ntt(primes, degree, rng)
    e1 = _gaussian_ntt(primes, degree, rng)
    b = pk.b.restrict(level)
    a = pk.a.restrict(level)
    c0 = ring.add(ring.add(ring.pointwise_mul(b, u), e0), pt.poly)
    c1 = ring.add(ring.pointwise_mul(a, u), e1)
    return Ciphertext(c0=c0, c1=c1, scale=pt.scale, level=level)


def decrypt(ct, sk):
    _note_secret_access()
    s = sk.s.restrict(ct.level)
    m = ring.add(ct.c0, ring.pointwise_mul(ct.c1, s))
    return Plaintext(poly=ring.from_ntt(m), scale=ct.scale, level=ct.level)


def _scales_match(x, y):
    return abs(x - y) <= SCALE_MATCH_REL_TOL * max(abs(x), abs(y))


def ct_add(x, y):
    if x.level != y.level:
        raise CkksError(f"level mismatch: {x.level} vs {y.level}")
    if not _scales_match(x.scale, y.scale):
        raise CkksError(f"scale mismatch: {x.scale} vs {y.scale}")
    return Ciphertext(c0=ring.add(x.c0, y.c0), c1=ring.add(x.c1, y.c1),
                      scale=x.scale, level=x.level)


def ct_mul_plain(x, w):
    if x.level != w.level:
        raise CkksError(f"level mismatch: ciphertext {x.level}, plaintext {w.level}")
    return Ciphertext(c0=ring.pointwise_mul(x.c0, w.poly),
                      c1=ring.pointwise_mul(x.c1, w.poly),
                      scale=x.scale * w.scale, level=x.level)


def rescale(ct, ctx):
    if ct.level < 2:
        raise ring.LevelExhaustedError("rescale needs at least two active primes")
    q_last = ctx.rescale_prime(ct.level)
    c0 = ring.to_ntt(ring.drop_last_prime(ring.from_ntt(ct.c0), round_result=True))
    c1 = ring.to_ntt(ring.drop_last_prime(ring.from_ntt(ct.c1), round_result=True))
    return Ciphertext(c0=c0, c1=c1, scale=ct.scale / q_last, level=ct.level - 1)


# ---------------------------------------------------------------------------
# wire format


def serialized_size(ct):
    return HEADER_SIZE + 2 * ct.level * ct.degree * 8


def serialize(ct):
    """Versioned header (degree, level, log2 scale) + NTT-domain residues as
    little-endian 8-byte words, c0 rows then c1 rows."""
    header = struct.pack("<BIId", WIRE_VERSION, ct.degree, ct.level,
                         float(np.log2(ct.scale)))
    body = ct.c0.data.astype("<u8", copy=False).tobytes() + \
        ct.c1.data.astype("<u8", copy=False).tobytes()
    return header + body


def deserialize(data, ctx):
    if len(data) < HEADER_SIZE:
        raise SerializationError("truncated ciphertext header")
    version, degree, level, log2_scale = struct.unpack_from("<BIId", data, 0)
    if version != WIRE_VERSION:
        raise SerializationError(f"unsupported wire version {version}")
    if degree != ctx.degree:
        raise SerializationError(f"degree {degree} does not match context {ctx.degree}")
    if not 1 <= level <= ctx.max_level:
        raise SerializationError(f"level {level} outside context chain")
    expected = HEADER_SIZE + 2 * level * degree * 8
    if len(data) != expected:
        raise SerializationError(f"expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<u8", offset=HEADER_SIZE)
    rows = flat.reshape(2, level, degree).astype(np.uint64)
    primes = ctx.primes_at(level)
    for i, q in enumerate(primes):
        if rows[0, i].max(initial=0) >= q or rows[1, i].max(initial=0) >= q:
            raise SerializationError(f"residues not reduced mod prime {q}")
    c0 = ring.RnsPoly(tuple(primes), rows[0].copy(), ntt=True)
    c1 = ring.RnsPoly(tuple(primes), rows[1].copy(), ntt=True)
    return Ciphertext(c0=c0, c1=c1, scale=float(2.0 ** log2_scale), level=level)
