import numpy as np
import pytest
import scipy.stats

from fhe_fedsim import ckks, ring
from fhe_fedsim.constants import (
    ENCODE_ROUNDTRIP_TOL,
    FRESH_ENCRYPT_TOL,
    HOMOMORPHIC_OP_TOL,
    SCALE_MATCH_REL_TOL,
)


def enc(ctx, pk, values, rng, scale=None):
    return ckks.encrypt(ckks.encode(values, ctx, scale=scale), pk, rng)


def dec(ctx, sk, ct):
    return ckks.decode(ckks.decrypt(ct, sk), ctx)


# ---------------------------------------------------------------------------
# context


def test_context_defaults(ctx):
    assert ctx.degree == 8192
    assert ctx.slot_count == 4096
    assert ctx.delta == 2.0**40
    assert ctx.configured_bit_sizes == (60, 40, 40, 60)
    assert sorted(ctx.chain.bit_sizes, reverse=True) == [60, 60, 40, 40]
    # rescale validity: the scale stays below every droppable prime
    for q in ctx.chain.primes[1:]:
        assert ctx.delta < q
    # first rescale divides by a ~2^40 prime
    assert abs(np.log2(ctx.rescale_prime(ctx.max_level)) - 40) < 0.01


def test_context_rejects_bad_shapes():
    with pytest.raises(ckks.CkksError):
        ckks.CkksContext.create(degree=100)
    with pytest.raises(ckks.CkksError):
        ckks.CkksContext.create(degree=64, bit_sizes=(40,))
    with pytest.raises(ckks.CkksError):
        # scale above the droppable primes breaks rescaling
        ckks.CkksContext.create(degree=64, bit_sizes=(50, 30, 30, 50), scale_log2=35)


# ---------------------------------------------------------------------------
# encode / decode


def test_encode_zero_vector_is_zero_polynomial(ctx):
    pt = ckks.encode(np.zeros(ctx.slot_count), ctx)
    assert not np.any(ring.from_ntt(pt.poly).data)
    assert np.max(np.abs(ckks.decode(pt, ctx))) == 0.0


def test_encode_decode_roundtrip(ctx):
    rng = np.random.default_rng(1)
    for _ in range(3):
        v = rng.uniform(-1, 1, ctx.slot_count)
        back = ckks.decode(ckks.encode(v, ctx), ctx)
        assert np.max(np.abs(back - v)) < ENCODE_ROUNDTRIP_TOL


def test_encode_decode_constants_up_to_1e3(ctx):
    for c in (1.0, -3.5, 999.0, -1000.0):
        v = np.full(ctx.slot_count, c)
        back = ckks.decode(ckks.encode(v, ctx), ctx)
        assert np.max(np.abs(back - c)) < ENCODE_ROUNDTRIP_TOL


def test_encode_capacity_error(ctx):
    with pytest.raises(ckks.CapacityError):
        ckks.encode(np.zeros(ctx.slot_count + 1), ctx)


def test_decode_respects_scale(ctx):
    # encoding at delta^2 still decodes to values, not raw integers
    rng = np.random.default_rng(2)
    v = rng.uniform(-1, 1, 16)
    pt = ckks.encode(v, ctx, scale=ctx.delta**2)
    assert pt.scale == ctx.delta**2
    back = ckks.decode(pt, ctx)[:16]
    assert np.max(np.abs(back - v)) < 1e-6


def test_short_vectors_pad_with_zeros(ctx):
    back = ckks.decode(ckks.encode(np.array([1.0, -2.0]), ctx), ctx)
    assert abs(back[0] - 1) < ENCODE_ROUNDTRIP_TOL
    assert abs(back[1] + 2) < ENCODE_ROUNDTRIP_TOL
    assert np.max(np.abs(back[2:])) < ENCODE_ROUNDTRIP_TOL


# ---------------------------------------------------------------------------
# keygen / encrypt / decrypt


def test_keygen_deterministic(ctx):
    sk1, pk1 = ckks.keygen(ctx, np.random.default_rng(5))
    sk2, pk2 = ckks.keygen(ctx, np.random.default_rng(5))
    assert np.array_equal(sk1.s.data, sk2.s.data)
    assert np.array_equal(pk1.a.data, pk2.a.data)
    assert np.array_equal(pk1.b.data, pk2.b.data)


def test_public_key_noise_is_small(ctx, keypair):
    # b + a*s unwinds to the error polynomial, bounded by the 6-sigma cut
    sk, pk = keypair
    e = ring.add(pk.b, ring.pointwise_mul(pk.a, sk.s))
    coeffs = ring.crt_lift_centered(ring.from_ntt(e).restrict(1))
    assert max(abs(c) for c in coeffs) <= 19


def test_encrypt_decrypt_zeros(ctx, keypair):
    sk, pk = keypair
    ct = enc(ctx, pk, np.zeros(ctx.slot_count), np.random.default_rng(3))
    assert np.max(np.abs(dec(ctx, sk, ct))) < FRESH_ENCRYPT_TOL


def test_encrypt_decrypt_random(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(4)
    v = rng.uniform(-1, 1, ctx.slot_count)
    ct = enc(ctx, pk, v, rng)
    assert ct.level == 4
    assert ct.scale == 2.0**40
    assert np.max(np.abs(dec(ctx, sk, ct) - v)) < FRESH_ENCRYPT_TOL


def test_fresh_ciphertext_uniformity_chi_square(ctx, keypair):
    # not a security proof: residue rows should look uniform at the 0.001 level
    _, pk = keypair
    rng = np.random.default_rng(6)
    ct = enc(ctx, pk, rng.uniform(-1, 1, ctx.slot_count), rng)
    for comp in (ct.c0, ct.c1):
        for row, q in zip(comp.data, comp.primes):
            counts, _ = np.histogram(row.astype(np.float64), bins=64, range=(0, float(q)))
            _, pvalue = scipy.stats.chisquare(counts)
            assert pvalue > 0.001


# ---------------------------------------------------------------------------
# homomorphic operations


def test_ct_add_identity(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(7)
    v = rng.uniform(-1, 1, ctx.slot_count)
    s = ckks.ct_add(enc(ctx, pk, v, rng), enc(ctx, pk, np.zeros(ctx.slot_count), rng))
    assert np.max(np.abs(dec(ctx, sk, s) - v)) < 2e-6


def test_ct_add_random_pairs(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(8)
    for _ in range(3):
        a = rng.uniform(-1, 1, ctx.slot_count)
        b = rng.uniform(-1, 1, ctx.slot_count)
        s = ckks.ct_add(enc(ctx, pk, a, rng), enc(ctx, pk, b, rng))
        assert np.max(np.abs(dec(ctx, sk, s) - (a + b))) < HOMOMORPHIC_OP_TOL


def test_twenty_ciphertext_sum(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(9)
    v = rng.uniform(-1, 1, ctx.slot_count)
    total = enc(ctx, pk, v, rng)
    for _ in range(19):
        total = ckks.ct_add(total, enc(ctx, pk, v, rng))
    assert np.max(np.abs(dec(ctx, sk, total) - 20 * v)) < 1e-4


def test_ct_mul_plain_identity_then_rescale(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(10)
    v = rng.uniform(-1, 1, ctx.slot_count)
    ct = enc(ctx, pk, v, rng)
    ones = ckks.encode(np.ones(ctx.slot_count), ctx, scale=ctx.rescale_prime(ct.level))
    out = ckks.rescale(ckks.ct_mul_plain(ct, ones), ctx)
    assert np.max(np.abs(dec(ctx, sk, out) - v)) < HOMOMORPHIC_OP_TOL


def test_ct_mul_plain_scale_contract(ctx, keypair):
    # default-encoded plaintext: product scale is exactly delta^2 before rescale
    _, pk = keypair
    rng = np.random.default_rng(11)
    ct = enc(ctx, pk, rng.uniform(-1, 1, 8), rng)
    w = ckks.encode(np.full(ctx.slot_count, 0.25), ctx)
    prod = ckks.ct_mul_plain(ct, w)
    assert prod.scale == ctx.delta**2
    assert prod.level == 4


def test_scalar_quarter_multiply(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(12)
    v = rng.uniform(-1, 1, ctx.slot_count)
    ct = enc(ctx, pk, v, rng)
    w = ckks.encode(np.full(ctx.slot_count, 0.25), ctx, scale=ctx.rescale_prime(ct.level))
    out = ckks.rescale(ckks.ct_mul_plain(ct, w), ctx)
    assert np.max(np.abs(dec(ctx, sk, out) - 0.25 * v)) < HOMOMORPHIC_OP_TOL


def test_rescale_level_and_ratio(ctx, keypair):
    _, pk = keypair
    rng = np.random.default_rng(13)
    ct = enc(ctx, pk, np.ones(8), rng)
    prod = ckks.ct_mul_plain(ct, ckks.encode(np.ones(ctx.slot_count), ctx))
    out = ckks.rescale(prod, ctx)
    assert (prod.level, out.level) == (4, 3)
    assert out.scale == prod.scale / ctx.rescale_prime(4)
    # scale 2^80 -> approximately 2^40, exact ratio = dropped prime
    assert abs(np.log2(out.scale) - 40) < 0.01


def test_mul_rescale_random_pairs(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(14)
    worst = 0.0
    for _ in range(100):
        v = rng.uniform(-1, 1, 64)
        w = rng.uniform(-1, 1)
        ct = enc(ctx, pk, v, rng)
        wpt = ckks.encode(np.full(ctx.slot_count, w), ctx, scale=ctx.rescale_prime(ct.level))
        out = ckks.rescale(ckks.ct_mul_plain(ct, wpt), ctx)
        worst = max(worst, np.max(np.abs(dec(ctx, sk, out)[:64] - w * v)))
    assert worst < HOMOMORPHIC_OP_TOL


def test_scale_and_level_bookkeeping(ctx, keypair):
    # K adds then one plain-multiply + rescale: scale within 2^-30 of delta, level 3
    sk, pk = keypair
    rng = np.random.default_rng(15)
    v = rng.uniform(-1, 1, 32)
    total = enc(ctx, pk, v, rng)
    for _ in range(7):
        total = ckks.ct_add(total, enc(ctx, pk, v, rng))
    w = ckks.encode(np.full(ctx.slot_count, 0.125), ctx, scale=ctx.rescale_prime(total.level))
    out = ckks.rescale(ckks.ct_mul_plain(total, w), ctx)
    assert out.level == 3
    assert abs(out.scale - ctx.delta) <= SCALE_MATCH_REL_TOL * ctx.delta
    assert np.max(np.abs(dec(ctx, sk, out)[:32] - v)) < HOMOMORPHIC_OP_TOL


def test_structural_mismatches_raise(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(16)
    a = enc(ctx, pk, np.ones(8), rng)
    b = ckks.rescale(ckks.ct_mul_plain(
        a, ckks.encode(np.ones(ctx.slot_count), ctx, scale=ctx.rescale_prime(4))), ctx)
    with pytest.raises(ckks.CkksError):
        ckks.ct_add(a, b)  # level mismatch
    with pytest.raises(ckks.CkksError):
        ckks.ct_add(a, ckks.ct_mul_plain(a, ckks.encode(np.ones(4096), ctx)))  # scale mismatch
    with pytest.raises(ckks.CkksError):
        ckks.ct_mul_plain(b, ckks.encode(np.ones(4096), ctx))  # plaintext at wrong level
    low = ckks.rescale(ckks.rescale(ckks.ct_mul_plain(
        b, ckks.encode(np.ones(4096), ctx, level=3)), ctx), ctx)
    with pytest.raises(ring.LevelExhaustedError):
        ckks.rescale(ckks.rescale(low, ctx), ctx)


# ---------------------------------------------------------------------------
# serialization


def test_serialized_size_formula(ctx, keypair):
    _, pk = keypair
    rng = np.random.default_rng(17)
    ct = enc(ctx, pk, np.ones(8), rng)
    blob = ckks.serialize(ct)
    assert ckks.serialized_size(ct) == len(blob)
    assert len(blob) - ckks.HEADER_SIZE == 2 * 4 * 8192 * 8 == 524288


def test_serialize_roundtrip_bitwise(ctx, keypair):
    _, pk = keypair
    rng = np.random.default_rng(18)
    ct = enc(ctx, pk, rng.uniform(-1, 1, 100), rng)
    back = ckks.deserialize(ckks.serialize(ct), ctx)
    assert np.array_equal(back.c0.data, ct.c0.data)
    assert np.array_equal(back.c1.data, ct.c1.data)
    assert back.scale == ct.scale
    assert back.level == ct.level


def test_deserialize_rejects_malformed(ctx, keypair):
    _, pk = keypair
    rng = np.random.default_rng(19)
    blob = ckks.serialize(enc(ctx, pk, np.ones(4), rng))
    with pytest.raises(ckks.SerializationError):
        ckks.deserialize(blob[:10], ctx)
    with pytest.raises(ckks.SerializationError):
        ckks.deserialize(b"\xff" + blob[1:], ctx)  # wrong version byte
    with pytest.raises(ckks.SerializationError):
        ckks.deserialize(blob[:-8], ctx)  # truncated body


def test_expansion_factor_per_tensor(ctx, keypair):
    # 2,068 float32 parameters = 8,272 bytes plain; every ciphertext chunk
    # is >= 0.5 MiB, so the per-tensor expansion exceeds 60x
    _, pk = keypair
    rng = np.random.default_rng(20)
    ct = enc(ctx, pk, rng.uniform(-1, 1, 1152), rng)  # largest cnn tensor
    assert 2068 * 4 == 8272
    assert ckks.serialized_size(ct) >= 0.5 * 1024 * 1024
    assert ckks.serialized_size(ct) / (1152 * 4) > 60


# ---------------------------------------------------------------------------
# role accounting


def test_secret_key_access_accounting(ctx, keypair):
    sk, pk = keypair
    rng = np.random.default_rng(21)
    ct = enc(ctx, pk, np.ones(4), rng)
    before = ckks.secret_key_accesses()
    with ckks.role_scope("auditor"):
        ckks.decrypt(ct, sk)
        ckks.decrypt(ct, sk)
    after = ckks.secret_key_accesses()
    assert after.get("auditor", 0) - before.get("auditor", 0) == 2
