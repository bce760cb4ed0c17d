import numpy as np
import pytest

from fhe_fedsim import ckks


@pytest.fixture(scope="session")
def ctx():
    """Default context: N=8192, prime sizes {60,40,40,60}, scale 2^40."""
    return ckks.CkksContext.create()


@pytest.fixture(scope="session")
def keypair(ctx):
    return ckks.keygen(ctx, np.random.default_rng(20240901))


@pytest.fixture(scope="session")
def small_ctx():
    """Cheap context for structural tests (fast keygen/ops)."""
    return ckks.CkksContext.create(degree=64, bit_sizes=(50, 30, 30, 50), scale_log2=30)


def schoolbook_negacyclic(a, b, q):
    """Quadratic oracle for products in Z_q[X]/(X^N + 1), exact integers."""
    n = len(a)
    res = [0] * n
    for i in range(n):
        ai = int(a[i])
        if ai == 0:
            continue
        for j in range(n):
            k = i + j
            v = ai * int(b[j]) % q
            if k >= n:
                k -= n
                v = (-v) % q
            res[k] = (res[k] + v) % q
    return res
