"""Shared defaults and tolerance constants.

Tolerances are derived from the default encoding scale (2^40) and error
width sigma=3.2 with >=16 bits of noise margin; tests and docs both read
them from here so they cannot drift apart.
"""

# Default CKKS parameters (overridable per context).
DEFAULT_DEGREE = 8192
DEFAULT_BIT_SIZES = (60, 40, 40, 60)
DEFAULT_SCALE_LOG2 = 40

# Error sampler: discrete gaussian, truncated at TAIL_CUT * sigma.
GAUSSIAN_SIGMA = 3.2
GAUSSIAN_TAIL_CUT = 6.0

# Accuracy budgets at the default parameters.
ENCODE_ROUNDTRIP_TOL = 1e-7   # decode(encode(v)) for |v| <= 1e3
FRESH_ENCRYPT_TOL = 1e-6      # decode(decrypt(encrypt(encode(v))))
HOMOMORPHIC_OP_TOL = 1e-5     # one add / plain-multiply+rescale
AGGREGATION_TOL = 1e-4        # full encrypted weighted average vs plain

# Two ciphertexts may only be added when their scales agree this closely.
SCALE_MATCH_REL_TOL = 2.0 ** -30

# Statevector simulator hard cap.
MAX_QUBITS = 12
