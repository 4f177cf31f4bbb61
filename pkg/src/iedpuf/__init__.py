"""PUF-based authentication of substation IEDs against a simulated probe bench.

Signatures combine 132 pairwise diode-comparison bits with 22 bits encoding
regulator-voltage and clock-period deviations. A verifier (the CCS) and a
probe run a two-phase challenge-response protocol over newline-delimited
JSON frames.
"""

__version__ = "0.1.0"

from .kernels import BACKEND
from .sigcore import (
    BitString,
    Challenge,
    DeltaFields,
    DiodeVector,
    PufSignature,
    compare_bit,
    delta_fields,
    delta_signature,
    diode_signature,
    encode_delta_period,
    encode_delta_voltage,
    full_signature,
    hamming,
    partial_bits,
)

__all__ = [
    "BACKEND",
    "BitString",
    "Challenge",
    "DeltaFields",
    "DiodeVector",
    "PufSignature",
    "compare_bit",
    "delta_fields",
    "delta_signature",
    "diode_signature",
    "encode_delta_period",
    "encode_delta_voltage",
    "full_signature",
    "hamming",
    "partial_bits",
]
