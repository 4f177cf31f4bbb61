import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iedpuf import sigcore
from iedpuf.sigcore import (
    BitString,
    Challenge,
    DeltaFields,
    DiodeVector,
    PufSignature,
    SaturationWarning,
)

from conftest import IED1, IED2, SIG1_DELTA, SIG2_DELTA, REF_DIODE_MV, brute_force_bits

volts_st = st.lists(st.floats(min_value=400.0, max_value=600.0, allow_nan=False), min_size=12, max_size=12)
bits_st = st.text(alphabet="01", max_size=300)


@st.composite
def challenges(draw, min_m=2):
    m = draw(st.integers(min_m, 12))
    ports = draw(st.permutations(range(12)))[:m]
    return Challenge(tuple(ports))


@pytest.mark.parametrize(
    "va,vb,expected",
    [(516.8, 516.1, 1), (500.8, 500.8, 0), (500.8, 502.0, 0)],
)
def test_compare_bit(va, vb, expected):
    assert sigcore.compare_bit(va, vb) == expected


def test_reference_diode_signature():
    bits = sigcore.diode_signature(REF_DIODE_MV)
    assert len(bits) == 132
    assert str(bits[:11]) == "0" * 11
    assert str(bits[7 * 11 : 8 * 11]) == "10000000000"
    assert bits == brute_force_bits(REF_DIODE_MV)


def test_all_equal_voltages_give_zeros():
    assert sigcore.diode_signature([510.0] * 12) == "0" * 132


@pytest.mark.parametrize("bad", [[500.0] * 11, [500.0] * 11 + [0.0], [500.0] * 11 + [1000.0], [500.0] * 11 + [float("nan")]])
def test_diode_vector_rejects(bad):
    with pytest.raises(ValueError):
        DiodeVector(tuple(bad))


@pytest.mark.parametrize(
    "meas,expected",
    [
        (IED1, (40, 50, 150, 55)),
        (IED2, (10, 10, 140, -63)),
        (((3.3, 5.0, 15.0), 20.0), (0, 0, 0, 0)),
    ],
)
def test_delta_fields(meas, expected):
    assert sigcore.delta_fields(*meas).as_tuple() == expected


@pytest.mark.parametrize("dv,expected", [(40, "00100"), (10, "00001"), (-10, "10001"), (0, "00000")])
def test_encode_delta_voltage(dv, expected):
    assert sigcore.encode_delta_voltage(dv) == expected


def test_encode_delta_voltage_saturates():
    with pytest.warns(SaturationWarning):
        assert sigcore.encode_delta_voltage(200) == "01111"
    with pytest.warns(SaturationWarning):
        assert sigcore.encode_delta_voltage(-200) == "11111"


@pytest.mark.parametrize("dtp,expected", [(55, "0110111"), (-63, "1111111"), (0, "0000000"), (63, "0111111")])
def test_encode_delta_period(dtp, expected):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert sigcore.encode_delta_period(dtp) == expected


def test_encode_delta_period_saturates():
    with pytest.warns(SaturationWarning):
        assert sigcore.encode_delta_period(-100) == "1111111"


@pytest.mark.parametrize(
    "fields,expected",
    [((40, 50, 150, 55), SIG1_DELTA), ((10, 10, 140, -63), SIG2_DELTA), ((0, 0, 0, 0), "0" * 22)],
)
def test_delta_signature_golden(fields, expected):
    bits = sigcore.delta_signature(DeltaFields(*fields))
    assert bits == expected
    assert sigcore.decode_delta_signature(bits).as_tuple() == fields


@given(
    st.integers(-15, 15).map(lambda k: 10 * k),
    st.integers(-15, 15).map(lambda k: 10 * k),
    st.integers(-15, 15).map(lambda k: 10 * k),
    st.integers(-63, 63),
)
def test_delta_round_trip_in_range(dv1, dv2, dv3, dtp):
    df = DeltaFields(dv1, dv2, dv3, dtp)
    bits = sigcore.delta_signature(df)
    assert len(bits) == 22
    assert sigcore.decode_delta_signature(bits) == df


@given(st.integers(-10_000, 10_000))
def test_period_encoding_clamps(dtp):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        bits = sigcore.encode_delta_period(dtp)
    decoded = sigcore.decode_delta_period(bits)
    assert decoded == max(-63, min(63, dtp))


def test_full_signature():
    zero = sigcore.full_signature(BitString("0" * 132), BitString("0" * 22))
    assert str(zero) == "0" * 154
    sig = sigcore.full_signature(sigcore.diode_signature(REF_DIODE_MV), BitString(SIG1_DELTA))
    assert len(sig) == 154
    assert str(sig)[-7:] == "0110111"
    assert PufSignature.parse(str(sig)) == sig
    with pytest.raises(ValueError):
        sigcore.full_signature(BitString("0" * 131), BitString("0" * 22))


def test_partial_bits_reference():
    c = Challenge((1, 8, 0))
    assert sigcore.partial_bits(REF_DIODE_MV, c) == "110100"
    stored = sigcore.diode_signature(REF_DIODE_MV)
    assert sigcore.partial_bits(stored, c) == "110100"
    assert c.n_bits == 6


@pytest.mark.parametrize("ports", [(0, 0, 1), (0,), (0, 12), (-1, 3), tuple(range(12)) + (0,)])
def test_invalid_challenge(ports):
    with pytest.raises(ValueError):
        Challenge(ports)


@given(volts_st, challenges())
def test_partial_lookup_matches_compute(volts, c):
    stored = sigcore.diode_signature(volts)
    computed = sigcore.partial_bits(volts, c)
    assert sigcore.partial_bits(stored, c) == computed
    assert computed == brute_force_bits(volts, c.ports)
    assert len(computed) == c.m * (c.m - 1)


@given(volts_st)
def test_identity_challenge_is_full_signature(volts):
    assert sigcore.partial_bits(volts, sigcore.IDENTITY_CHALLENGE) == sigcore.diode_signature(volts)


@given(volts_st, st.permutations(range(12)))
def test_full_challenge_is_relabeling(volts, perm):
    # same pair set, so the number of ones cannot change
    c = Challenge(tuple(perm))
    assert sigcore.partial_bits(volts, c).count() == sigcore.diode_signature(volts).count()


@given(st.lists(st.floats(400, 600, allow_nan=False), min_size=12, max_size=12, unique=True))
def test_distinct_voltages_antisymmetric(volts):
    bits = str(sigcore.diode_signature(volts))
    idx = {}
    k = 0
    for i in range(12):
        for j in range(12):
            if i != j:
                idx[i, j] = k
                k += 1
    for (i, j), k in idx.items():
        assert bits[k] != bits[idx[j, i]]
    assert bits.count("1") == 66


@pytest.mark.parametrize(
    "a,b,count,frac",
    [("0101", "0101", 0, 0.0), ("0000", "1111", 4, 1.0), (SIG1_DELTA, SIG2_DELTA, 6, 6 / 22)],
)
def test_hamming_examples(a, b, count, frac):
    h = sigcore.hamming(a, b)
    assert h.count == count
    assert h.fraction == pytest.approx(frac)


def test_hamming_length_mismatch():
    with pytest.raises(ValueError):
        sigcore.hamming("01", "011")


@given(st.integers(1, 200).flatmap(lambda n: st.tuples(*[st.text("01", min_size=n, max_size=n)] * 3)))
def test_hamming_metric(triple):
    a, b, c = triple
    ab = sigcore.hamming(a, b).count
    assert ab == sigcore.hamming(b, a).count
    assert sigcore.hamming(a, a).count == 0
    assert sigcore.hamming(a, c).count <= ab + sigcore.hamming(b, c).count
    assert ab == sum(x != y for x, y in zip(a, b))


@given(bits_st)
def test_bitstring_round_trips(s):
    b = BitString(s)
    assert str(b) == s
    assert BitString.from_array(b.to_array()) == b
    hx, n = b.to_hex()
    assert BitString.from_hex(hx, n) == b
    assert b.count() == s.count("1")


def test_bitstring_rejects_other_chars():
    with pytest.raises(ValueError):
        BitString("0120")


def test_bitstring_array_dtype():
    arr = BitString("1011").to_array()
    assert arr.dtype == np.uint8
    assert arr.tolist() == [1, 0, 1, 1]
