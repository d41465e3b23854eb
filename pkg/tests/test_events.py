import random

import pytest
from hypothesis import given, settings, strategies as st

from brvst.arv import ARV, ArvConfig, DomainLimit, coverage
from brvst.events import (
    AttributeSchema, FixtureError, SchemaError, SchemaRegistry, default_registry, exact_match,
    format_fixture, match_event, parse_fixture,
)
from brvst.experiments import arv_accuracy, sample_pairs
from brvst.wire import (
    NO_EXPIRY, DataDeliver, DecodeError, EncodeError, GrsvUpdate, Kind, PubAnnounce, PubMsg, SubMsg,
    UnsubMsg, ZrsvUpdate, decode_message, encode_message, sub_message, traffic_size, wire_size,
)

A, B, C, D = 0, 1, 2, 3


@pytest.fixture
def reg():
    return SchemaRegistry([AttributeSchema(i, DomainLimit(0, 100), n) for i, n in enumerate("ABCD")],
                          ArvConfig(alpha=0.8))


# --- predicates --------------------------------------------------------------------


def test_composed_reference_match(reg):
    p = reg.publication(1, 0, {A: (26, 47)})
    s = reg.subscription(1, 0, {A: (1, 48)})
    assert str(p.arvs[A]) == "0100" and str(s.arvs[A]) == "10"
    assert match_event(p, s) and exact_match(p, s)


def test_exact_match_examples(reg):
    s = reg.subscription(1, 0, {A: (1, 48)})
    assert exact_match(reg.publication(1, 0, {A: (26, 47)}), s)
    assert not exact_match(reg.publication(2, 0, {A: (38, 60)}), s)


def test_missing_attribute(reg):
    s = reg.subscription(1, 0, {A: (0, 100), D: (0, 100)})
    p = reg.publication(1, 0, {A: (10, 20), B: (0, 5)})
    assert not match_event(p, s)
    assert not exact_match(p, s)


def test_extra_publication_attributes_are_ignored(reg):
    s = reg.subscription(1, 0, {A: (0, 50)})
    p = reg.publication(1, 0, {A: (10, 20), B: (0, 100), C: (3, 3)})
    assert match_event(p, s) and exact_match(p, s)


def test_unknown_attribute(reg):
    with pytest.raises(SchemaError):
        reg.subscription(1, 0, {9: (0, 1)})
    s = reg.subscription(1, 0, {A: (0, 50)})
    with pytest.raises(SchemaError):
        match_event({9: ARV.from_str("1")}, s, registry=reg)


def test_registry_rules():
    r = SchemaRegistry()
    r.add(AttributeSchema(3, DomainLimit(0, 1)))
    with pytest.raises(SchemaError):
        r.add(AttributeSchema(3, DomainLimit(0, 2)))
    with pytest.raises(SchemaError):
        r.add(AttributeSchema(70000, DomainLimit(0, 1)))
    assert r.ids == [3] and 3 in r and len(r) == 1


def test_default_registry_size():
    r = default_registry()
    assert r.ids == list(range(15))
    assert len(default_registry(4)) == 4


def test_empty_event_rejected(reg):
    with pytest.raises(ValueError):
        reg.subscription(1, 0, {})
    with pytest.raises(ValueError):
        reg.publication(1, 0, {})


def test_agreement_table_on_random_pairs():
    """ARV matching against real containment over 10^4 random pairs."""
    r = arv_accuracy(ArvConfig(alpha=0.9), sample_pairs(random.Random(1), default_registry(), 10_000))
    assert r.true_pos + r.false_pos + r.false_neg + r.true_neg == 10_000
    assert r.true_pos > 0 and r.true_neg > 0
    assert r.fp_rate <= 1.5 * (1 - 0.9)
    assert r.fn_rate < 0.01


ranges = st.tuples(st.floats(0, 100), st.floats(0, 100)).map(lambda t: (min(t), max(t)))
range_maps = st.dictionaries(st.sampled_from([A, B, C, D]), ranges, min_size=1, max_size=4)


def pct_registry(cfg=ArvConfig()):
    return SchemaRegistry([AttributeSchema(i, DomainLimit(0, 100)) for i in range(4)], cfg)


@given(range_maps, range_maps, st.integers(0, 8))
def test_equal_level_soundness(pr, sr, level):
    reg = pct_registry(ArvConfig(force_level=level))
    p, s = reg.publication(1, 0, pr), reg.subscription(1, 0, sr)
    if exact_match(p, s):
        assert match_event(p, s)


@given(range_maps, range_maps)
def test_match_implies_coverage_containment(pr, sr):
    reg = pct_registry()
    p, s = reg.publication(1, 0, pr), reg.subscription(1, 0, sr)
    if match_event(p, s):
        for a in s.attrs:
            lim = reg[a].limit
            inner, outer = coverage(p.arvs[a], lim), coverage(s.arvs[a], lim)
            assert all(any(o.lo <= i.lo and i.hi <= o.hi for o in outer) for i in inner)


@given(range_maps, range_maps)
def test_removing_a_subscription_attribute_from_the_publication_breaks_the_match(pr, sr):
    reg = pct_registry()
    p, s = reg.publication(1, 0, pr), reg.subscription(1, 0, sr)
    if match_event(p, s):
        for a in s.attrs:
            rest = {k: v for k, v in pr.items() if k != a}
            if rest:
                assert not match_event(reg.publication(1, 0, rest), s)


# --- fixtures --------------------------------------------------------------------------


def test_fixture_round_trip(reg):
    items = [reg.subscription(1, 5, {A: (0, 50), B: (10.5, 20)}), reg.publication(2, 6, {C: (7, 7)}, 128)]
    text = format_fixture(items)
    assert text == "S 1 5 0=0..50 1=10.5..20\nP 2 6 2=7..7 size=128\n"
    back = parse_fixture(text, reg)
    assert back == items
    assert parse_fixture("P 3 1 0=42  # point\n", reg)[0].attrs[A].range.lo == 42


@pytest.mark.parametrize("bad", ["X 1 1 0=1..2", "S 1 1", "S a 1 0=1..2", "S 1 1 0=x..2"])
def test_fixture_errors(reg, bad):
    with pytest.raises(FixtureError):
        parse_fixture(bad, reg)


# --- wire format ------------------------------------------------------------------------


def test_sub_length_is_the_field_sum():
    m = SubMsg(7, 9, {3: ARV.from_str("10")})
    data = encode_message(m)
    # kind + sub_id + node + count + attr_id + level + one bit byte
    assert len(data) == 1 + 4 + 4 + 2 + 2 + 1 + 1 == 15
    assert data == bytes([Kind.SUB, 0, 0, 0, 7, 0, 0, 0, 9, 0, 1, 0, 3, 1, 0b10000000])
    assert wire_size(m) == 15


def test_data_header_size():
    m = DataDeliver(1, 2, 3, 4, 500, {0: ARV.from_str("1")}, 1234)
    assert len(encode_message(m)) == 25 + 2 + 2 + 2
    assert traffic_size(m) == wire_size(m) + 500
    assert m.expires == 1.234
    assert DataDeliver(1, 2, 3, 4, 0, {0: ARV.from_str("1")}).expires == float("inf")


def test_empty_attribute_set_cannot_be_encoded():
    with pytest.raises(EncodeError):
        encode_message(SubMsg(1, 1, {}))
    with pytest.raises(EncodeError):
        encode_message(UnsubMsg(2 ** 32, 1))


def test_decode_errors_carry_offsets():
    data = encode_message(SubMsg(7, 9, {3: ARV.from_str("10"), 4: ARV.from_str("0110")}))
    with pytest.raises(DecodeError) as e:
        decode_message(data[:6])
    assert e.value.offset == 5
    with pytest.raises(DecodeError):
        decode_message(b"\x63")
    with pytest.raises(DecodeError):
        decode_message(data + b"\x00")
    with pytest.raises(DecodeError):
        decode_message(b"")
    head = bytes([Kind.SUB, 0, 0, 0, 7, 0, 0, 0, 9, 0, 2])
    one = bytes([0, 0x80])  # level-0 ARV "1"
    assert decode_message(head + bytes([0, 3]) + one + bytes([0, 4]) + one).arvs.keys() == {3, 4}
    with pytest.raises(DecodeError) as e:
        decode_message(head + bytes([0, 4]) + one + bytes([0, 3]) + one)
    assert e.value.offset == 15


@st.composite
def arv_st(draw):
    level = draw(st.integers(0, 7))
    return ARV(level, draw(st.integers(1, (1 << (1 << level)) - 1)))


u32 = st.integers(0, 2 ** 32 - 1)
attr_maps = st.dictionaries(st.integers(0, 0xFFFF), arv_st(), min_size=1, max_size=4)
entry_lists = st.lists(attr_maps, max_size=3).map(tuple)

messages = st.one_of(
    st.builds(SubMsg, u32, u32, attr_maps),
    st.builds(UnsubMsg, u32, u32),
    st.builds(PubMsg, u32, u32, u32, attr_maps),
    st.builds(GrsvUpdate, u32, u32, entry_lists),
    st.builds(ZrsvUpdate, u32, u32, entry_lists),
    st.builds(PubAnnounce, u32, u32, u32, attr_maps),
    st.builds(DataDeliver, u32, u32, u32, u32, u32, attr_maps, u32),
)


@given(messages)
def test_round_trip(m):
    data = encode_message(m)
    assert decode_message(data) == m
    assert len(data) == wire_size(m)


@given(messages, st.data())
def test_truncation_is_detected(m, data):
    raw = encode_message(m)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(DecodeError):
        decode_message(raw[:cut])


@given(st.binary(max_size=40))
def test_garbage_never_crashes(raw):
    try:
        m = decode_message(raw)
    except DecodeError:
        return
    assert encode_message(m) == raw


def test_sub_message_from_subscription(reg):
    s = reg.subscription(4, 8, {A: (0, 50)})
    m = sub_message(s)
    assert m.sub_id == 4 and m.subscriber == 8 and m.arvs == s.arvs
