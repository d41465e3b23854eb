"""Binary encoding of the overlay's protocol messages.

Layout (big-endian, self-delimiting)::

    kind:u8  <kind-specific header>  count:u16  { attr_id:u16  arv }*

where ``arv`` is ``level:u8`` followed by ``ceil(2**level / 8)`` bit bytes.
Attributes are written in ascending ``attr_id`` order so that equal messages
always encode to equal bytes.  Representative-set messages (GRSV/ZRSV) carry
``count:u16`` entries, each an attribute block as above.

Publication payloads are opaque: only their length travels in the header and
counts toward traffic (see ``traffic_size``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Mapping, Tuple

from .arv import ARV, ArvError, encoded_size


class Kind(IntEnum):
    SUB = 1
    UNSUB = 2
    PUB = 3
    GRSV_UPDATE = 4
    ZRSV_UPDATE = 5
    PUB_ANNOUNCE = 6
    DATA_DELIVER = 7


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


Arvs = Mapping[int, ARV]
Entries = Tuple[Dict[int, ARV], ...]


@dataclass(frozen=True, eq=True)
class SubMsg:
    sub_id: int
    node_id: int
    arvs: Dict[int, ARV]
    kind = Kind.SUB

    @property
    def subscriber(self):
        return self.node_id


@dataclass(frozen=True)
class UnsubMsg:
    sub_id: int
    node_id: int
    kind = Kind.UNSUB


@dataclass(frozen=True)
class PubMsg:
    pub_id: int
    node_id: int
    payload_size: int
    arvs: Dict[int, ARV]
    kind = Kind.PUB


@dataclass(frozen=True)
class GrsvUpdate:
    grid_id: int
    version: int
    entries: Entries
    kind = Kind.GRSV_UPDATE


@dataclass(frozen=True)
class ZrsvUpdate:
    zone_id: int
    version: int
    entries: Entries
    kind = Kind.ZRSV_UPDATE


@dataclass(frozen=True)
class PubAnnounce:
    pub_id: int
    publisher: int
    zone_id: int
    arvs: Dict[int, ARV]
    kind = Kind.PUB_ANNOUNCE


NO_EXPIRY = 0xFFFFFFFF


@dataclass(frozen=True)
class DataDeliver:
    """Publication data plus its ARVs, as forwarded between managers and to subscribers.

    ``expires_ms`` is the absolute time (milliseconds) after which no manager
    may serve the data from a cache; ``NO_EXPIRY`` means never.
    """

    pub_id: int
    publisher: int
    zone_id: int
    grid_id: int
    payload_size: int
    arvs: Dict[int, ARV]
    expires_ms: int = NO_EXPIRY
    kind = Kind.DATA_DELIVER

    @property
    def expires(self) -> float:
        return float("inf") if self.expires_ms == NO_EXPIRY else self.expires_ms / 1000.0


_U8, _U16, _U32 = struct.Struct(">B"), struct.Struct(">H"), struct.Struct(">I")


def _u32(x: int) -> bytes:
    if not (0 <= x <= 0xFFFFFFFF):
        raise EncodeError(f"id does not fit in 32 bits: {x}")
    return _U32.pack(x)


def _attrs(arvs: Arvs) -> bytes:
    if not arvs:
        raise EncodeError("attribute set must be nonempty")
    if len(arvs) > 0xFFFF:
        raise EncodeError("too many attributes")
    parts = [_U16.pack(len(arvs))]
    for attr_id in sorted(arvs):
        if not (0 <= attr_id <= 0xFFFF):
            raise EncodeError(f"attr_id does not fit in 16 bits: {attr_id}")
        parts.append(_U16.pack(attr_id))
        parts.append(arvs[attr_id].to_bytes())
    return b"".join(parts)


def _entries(entries: Entries) -> bytes:
    if len(entries) > 0xFFFF:
        raise EncodeError("too many representative entries")
    return _U16.pack(len(entries)) + b"".join(_attrs(e) for e in entries)


def encode_attrs(arvs: Arvs) -> bytes:
    return _attrs(arvs)


def encode_entries(entries: Entries) -> bytes:
    return _entries(entries)


def encode_message(msg) -> bytes:
    k = msg.kind
    head = _U8.pack(k)
    if k == Kind.SUB:
        return head + _u32(msg.sub_id) + _u32(msg.node_id) + _attrs(msg.arvs)
    if k == Kind.UNSUB:
        return head + _u32(msg.sub_id) + _u32(msg.node_id)
    if k == Kind.PUB:
        return head + _u32(msg.pub_id) + _u32(msg.node_id) + _u32(msg.payload_size) + _attrs(msg.arvs)
    if k == Kind.GRSV_UPDATE:
        return head + _u32(msg.grid_id) + _u32(msg.version) + _entries(msg.entries)
    if k == Kind.ZRSV_UPDATE:
        return head + _u32(msg.zone_id) + _u32(msg.version) + _entries(msg.entries)
    if k == Kind.PUB_ANNOUNCE:
        return head + _u32(msg.pub_id) + _u32(msg.publisher) + _u32(msg.zone_id) + _attrs(msg.arvs)
    if k == Kind.DATA_DELIVER:
        return (head + _u32(msg.pub_id) + _u32(msg.publisher) + _u32(msg.zone_id)
                + _u32(msg.grid_id) + _u32(msg.payload_size) + _u32(msg.expires_ms) + _attrs(msg.arvs))
    raise EncodeError(f"unknown message kind {k!r}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, st: struct.Struct, what: str) -> int:
        if self.pos + st.size > len(self.data):
            raise DecodeError(f"truncated {what}", self.pos)
        (v,) = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return v

    def u8(self, what):
        return self.take(_U8, what)

    def u16(self, what):
        return self.take(_U16, what)

    def u32(self, what):
        return self.take(_U32, what)

    def attrs(self) -> Dict[int, ARV]:
        start = self.pos
        n = self.u16("attribute count")
        if n == 0:
            raise DecodeError("empty attribute set", start)
        out = {}
        last = -1
        for _ in range(n):
            at = self.pos
            attr_id = self.u16("attr_id")
            if attr_id <= last:
                raise DecodeError("attributes not in ascending order", at)
            last = attr_id
            try:
                arv, self.pos = ARV.from_bytes(self.data, self.pos)
            except ArvError as e:
                raise DecodeError(str(e), self.pos) from None
            out[attr_id] = arv
        return out

    def entries(self) -> Entries:
        n = self.u16("entry count")
        return tuple(self.attrs() for _ in range(n))


def decode_message(data: bytes):
    r = _Reader(data)
    raw = r.u8("kind")
    try:
        k = Kind(raw)
    except ValueError:
        raise DecodeError(f"unknown message kind {raw}", 0) from None
    if k == Kind.SUB:
        msg = SubMsg(r.u32("sub_id"), r.u32("node_id"), r.attrs())
    elif k == Kind.UNSUB:
        msg = UnsubMsg(r.u32("sub_id"), r.u32("node_id"))
    elif k == Kind.PUB:
        msg = PubMsg(r.u32("pub_id"), r.u32("node_id"), r.u32("payload_size"), r.attrs())
    elif k == Kind.GRSV_UPDATE:
        msg = GrsvUpdate(r.u32("grid_id"), r.u32("version"), r.entries())
    elif k == Kind.ZRSV_UPDATE:
        msg = ZrsvUpdate(r.u32("zone_id"), r.u32("version"), r.entries())
    elif k == Kind.PUB_ANNOUNCE:
        msg = PubAnnounce(r.u32("pub_id"), r.u32("publisher"), r.u32("zone_id"), r.attrs())
    else:
        pub_id, publisher, zone_id = r.u32("pub_id"), r.u32("publisher"), r.u32("zone_id")
        grid_id, size, expires = r.u32("grid_id"), r.u32("payload_size"), r.u32("expires_ms")
        msg = DataDeliver(pub_id, publisher, zone_id, grid_id, size, r.attrs(), expires)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after message", r.pos)
    return msg


# --- sizes without materialising bytes ---------------------------------------------

def attrs_size(arvs: Arvs) -> int:
    return 2 + sum(2 + encoded_size(v.level) for v in arvs.values())


def entries_size(entries: Entries) -> int:
    return 2 + sum(attrs_size(e) for e in entries)


_FIXED = {
    Kind.SUB: 9, Kind.UNSUB: 9, Kind.PUB: 13, Kind.GRSV_UPDATE: 9,
    Kind.ZRSV_UPDATE: 9, Kind.PUB_ANNOUNCE: 13, Kind.DATA_DELIVER: 25,
}


def wire_size(msg) -> int:
    """``len(encode_message(msg))`` computed from field widths."""
    k = msg.kind
    if k == Kind.UNSUB:
        return _FIXED[k]
    if k in (Kind.GRSV_UPDATE, Kind.ZRSV_UPDATE):
        return _FIXED[k] + entries_size(msg.entries)
    return _FIXED[k] + attrs_size(msg.arvs)


def traffic_size(msg) -> int:
    """Bytes on air for one transmission: encoding plus any opaque payload."""
    return wire_size(msg) + getattr(msg, "payload_size", 0)


def sub_message(s) -> SubMsg:
    return SubMsg(s.sub_id, s.subscriber, dict(s.arvs))


def pub_message(p) -> PubMsg:
    return PubMsg(p.pub_id, p.publisher, p.payload_size, dict(p.arvs))


def entries_from(items: List[Mapping[int, ARV]]) -> Entries:
    return tuple(dict(e) for e in items)
