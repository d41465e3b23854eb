"""Attributes, subscriptions, publications and the match predicates.

A subscription is a conjunction of attribute ranges, a publication a bundle of
attribute values (points or ranges).  A publication matches a subscription
when every subscription attribute is present in the publication and the
publication's range lies inside the subscription's.  ``exact_match`` checks
that on the real intervals; ``match_event`` checks it on the ARVs, which is
what the brokers do and may report false positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

from .arv import ARV, ArvConfig, DomainLimit, ValueInterval, arv_match, build_arv

DEFAULT_SCHEMA_SIZE = 15

# (name, lo, hi) templates cycled through by default_registry()
_ATTRIBUTE_TYPES = [
    ("age", 0.0, 100.0),
    ("temperature", -40.0, 60.0),
    ("price", 0.0, 500.0),
    ("hour", 0.0, 24.0),
    ("speed", 0.0, 200.0),
]


class SchemaError(KeyError):
    """Unknown or duplicate attribute id."""


@dataclass(frozen=True)
class AttributeSchema:
    attr_id: int
    limit: DomainLimit
    name: str = ""


class SchemaRegistry:
    """Attribute id -> schema lookup, plus the ARV config every instance is built with."""

    def __init__(self, schemas: Iterable[AttributeSchema] = (), cfg: ArvConfig = ArvConfig()):
        self.cfg = cfg
        self._schemas: Dict[int, AttributeSchema] = {}
        for s in schemas:
            self.add(s)

    def add(self, schema: AttributeSchema):
        if not (0 <= schema.attr_id <= 0xFFFF):
            raise SchemaError(f"attr_id must fit in 16 bits: {schema.attr_id}")
        if schema.attr_id in self._schemas:
            raise SchemaError(f"duplicate attr_id {schema.attr_id}")
        self._schemas[schema.attr_id] = schema

    def __getitem__(self, attr_id: int) -> AttributeSchema:
        try:
            return self._schemas[attr_id]
        except KeyError:
            raise SchemaError(f"unknown attr_id {attr_id}") from None

    def __contains__(self, attr_id) -> bool:
        return attr_id in self._schemas

    def __iter__(self) -> Iterator[AttributeSchema]:
        return iter(self._schemas[k] for k in sorted(self._schemas))

    def __len__(self):
        return len(self._schemas)

    @property
    def ids(self) -> List[int]:
        return sorted(self._schemas)

    def with_config(self, cfg: ArvConfig) -> "SchemaRegistry":
        return SchemaRegistry(self, cfg)

    def instance(self, attr_id: int, lo: float, hi: Optional[float] = None) -> "AttributeInstance":
        schema = self[attr_id]
        rng = ValueInterval(lo, lo if hi is None else hi)
        return AttributeInstance(attr_id, rng, build_arv(rng, schema.limit, self.cfg))

    def subscription(self, sub_id: int, subscriber: int, ranges: Mapping[int, Tuple[float, float]]):
        return Subscription(sub_id, subscriber, {a: self.instance(a, *r) for a, r in ranges.items()})

    def publication(self, pub_id: int, publisher: int, ranges: Mapping[int, Tuple[float, float]],
                    payload_size: int = 0):
        attrs = {a: self.instance(a, *r) for a, r in ranges.items()}
        return Publication(pub_id, publisher, attrs, payload_size)


def default_registry(size: int = DEFAULT_SCHEMA_SIZE, cfg: ArvConfig = ArvConfig()) -> SchemaRegistry:
    reg = SchemaRegistry(cfg=cfg)
    for i in range(size):
        name, lo, hi = _ATTRIBUTE_TYPES[i % len(_ATTRIBUTE_TYPES)]
        reg.add(AttributeSchema(i, DomainLimit(lo, hi), f"{name}{i // len(_ATTRIBUTE_TYPES)}"))
    return reg


@dataclass(frozen=True)
class AttributeInstance:
    attr_id: int
    range: ValueInterval
    arv: ARV


def _check_attrs(kind: str, attrs: Mapping[int, AttributeInstance]):
    if not attrs:
        raise ValueError(f"{kind} needs at least one attribute")
    for key, inst in attrs.items():
        if key != inst.attr_id:
            raise ValueError(f"{kind} attribute keyed {key} holds attr_id {inst.attr_id}")


@dataclass(frozen=True)
class Subscription:
    sub_id: int
    subscriber: int
    attrs: Mapping[int, AttributeInstance]
    arvs: Dict[int, ARV] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_attrs("subscription", self.attrs)
        object.__setattr__(self, "arvs", {a: i.arv for a, i in self.attrs.items()})


@dataclass(frozen=True)
class Publication:
    pub_id: int
    publisher: int
    attrs: Mapping[int, AttributeInstance]
    payload_size: int = 0
    arvs: Dict[int, ARV] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_attrs("publication", self.attrs)
        if self.payload_size < 0:
            raise ValueError("payload_size must be >= 0")
        object.__setattr__(self, "arvs", {a: i.arv for a, i in self.attrs.items()})


Arvs = Mapping[int, ARV]


def arvs_match(p_arvs: Arvs, s_arvs: Arvs) -> bool:
    """Bit-level match of a publication's ARVs against a subscription's.

    Checking each attribute pair separately is the same as checking the
    concatenated vectors, since the concatenation is all-zero iff every
    segment of it is.
    """
    for attr_id, s_arv in s_arvs.items():
        p_arv = p_arvs.get(attr_id)
        if p_arv is None or not arv_match(p_arv, s_arv):
            return False
    return True


def _arvs_of(x) -> Arvs:
    return x.arvs if hasattr(x, "arvs") else x


def match_event(p: Union[Publication, Arvs], s: Union[Subscription, Arvs],
                registry: Optional[SchemaRegistry] = None) -> bool:
    p_arvs, s_arvs = _arvs_of(p), _arvs_of(s)
    if registry is not None:
        for attr_id in list(s_arvs) + list(p_arvs):
            registry[attr_id]
    return arvs_match(p_arvs, s_arvs)


def exact_match(p: Publication, s: Subscription) -> bool:
    """Ground truth on the real intervals."""
    for attr_id, s_inst in s.attrs.items():
        p_inst = p.attrs.get(attr_id)
        if p_inst is None or not s_inst.range.contains(p_inst.range):
            return False
    return True


# --- text fixtures ----------------------------------------------------------------
#
#   S <sub_id> <node> <attr>=<lo>..<hi> ...
#   P <pub_id> <node> <attr>=<lo>..<hi> ... [size=<bytes>]
#
# A point value may be written as <attr>=<v>.  '#' starts a comment.


class FixtureError(ValueError):
    pass


def _fmt_num(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def format_fixture(items: Iterable[Union[Subscription, Publication]]) -> str:
    lines = []
    for it in items:
        fields = []
        for a in sorted(it.attrs):
            r = it.attrs[a].range
            fields.append(f"{a}={_fmt_num(r.lo)}..{_fmt_num(r.hi)}")
        if isinstance(it, Subscription):
            lines.append(" ".join(["S", str(it.sub_id), str(it.subscriber)] + fields))
        else:
            if it.payload_size:
                fields.append(f"size={it.payload_size}")
            lines.append(" ".join(["P", str(it.pub_id), str(it.publisher)] + fields))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_fixture(text: str, registry: SchemaRegistry) -> List[Union[Subscription, Publication]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] not in ("S", "P") or len(parts) < 4:
            raise FixtureError(f"line {lineno}: expected 'S|P id node attr=lo..hi ...'")
        try:
            item_id, node = int(parts[1]), int(parts[2])
            ranges = {}
            size = 0
            for tok in parts[3:]:
                key, val = tok.split("=", 1)
                if key == "size":
                    size = int(val)
                    continue
                lo, _, hi = val.partition("..")
                ranges[int(key)] = (float(lo), float(hi or lo))
        except ValueError as e:
            raise FixtureError(f"line {lineno}: {e}") from None
        if parts[0] == "S":
            out.append(registry.subscription(item_id, node, ranges))
        else:
            out.append(registry.publication(item_id, node, ranges, size))
    return out
