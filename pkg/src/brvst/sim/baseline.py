"""Naive non-aggregating broker, used as the storage/traffic reference.

Every grid manager keeps its subscriptions as a flat list and forwards each
one unchanged to its zone manager, which keeps its own flat copy.  Each
publication is matched against every stored subscription and forwarded to
every zone.
"""
from __future__ import annotations

import struct
from typing import Dict, List

from ..events import arvs_match
from ..wire import attrs_size

_RECORD = struct.Struct(">IIH")  # same per-subscription header as the forest encoding


def flat_record_size(item) -> int:
    return _RECORD.size + attrs_size(item.arvs)


class FlatStore:
    def __init__(self):
        self.items: Dict[int, object] = {}
        self.tests = 0

    def __len__(self):
        return len(self.items)

    def add(self, item):
        self.items[item.sub_id] = item

    def remove(self, sub_id):
        del self.items[sub_id]

    def match(self, arvs) -> List[object]:
        self.tests += len(self.items)
        return [s for s in self.items.values() if arvs_match(arvs, s.arvs)]

    def storage_size(self) -> int:
        return 2 + sum(flat_record_size(s) for s in self.items.values())


class NaiveZone:
    """Flat grid stores plus a flat zone-level copy of every subscription."""

    def __init__(self, grids):
        self.grids = {g: FlatStore() for g in grids}
        self.zone = FlatStore()

    def add(self, grid, item):
        self.grids[grid].add(item)
        self.zone.add(item)

    def remove(self, grid, sub_id):
        self.grids[grid].remove(sub_id)
        self.zone.remove(sub_id)

    def broker_storage(self) -> int:
        return self.zone.storage_size() + sum(g.storage_size() for g in self.grids.values())

    def updates_per_change(self) -> int:
        """Every subscription change travels to the zone manager."""
        return 1
