"""Summary forest: grid-level subscription aggregation.

Each tree's root has the smallest attribute set in its tree; every node holds
at least the attributes of its parent.  A root carries *summary* ARVs, one per
root attribute, merging that attribute over every member of the tree.  The
roots with their summaries form the representative set that the grid reports
upward (GRSV), and that a publication is first filtered against before the
members of a matching tree are examined one by one.

Items stored in the forest only need ``sub_id`` and ``arvs`` (attr_id -> ARV),
so the same structure aggregates real subscriptions at a grid manager and
representative entries at a zone manager.

Placement rules, in order:

1. ``s`` has every attribute of a root and overlaps its summary on each of
   them: ``s`` becomes a child of the first such root.
2. a root has every attribute of ``s`` and ``s`` overlaps the root's summary on
   each of its own attributes: ``s`` becomes the new root of the first such tree.
3. otherwise ``s`` starts a new tree.

After any insertion or removal, trees are grafted under one another while some
root satisfies rule 1 against another tree's root (forest reduction).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from .arv import ARV, merge, overlaps
from .events import arvs_match
from .wire import GrsvUpdate, attrs_size, encode_attrs, encode_entries


class ForestError(KeyError):
    """Duplicate or unknown subscription id."""


class ForestNode:
    __slots__ = ("item", "children", "seq", "parent", "tree")

    def __init__(self, item, seq: int):
        self.item = item
        self.children: List[ForestNode] = []
        self.seq = seq
        self.parent: Optional[ForestNode] = None
        self.tree: Optional[SummaryTree] = None  # set on roots only

    @property
    def sub_id(self):
        return self.item.sub_id

    @property
    def attrs(self) -> frozenset:
        return frozenset(self.item.arvs)

    def walk(self) -> Iterator["ForestNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def __repr__(self):
        return f"ForestNode({self.sub_id!r})"


class SummaryTree:
    def __init__(self, root: ForestNode):
        self.summary: Dict[int, ARV] = {}
        self.set_root(root)

    def set_root(self, root: ForestNode):
        root.parent = None
        root.tree = self
        self.root = root
        self.attrs = root.attrs

    def members(self) -> Iterator[ForestNode]:
        return self.root.walk()

    def recompute(self):
        summary = {}
        for node in self.members():
            arvs = node.item.arvs
            for a in self.attrs:
                v = arvs[a]
                summary[a] = v if a not in summary else merge(summary[a], v)
        self.summary = summary

    def absorb(self, arvs):
        for a in self.attrs:
            self.summary[a] = merge(self.summary[a], arvs[a])

    def entry(self) -> Dict[int, ARV]:
        return dict(self.summary)


@dataclass
class InsertReport:
    sub_id: object
    placement: str  # "child", "parent" or "root"
    root_id: object
    changed: bool


@dataclass
class RemovalReport:
    sub_id: object
    was_root: bool
    reinserted: List[object] = field(default_factory=list)
    changed: bool = False


def _accepts_child(tree: SummaryTree, arvs) -> bool:
    """Placement rule 1: ``arvs`` covers the root's attributes and overlaps its summary."""
    for a in tree.attrs:
        v = arvs.get(a)
        if v is None or not overlaps(v, tree.summary[a]):
            return False
    return True


def _accepts_parent(tree: SummaryTree, arvs) -> bool:
    """Placement rule 2: the root covers ``arvs``'s attributes, with overlapping summaries."""
    summary = tree.summary
    return all(overlaps(v, summary[a]) for a, v in arvs.items())


_NODE_HEAD = struct.Struct(">IIH")


class SummaryForest:
    def __init__(self, grid_id: int = 0):
        self.grid_id = grid_id
        self.trees: List[SummaryTree] = []
        self.index: Dict[object, ForestNode] = {}
        self._seq = 0
        self._grsv_version = 0
        self._grsv_entries: Tuple[Dict[int, ARV], ...] = ()
        # counters for cost accounting and tests
        self.filter_tests = 0
        self.candidate_tests = 0

    def __len__(self):
        return len(self.index)

    def __contains__(self, sub_id):
        return sub_id in self.index

    def items(self) -> List[object]:
        return [n.item for t in self.trees for n in t.members()]

    def entries(self) -> Tuple[Dict[int, ARV], ...]:
        return tuple(t.entry() for t in self.trees)

    # -- insertion ------------------------------------------------------------

    def add_subscription(self, item) -> InsertReport:
        if item.sub_id in self.index:
            raise ForestError(f"duplicate subscription id {item.sub_id!r}")
        before = self.entries()
        self._seq += 1
        placement, tree = self._insert(ForestNode(item, self._seq))
        self.try_reduce({id(tree)})
        root = self._root_of(self.index[item.sub_id])
        return InsertReport(item.sub_id, placement, root.sub_id, self.entries() != before)

    def extend(self, items):
        """Insert many items without per-item reports (same result as repeated adds)."""
        for item in items:
            if item.sub_id in self.index:
                raise ForestError(f"duplicate subscription id {item.sub_id!r}")
            self._seq += 1
            _, tree = self._insert(ForestNode(item, self._seq))
            self.try_reduce({id(tree)})

    def _insert(self, node: ForestNode):
        arvs = node.item.arvs
        attrs = node.attrs
        self.index[node.sub_id] = node
        for tree in self.trees:
            if tree.attrs <= attrs and _accepts_child(tree, arvs):
                node.parent = tree.root
                tree.root.children.append(node)
                tree.absorb(arvs)
                return "child", tree
        for tree in self.trees:
            if attrs <= tree.attrs and _accepts_parent(tree, arvs):
                old = tree.root
                old.tree = None
                tree.set_root(node)
                node.children.append(old)
                old.parent = node
                tree.recompute()
                return "parent", tree
        tree = SummaryTree(node)
        tree.recompute()
        self.trees.append(tree)
        return "root", tree

    def try_reduce(self, dirty=None) -> bool:
        """Graft whole trees under other roots until no rule-1 fit remains.

        Scans (parent, child) pairs in creation order and applies the first
        fit, repeatedly.  ``dirty`` optionally names (by ``id``) the trees
        changed since the forest was last reduced: any new fit must involve
        one of them, so other pairs are skipped without changing the outcome.
        """
        changed = False
        while True:
            pair = self._first_fit(dirty)
            if pair is None:
                return changed
            child, parent = pair
            self._graft(child, parent)
            changed = True
            if dirty is not None:
                dirty.discard(id(child))
                dirty.add(id(parent))

    def _first_fit(self, dirty):
        trees = self.trees
        if dirty is not None:
            marked = [t for t in trees if id(t) in dirty]
            if not marked:
                return None
        for parent in trees:
            children = trees if dirty is None or id(parent) in dirty else marked
            pattrs = parent.attrs
            for child in children:
                if child is not parent and child.attrs >= pattrs and _accepts_child(parent, child.summary):
                    return child, parent
        return None

    def _graft(self, child: SummaryTree, parent: SummaryTree):
        self.trees.remove(child)
        node = child.root
        node.tree = None
        node.parent = parent.root
        parent.root.children.append(node)
        parent.absorb(child.summary)

    # -- removal --------------------------------------------------------------

    def remove_subscription(self, sub_id) -> RemovalReport:
        node = self.index.get(sub_id)
        if node is None:
            raise ForestError(f"unknown subscription id {sub_id!r}")
        before = self.entries()
        report = RemovalReport(sub_id, node.parent is None)
        orphans = [n for n in node.walk() if n is not node]
        for n in node.walk():
            del self.index[n.sub_id]
        if node.parent is None:
            self.trees.remove(node.tree)
            node.tree = None
        else:
            node.parent.children.remove(node)
            tree = self._root_of(node.parent).tree
            node.parent = None
            tree.recompute()
        for n in sorted(orphans, key=lambda n: n.seq):
            n.children = []
            n.parent = None
            n.tree = None
            _, tree = self._insert(n)
            self.try_reduce({id(tree)})
            report.reinserted.append(n.sub_id)
        report.changed = self.entries() != before
        return report

    def _root_of(self, node: ForestNode) -> ForestNode:
        while node.parent is not None:
            node = node.parent
        return node

    # -- outputs --------------------------------------------------------------

    def representative_set(self) -> GrsvUpdate:
        """Current GRSV; the version only moves when the entries change."""
        entries = self.entries()
        if entries != self._grsv_entries:
            self._grsv_entries = entries
            self._grsv_version += 1
        return GrsvUpdate(self.grid_id, self._grsv_version, self._grsv_entries)

    def match_publication(self, p) -> List[object]:
        """Every stored item whose ARVs the publication matches.

        Trees whose root filter (root attributes + summaries) rejects the
        publication are skipped without looking at their members.
        """
        arvs = p.arvs if hasattr(p, "arvs") else p
        hits = []
        for tree in self.trees:
            self.filter_tests += 1
            if not arvs_match(arvs, tree.summary):
                continue
            for node in tree.members():
                self.candidate_tests += 1
                if arvs_match(arvs, node.item.arvs):
                    hits.append(node.item)
        return hits

    def matches_any_root(self, arvs) -> bool:
        return any(arvs_match(arvs, t.summary) for t in self.trees)

    def encode(self) -> bytes:
        """Serialized forest: representative entries, then each tree's nodes in preorder.

        Node record: ``sub_id:u32 owner:u32 children:u16`` + attribute block.
        Used to size state handoffs and storage samples.
        """
        parts = [encode_entries(self.entries())]
        for tree in self.trees:
            for node in tree.members():
                parts.append(_NODE_HEAD.pack(_id32(node.sub_id), _owner(node.item), len(node.children)))
                parts.append(encode_attrs(node.item.arvs))
        return b"".join(parts)

    def storage_size(self) -> int:
        size = 2 + sum(attrs_size(t.summary) for t in self.trees)
        for node in self.index.values():
            size += _NODE_HEAD.size + attrs_size(node.item.arvs)
        return size

    def dump(self) -> str:
        """Text form: one line per node, indented by depth, with a summary line per root."""
        lines = []
        for i, tree in enumerate(self.trees):
            summ = " ".join(f"{a}:{tree.summary[a]}" for a in sorted(tree.summary))
            lines.append(f"tree {i} summary {summ}")
            stack = [(tree.root, 1)]
            while stack:
                node, depth = stack.pop()
                arvs = " ".join(f"{a}:{node.item.arvs[a]}" for a in sorted(node.item.arvs))
                lines.append(f"{'  ' * depth}{node.sub_id} {arvs}")
                stack.extend((c, depth + 1) for c in reversed(node.children))
        return "\n".join(lines) + ("\n" if lines else "")

    def check_invariants(self):
        """Raise AssertionError if any structural or summary invariant is broken."""
        seen = set()
        for tree in self.trees:
            assert tree.root.parent is None and tree.root.tree is tree
            assert tree.attrs == tree.root.attrs
            for node in tree.members():
                assert node.sub_id not in seen, f"{node.sub_id} appears twice"
                seen.add(node.sub_id)
                assert self.index.get(node.sub_id) is node
                for c in node.children:
                    assert c.parent is node
                    assert node.attrs <= c.attrs, f"child {c.sub_id} lacks attributes of {node.sub_id}"
            expected = dict(tree.summary)
            tree.recompute()
            assert tree.summary == expected, "stale summary"
        assert seen == set(self.index), "index out of sync"


def _id32(x) -> int:
    return int(x) & 0xFFFFFFFF


def _owner(item) -> int:
    return _id32(getattr(item, "subscriber", 0) or 0)
