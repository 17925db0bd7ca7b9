"""Class taxonomies: parsing, lowest common ancestors, and similarity.

A hierarchy is a rooted tree given as a tab-separated edge list. The
classes of a classification problem are its leaves. Pairwise similarity
between classes c1, c2 is

    s(c1, c2) = 1 - height(lca(c1, c2)) / height(root)

where height(v) is the longest downward path from v to a leaf. Leaves have
height 0, so the diagonal is exactly 1; classes that only meet at the root
have similarity 0. Unbalanced trees need no special handling: heights are
per-node and the divisor is the single global tree height.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CycleError,
    DataFormatError,
    DegenerateHierarchyError,
    DuplicateEdgeError,
    ForestError,
    HierarchyError,
    LabelError,
)


@dataclass(frozen=True)
class ClassHierarchy:
    """Immutable rooted tree over named nodes; leaves are the classes."""

    root: str
    parent: dict[str, str | None]
    children: dict[str, tuple[str, ...]]
    leaves: tuple[str, ...]  # label index of leaves[i] is i + 1
    heights: dict[str, int]
    label_index: dict[str, int] = field(repr=False, default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    @property
    def height(self) -> int:
        return self.heights[self.root]

    def is_leaf(self, node: str) -> bool:
        return len(self.children[node]) == 0

    def require_leaf(self, name: str) -> str:
        if name not in self.label_index:
            raise LabelError(f"unknown class {name!r}")
        return name


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric class-similarity matrix with unit diagonal."""

    class_names: tuple[str, ...]
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return len(self.class_names)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def parse_hierarchy(text: str, class_names: list[str] | None = None) -> ClassHierarchy:
    """Build a validated hierarchy from an edge-list document.

    One ``parent<TAB>child`` pair per line; blank lines and lines starting
    with ``#`` are ignored. With ``class_names`` given, those names define
    the label order and must each be a leaf (and cover all leaves);
    without it, leaves are ordered lexicographically.
    """
    edges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 2:
            raise DataFormatError(
                f"line {lineno}: expected 'parent<TAB>child', got {raw!r}"
            )
        parent, child = fields[0].strip(), fields[1].strip()
        if not parent or not child:
            raise DataFormatError(f"line {lineno}: empty or whitespace-only node name")
        if (parent, child) in seen:
            raise DuplicateEdgeError(f"line {lineno}: duplicate edge {parent!r} -> {child!r}")
        seen.add((parent, child))
        edges.append((parent, child))
    if not edges:
        raise DataFormatError("hierarchy document contains no edges")

    parent_of: dict[str, str] = {}
    children_of: dict[str, list[str]] = {}
    nodes: set[str] = set()
    for parent, child in edges:
        nodes.add(parent)
        nodes.add(child)
        if child in parent_of and parent_of[child] != parent:
            raise HierarchyError(
                f"node {child!r} has multiple parents: {parent_of[child]!r} and {parent!r}"
            )
        parent_of[child] = parent
        children_of.setdefault(parent, []).append(child)
        children_of.setdefault(child, [])

    roots = sorted(nodes - set(parent_of))
    if len(roots) > 1:
        raise ForestError(f"multiple roots: {roots}")
    if not roots:
        raise CycleError(f"no root; cycle witness: {_cycle_witness(parent_of, next(iter(nodes)))}")
    root = roots[0]

    # every node must reach the root through parent links without repeats
    for node in nodes:
        trail: list[str] = []
        on_trail: set[str] = set()
        current = node
        while current != root:
            if current in on_trail:
                raise CycleError(f"cycle witness: {_cycle_witness(parent_of, current)}")
            trail.append(current)
            on_trail.add(current)
            current = parent_of[current]

    leaves = sorted(n for n in nodes if not children_of[n])
    if class_names is not None:
        listed = [name.strip() for name in class_names]
        for name in listed:
            if not name:
                raise DataFormatError("class list contains an empty name")
            if name not in nodes:
                raise LabelError(f"class {name!r} from the class list is not in the hierarchy")
            if children_of[name]:
                raise HierarchyError(f"class {name!r} from the class list is not a leaf")
        missing = sorted(set(leaves) - set(listed))
        if missing:
            raise HierarchyError(f"leaves missing from the class list: {missing}")
        if len(set(listed)) != len(listed):
            raise DataFormatError("class list contains duplicates")
        leaves = listed

    heights: dict[str, int] = {}

    def _height(node: str) -> int:
        cached = heights.get(node)
        if cached is None:
            kids = children_of[node]
            cached = 0 if not kids else 1 + max(_height(k) for k in kids)
            heights[node] = cached
        return cached

    _height(root)
    for node in nodes:
        _height(node)

    return ClassHierarchy(
        root=root,
        parent={n: parent_of.get(n) for n in nodes},
        children={n: tuple(children_of[n]) for n in nodes},
        leaves=tuple(leaves),
        heights=heights,
        label_index={name: i + 1 for i, name in enumerate(leaves)},
    )


def _cycle_witness(parent_of: dict[str, str], start: str) -> list[str]:
    seen: dict[str, int] = {}
    trail: list[str] = []
    current = start
    while current not in seen:
        seen[current] = len(trail)
        trail.append(current)
        current = parent_of[current]
    return trail[seen[current]:] + [current]


def load_hierarchy(path, classes_path=None) -> ClassHierarchy:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    class_names = None
    if classes_path is not None:
        class_names = load_class_list(classes_path)
    return parse_hierarchy(text, class_names)


def load_class_list(path) -> list[str]:
    """One class name per line; line number is the label index."""
    with open(path, "r", encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    if not names:
        raise DataFormatError(f"class list {path} is empty")
    return names


def lca(h: ClassHierarchy, c1: str, c2: str) -> str:
    """Lowest common ancestor of two leaf classes; lca(c, c) == c."""
    h.require_leaf(c1)
    h.require_leaf(c2)
    ancestors: set[str] = set()
    node: str | None = c1
    while node is not None:
        ancestors.add(node)
        node = h.parent[node]
    node = c2
    while node not in ancestors:
        node = h.parent[node]
        assert node is not None  # root is a shared ancestor
    return node


def semantic_similarity(h: ClassHierarchy) -> SimilarityMatrix:
    """Pairwise class similarities s = 1 - height(lca)/height(root)."""
    total_height = h.height
    if total_height == 0:
        raise DegenerateHierarchyError("hierarchy height is 0; need at least two levels")
    n = h.num_classes
    matrix = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            anc = lca(h, h.leaves[i], h.leaves[j])
            s = 1.0 - h.heights[anc] / total_height
            matrix[i, j] = s
            matrix[j, i] = s
    return SimilarityMatrix(class_names=h.leaves, matrix=matrix)


def write_similarity_csv(path, sim: SimilarityMatrix) -> None:
    """Matrix as CSV with class names as header row and leading column."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", *sim.class_names])
        for name, row in zip(sim.class_names, sim.matrix):
            writer.writerow([name, *[repr(float(v)) for v in row]])
