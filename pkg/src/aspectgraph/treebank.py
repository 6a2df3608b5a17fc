"""Bracketed constituency trees and the leaf-sourced graphs built from them.

A parsed sentence becomes a directed graph whose nodes are the n leaves
plus the m internal constituents.  Only leaves emit edges: each leaf points
at itself and at every ancestor, so an internal node's incoming neighbour
set is exactly its leaf descendants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "MalformedTreeError",
    "ParseTree",
    "ConstituencyGraph",
    "parse_bracketed",
    "serialize_tree",
    "collapse_preterminals",
    "tree_to_graph",
    "graph_validate",
]


class MalformedTreeError(ValueError):
    """A bracketed tree string could not be read."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at character {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class ParseTree:
    """A rooted labeled ordered tree.

    A node carries a token iff it has no children.  Leaves produced by the
    reader have an empty label (bare words); leaves produced by
    :func:`collapse_preterminals` keep the preterminal tag as their label.
    """

    label: str
    children: tuple["ParseTree", ...] = ()
    token: str | None = None

    def __post_init__(self):
        if (self.token is None) == (len(self.children) == 0):
            raise ValueError("a node carries a token iff it has no children")

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def leaves(self) -> list["ParseTree"]:
        """Leaf nodes left to right (token order)."""
        if self.is_leaf:
            return [self]
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def tokens(self) -> list[str]:
        return [leaf.token for leaf in self.leaves()]


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split into '(' / ')' / symbol tokens, keeping character offsets."""
    out = []
    i, size = 0, len(text)
    while i < size:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()":
            out.append((ch, ch, i))
            i += 1
            continue
        j = i
        while j < size and not text[j].isspace() and text[j] not in "()":
            j += 1
        out.append(("sym", text[i:j], i))
        i = j
    return out


def parse_bracketed(text: str) -> ParseTree:
    """Read one bracketed tree, e.g. ``(S (NP (DT the) (NN food)) ...)``.

    Bare words become leaves with an empty label; every parenthesised group
    becomes an internal node, including single-word preterminals (use
    :func:`collapse_preterminals` to merge those into their leaf).  Tokens
    must not contain parentheses or whitespace (PTB escapes such as -LRB-
    are passed through untouched).

    Raises :class:`MalformedTreeError` (with a character offset) on empty
    input, unbalanced parentheses, a node with no label, a node with
    neither children nor token, or trailing content after the root.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedTreeError("empty input", offset=0)

    pos = 0

    def parse_node() -> ParseTree:
        nonlocal pos
        kind, _, offset = tokens[pos]
        if kind != "(":
            raise MalformedTreeError("expected '('", offset=offset)
        pos += 1
        if pos >= len(tokens):
            raise MalformedTreeError("unbalanced parentheses", offset=len(text))
        kind, label, label_offset = tokens[pos]
        if kind != "sym":
            raise MalformedTreeError("node is missing a label", offset=label_offset)
        pos += 1
        children: list[ParseTree] = []
        while True:
            if pos >= len(tokens):
                raise MalformedTreeError("unbalanced parentheses", offset=len(text))
            kind, value, offset = tokens[pos]
            if kind == ")":
                pos += 1
                break
            if kind == "(":
                children.append(parse_node())
            else:
                children.append(ParseTree(label="", token=value))
                pos += 1
        if not children:
            raise MalformedTreeError(
                f"node {label!r} has neither children nor token", offset=label_offset
            )
        return ParseTree(label=label, children=tuple(children))

    root = parse_node()
    if pos != len(tokens):
        raise MalformedTreeError("trailing content after tree", offset=tokens[pos][2])
    return root


def serialize_tree(tree: ParseTree) -> str:
    """Inverse of :func:`parse_bracketed` (identity at the string level,
    for collapsed and uncollapsed trees alike)."""
    if tree.is_leaf:
        if tree.label == "":
            return tree.token
        return f"({tree.label} {tree.token})"
    inner = " ".join(serialize_tree(child) for child in tree.children)
    return f"({tree.label} {inner})"


def collapse_preterminals(tree: ParseTree) -> ParseTree:
    """Merge each preterminal (a node whose only child is a bare word) into
    a single leaf carrying both the tag and the token.

    The root is never collapsed, so a one-word sentence still yields a graph
    with one internal node.
    """

    def rec(node: ParseTree, is_root: bool) -> ParseTree:
        if node.is_leaf:
            return node
        children = tuple(rec(c, False) for c in node.children)
        if (
            not is_root
            and len(children) == 1
            and children[0].is_leaf
            and children[0].label == ""
        ):
            return ParseTree(label=node.label, token=children[0].token)
        return ParseTree(label=node.label, children=children)

    return rec(tree, True)


@dataclass(frozen=True)
class ConstituencyGraph:
    """Leaf-sourced attention graph of a parse tree.

    Nodes 0..n-1 are the leaves in token order; nodes n..n+m-1 are the
    internal constituents in pre-order.  ``neighbors[i]`` lists the source
    nodes feeding node i: a leaf feeds only itself, an internal node is fed
    by all its leaf descendants.  ``spans`` holds the half-open token span
    each node covers.
    """

    n: int
    m: int
    neighbors: tuple[tuple[int, ...], ...]
    spans: tuple[tuple[int, int], ...]
    labels: tuple[str, ...]
    tokens: tuple[str, ...]

    @property
    def num_nodes(self) -> int:
        return self.n + self.m

    @property
    def edge_count(self) -> int:
        return sum(len(srcs) for srcs in self.neighbors)

    def adjacency(self):
        """Boolean matrix A with A[i, j] = True iff j is a source of i."""
        import numpy as np

        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        for i, srcs in enumerate(self.neighbors):
            adj[i, list(srcs)] = True
        return adj


def tree_to_graph(tree: ParseTree) -> ConstituencyGraph:
    """Build the leaf-sourced graph of ``tree`` with deterministic indexing."""
    internal_order: list[ParseTree] = []
    spans_by_id: dict[int, tuple[int, int]] = {}
    leaf_tokens: list[str] = []
    leaf_labels: list[str] = []

    def walk(node: ParseTree, next_leaf: int) -> int:
        if node.is_leaf:
            spans_by_id[id(node)] = (next_leaf, next_leaf + 1)
            leaf_tokens.append(node.token)
            leaf_labels.append(node.label)
            return next_leaf + 1
        internal_order.append(node)
        start = next_leaf
        for child in node.children:
            next_leaf = walk(child, next_leaf)
        spans_by_id[id(node)] = (start, next_leaf)
        return next_leaf

    # Pre-order over internal nodes: append before descending.  A tree that
    # is a single leaf cannot come out of parse_bracketed, but handle it.
    n = walk(tree, 0)
    m = len(internal_order)

    neighbors: list[tuple[int, ...]] = [(i,) for i in range(n)]
    spans: list[tuple[int, int]] = [(i, i + 1) for i in range(n)]
    labels: list[str] = list(leaf_labels)
    for node in internal_order:
        start, end = spans_by_id[id(node)]
        neighbors.append(tuple(range(start, end)))
        spans.append((start, end))
        labels.append(node.label)

    return ConstituencyGraph(
        n=n,
        m=m,
        neighbors=tuple(neighbors),
        spans=tuple(spans),
        labels=tuple(labels),
        tokens=tuple(leaf_tokens),
    )


def graph_validate(graph: ConstituencyGraph, tree: ParseTree) -> list[str]:
    """Check every graph invariant against the tree it was built from.

    Returns a list of human-readable violations (empty on success); never
    raises, so it can run as a diagnostic inside preprocessing.
    """
    violations: list[str] = []
    leaves = tree.leaves()
    n = len(leaves)

    if graph.n != n:
        violations.append(f"leaf count mismatch: graph has {graph.n}, tree has {n}")
    if tuple(leaf.token for leaf in leaves) != graph.tokens:
        violations.append("graph tokens do not equal tree leaves in order")
    if len(graph.neighbors) != graph.n + graph.m:
        violations.append("neighbor table size differs from n+m")
        return violations

    for i in range(min(graph.n, n)):
        if tuple(graph.neighbors[i]) != (i,):
            violations.append(f"leaf {i} lacks exactly its self-loop")
        if graph.spans[i] != (i, i + 1):
            violations.append(f"leaf {i} span is not ({i}, {i + 1})")

    # Brute-force leaf descendants per internal node, same pre-order.
    expected: list[tuple[int, int]] = []

    def walk(node: ParseTree, next_leaf: int) -> int:
        if node.is_leaf:
            return next_leaf + 1
        start = next_leaf
        mark = len(expected)
        expected.append((0, 0))  # placeholder to preserve pre-order position
        for child in node.children:
            next_leaf = walk(child, next_leaf)
        expected[mark] = (start, next_leaf)
        return next_leaf

    walk(tree, 0)
    if len(expected) != graph.m:
        violations.append(
            f"internal count mismatch: graph has {graph.m}, tree has {len(expected)}"
        )
        return violations

    for k, (start, end) in enumerate(expected):
        idx = graph.n + k
        srcs = tuple(graph.neighbors[idx])
        if not srcs:
            violations.append(f"internal node {idx} has an empty source set")
            continue
        if any(s >= graph.n for s in srcs):
            violations.append(f"internal node {idx} has a non-leaf source")
        if srcs != tuple(range(start, end)):
            violations.append(
                f"internal node {idx} sources {srcs} differ from leaf descendants "
                f"{tuple(range(start, end))}"
            )
        if graph.spans[idx] != (start, end):
            violations.append(f"internal node {idx} span mismatch")

    if graph.m >= 1:
        root_srcs = tuple(graph.neighbors[graph.n])
        if root_srcs != tuple(range(graph.n)):
            violations.append("root does not cover all leaves")

    expected_edges = graph.n + sum(end - start for start, end in expected)
    if graph.edge_count != expected_edges:
        violations.append(
            f"edge count {graph.edge_count} differs from expected {expected_edges}"
        )
    return violations
