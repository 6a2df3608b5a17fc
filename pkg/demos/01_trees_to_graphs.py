"""From a bracketed parse to the leaf-sourced attention graph.

A constituency parse of a sentence becomes a directed graph: every leaf
(token) points at itself and at each of its ancestors, so an internal
constituent's sources are exactly the tokens it covers.  Run with:

    python3 demos/01_trees_to_graphs.py
"""

from aspectgraph import (
    collapse_preterminals,
    graph_validate,
    parse_bracketed,
    serialize_tree,
    tree_to_graph,
)

PARSE = "(S (NP (JJ Great) (NN food)) (CC but) (S (NP (DT the) (NN service)) (VP (VBD was) (ADJP (JJ dreadful)))))"


def describe(graph, title):
    print(f"\n{title}")
    print(f"  {graph.n} leaves + {graph.m} internal nodes = {graph.num_nodes} nodes, "
          f"{graph.edge_count} edges")
    for i in range(graph.num_nodes):
        start, end = graph.spans[i]
        text = " ".join(graph.tokens[start:end])
        kind = "leaf" if i < graph.n else "node"
        print(f"  [{i:2d}] {kind} {graph.labels[i]:<5} covers {graph.spans[i]}: "
              f"{text!r:<40} sources={list(graph.neighbors[i])}")


def main():
    tree = parse_bracketed(PARSE)
    print("input parse:")
    print(" ", serialize_tree(tree))
    print("tokens:", tree.tokens())

    # raw reading: every tagged node is an internal node, including the
    # one-word preterminals (JJ, NN, ...)
    raw_graph = tree_to_graph(tree)
    describe(raw_graph, "graph with preterminals kept (--keep-preterminals)")

    # default pipeline reading: a preterminal merges with its word, so a
    # leaf's parent no longer attends to exactly one leaf
    collapsed = collapse_preterminals(tree)
    graph = tree_to_graph(collapsed)
    describe(graph, "graph with preterminals collapsed (default)")

    print("\nvalidation (should be empty lists):")
    print(" ", graph_validate(raw_graph, tree))
    print(" ", graph_validate(graph, collapsed))


if __name__ == "__main__":
    main()
