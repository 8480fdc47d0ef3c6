"""Brute-force reference routines shared by the test modules."""

from __future__ import annotations


import networkx as nx
import numpy as np


def walk_weights(edges, E_hat, W, lam):
    E_hat, W = set(E_hat), set(W)
    return {e: (1.0 if e in E_hat and e in W else 0.0) - (lam if e in W else 0.0) for e in edges}


def condition5_by_enumeration(nodes, edges, E_hat, W, lam, root, tol=1e-12) -> bool:
    """Whether every walk from ``root`` keeps ``#(E_hat & W) >= lam #W``.

    Minimum walk weights are computed for every length up to ``2|V|`` by
    min-plus products over all walks; a reachable simple cycle of negative
    weight (listed by enumeration) makes arbitrarily long walks negative.
    Also requires every node to have an ``E_hat`` successor.
    """
    if any(not any(e[0] == v for e in E_hat) for v in nodes):
        return False
    w = walk_weights(edges, E_hat, W, lam)
    idx = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    A = np.full((n, n), np.inf)
    for (a, b), x in w.items():
        A[idx[a], idx[b]] = min(A[idx[a], idx[b]], x)
    best = np.full(n, np.inf)
    best[idx[root]] = 0.0
    for _ in range(2 * n):
        best = np.min(best[:, None] + A, axis=0)
        if (best < -tol).any():
            return False
    g = nx.DiGraph(edges)
    g.add_nodes_from(nodes)
    reach = nx.descendants(g, root) | {root}
    for cyc in nx.simple_cycles(g):
        if cyc[0] not in reach:
            continue
        total = sum(w[(cyc[i], cyc[(i + 1) % len(cyc)])] for i in range(len(cyc)))
        if total < -tol:
            return False
    return True


def condition5_literal(nodes, edges, E_hat, W, lam, root, max_len, tol=1e-12) -> bool:
    """Literal depth-first enumeration of every walk up to ``max_len`` edges (small graphs only)."""
    if any(not any(e[0] == v for e in E_hat) for v in nodes):
        return False
    w = walk_weights(edges, E_hat, W, lam)
    succ = {v: [e for e in edges if e[0] == v] for v in nodes}
    stack = [(root, 0.0, 0)]
    while stack:
        v, tot, k = stack.pop()
        if tot < -tol:
            return False
        if k < max_len:
            stack.extend((e[1], tot + w[e], k + 1) for e in succ[v])
    return True


def random_digraph(rng, n_max=8):
    n = int(rng.integers(2, n_max + 1))
    nodes = list(range(n))
    edges = set()
    for v in nodes:
        for u in rng.choice(n, size=int(rng.integers(1, min(n, 3) + 1)), replace=False):
            edges.add((v, int(u)))
    edges = sorted(edges)
    E_hat = set()
    for v in nodes:
        out = [e for e in edges if e[0] == v]
        E_hat.add(out[int(rng.integers(len(out)))])
        E_hat.update(e for e in out if rng.random() < 0.3)
    W = {e for e in edges if rng.random() < 0.5}
    lam = float(rng.uniform(0.05, 0.95))
    return nodes, edges, sorted(E_hat), sorted(W), lam


def all_walks(nodes, edges, root, length):
    succ = {v: [e[1] for e in edges if e[0] == v] for v in nodes}
    walks = [[root]]
    for _ in range(length):
        walks = [w + [z] for w in walks for z in succ[w[-1]]]
    return walks


__all__ = ["condition5_by_enumeration", "condition5_literal", "random_digraph", "all_walks"]
