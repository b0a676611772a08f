"""Random graphs for property tests and the synthetic Coulomb dataset."""

from __future__ import annotations

import numpy as np

from ..graph import SPECIES, ATOMIC_NUMBER, Atom, GeometricGraph, Molecule, build_graph


def random_positions(rng, n: int, half_width: float = 1.5, min_dist: float = 0.9) -> np.ndarray:
    """Uniform points in a cube, rejecting any closer than ``min_dist``."""
    pts = []
    while len(pts) < n:
        p = rng.uniform(-half_width, half_width, size=3)
        if all(np.linalg.norm(p - q) >= min_dist for q in pts):
            pts.append(p)
    return np.array(pts).reshape(n, 3)


def random_features(rng, fiber, n: int) -> dict:
    return {d: rng.standard_normal((n, m, 2 * d + 1)) for m, d in fiber}


def random_graph(rng, n_nodes: int, edge_prob: float = 0.6, features=None) -> GeometricGraph:
    """Random point cloud with random undirected edges (both directions) and
    random bond types on roughly half of them.
    """
    pos = random_positions(rng, n_nodes, half_width=1.0 + 0.3 * n_nodes, min_dist=0.5)
    src, dst, bond = [], [], []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.uniform() < edge_prob:
                b = int(rng.integers(-1, 4))
                src += [i, j]
                dst += [j, i]
                bond += [b, b]
    return GeometricGraph(pos, features or {}, src, dst, bond)


def coulomb_target(symbols, positions) -> float:
    """Sum over atom pairs of ``z_i z_j / r_ij``."""
    z = np.array([ATOMIC_NUMBER[s] for s in symbols], dtype=np.float64)
    total = 0.0
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            total += z[i] * z[j] / np.linalg.norm(positions[i] - positions[j])
    return float(total)


def synthetic_molecule(rng, min_nodes=4, max_nodes=8, radius=10.0) -> GeometricGraph:
    n = int(rng.integers(min_nodes, max_nodes + 1))
    symbols = [SPECIES[i] for i in rng.integers(0, len(SPECIES), size=n)]
    pos = random_positions(rng, n)
    mol = Molecule([Atom(s, p) for s, p in zip(symbols, pos)], properties={"coulomb": coulomb_target(symbols, pos)})
    return build_graph(mol, "cutoff", radius=radius)


def synthetic_dataset(n_molecules: int, seed: int = 0, min_nodes=4, max_nodes=8) -> list[GeometricGraph]:
    """Random molecules (all pairs within 10 A connected) labelled with the
    invariant Coulomb sum under the ``"coulomb"`` target.
    """
    if n_molecules < 1:
        raise ValueError("need at least one molecule")
    rng = np.random.default_rng(seed)
    return [synthetic_molecule(rng, min_nodes, max_nodes) for _ in range(n_molecules)]
