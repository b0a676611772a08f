"""Molecules and geometric graphs: QM9-style XYZ parsing, graph assembly and
a versioned JSON graph format.

Edge ``(src, dst)`` carries the displacement ``positions[dst] - positions[src]``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .cg import EdgeBasis, precompute_edge_basis
from .errors import DegenerateDirectionError, DomainError, ParseError, SchemaError

SPECIES = ("H", "C", "N", "O", "F")
ATOMIC_NUMBER = {"H": 1, "C": 6, "N": 7, "O": 8, "F": 9}
BOND_TYPES = ("single", "double", "triple", "aromatic")
QM9_PROPERTY_NAMES = (
    "index", "A", "B", "C", "mu", "alpha", "homo", "lumo", "gap",
    "r2", "zpve", "U0", "U", "H", "G", "Cv",
)
GRAPH_VERSION = 1


@dataclass
class Atom:
    symbol: str
    position: np.ndarray
    charge: float | None = None


@dataclass
class Molecule:
    atoms: list[Atom]
    bonds: list[tuple[int, int, str]] = field(default_factory=list)
    properties: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.atoms)
        for i, j, kind in self.bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise DomainError(f"bond ({i}, {j}) invalid for {n} atoms")
            if kind not in BOND_TYPES:
                raise DomainError(f"unknown bond type {kind!r}")

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=np.float64).reshape(-1, 3)

    @property
    def symbols(self) -> list[str]:
        return [a.symbol for a in self.atoms]

    def structural_hash(self) -> str:
        """SHA-256 over species, exact coordinates, charges, bonds and properties."""
        doc = {
            "atoms": [[a.symbol, [float(x).hex() for x in a.position],
                       None if a.charge is None else float(a.charge).hex()] for a in self.atoms],
            "bonds": [list(b) for b in self.bonds],
            "properties": {k: float(v).hex() for k, v in self.properties.items()},
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- XYZ input


def parse_float(token: str, line: int) -> float:
    """Parse a float, accepting the ``*^`` exponent marker (``1.2*^-3``)."""
    try:
        value = float(token.replace("*^", "e"))
    except ValueError:
        raise ParseError(f"malformed number {token!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {token!r}", line)
    return value


def parse_qm9_xyz(text: str, property_names=None, species=SPECIES) -> Molecule:
    """Parse a QM9-style XYZ record.

    Line 1 holds the atom count, line 2 whitespace-separated properties
    (a leading ``gdb`` tag selects the standard QM9 property names), then one
    ``symbol x y z [charge]`` line per atom. Anything after the atom block is
    ignored.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing atom count", 1)
    try:
        n_atoms = int(lines[0].split()[0])
    except ValueError:
        raise ParseError(f"atom count {lines[0].strip()!r} is not an integer", 1) from None
    if n_atoms < 0:
        raise ParseError("negative atom count", 1)

    properties = {}
    tokens = lines[1].split() if len(lines) > 1 else []
    if tokens and tokens[0] == "gdb":
        tokens = tokens[1:]
        names = property_names or QM9_PROPERTY_NAMES
    else:
        names = property_names or [f"p{i}" for i in range(len(tokens))]
    for i, tok in enumerate(tokens):
        name = names[i] if i < len(names) else f"p{i}"
        properties[name] = parse_float(tok, 2)

    atoms = []
    for idx in range(n_atoms):
        lineno = idx + 3
        if lineno > len(lines):
            raise ParseError(f"atom count {n_atoms} but only {idx} atom lines", lineno)
        parts = lines[lineno - 1].split()
        if len(parts) < 4:
            raise ParseError(f"expected 'symbol x y z [charge]', got {lines[lineno - 1].strip()!r}", lineno)
        symbol = parts[0]
        if symbol not in species:
            raise ParseError(f"unknown species {symbol!r} (atom count {n_atoms} but {idx} atom lines?)", lineno)
        pos = np.array([parse_float(t, lineno) for t in parts[1:4]])
        charge = parse_float(parts[4], lineno) if len(parts) > 4 else None
        atoms.append(Atom(symbol, pos, charge))
    return Molecule(atoms, [], properties)


def read_xyz(path, **kwargs) -> Molecule:
    return parse_qm9_xyz(Path(path).read_text(), **kwargs)


# ------------------------------------------------------------------- graphs


def _bond_index(kind) -> int:
    if kind is None or kind == "none":
        return -1
    return BOND_TYPES.index(kind)


class GeometricGraph:
    """Nodes with positions and typed features, plus directed edges.

    ``node_features[d]`` has shape ``(N, m, 2d+1)``. ``bond`` holds an index
    into :data:`BOND_TYPES` per edge, or -1 for edges without a bond type.
    ``node_graph`` assigns nodes to molecules when several are batched.
    """

    def __init__(self, positions, node_features, src, dst, bond=None, targets=None,
                 species=None, node_graph=None, num_graphs=1):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.node_features = {int(d): np.asarray(f, dtype=np.float64) for d, f in node_features.items()}
        for d, f in self.node_features.items():
            if f.ndim != 3 or f.shape[0] != n or f.shape[2] != 2 * d + 1:
                raise DomainError(f"degree-{d} features have shape {f.shape}, expected ({n}, m, {2 * d + 1})")
        self.src = np.asarray(src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        if self.src.shape != self.dst.shape:
            raise DomainError("src and dst must have equal length")
        if self.src.size and (min(self.src.min(), self.dst.min()) < 0 or max(self.src.max(), self.dst.max()) >= n):
            raise DomainError("edge endpoint out of range")
        if np.any(self.src == self.dst):
            raise DomainError("self-edges are not allowed")
        e = self.src.size
        self.bond = np.full(e, -1, dtype=np.int64) if bond is None else np.asarray(bond, dtype=np.int64).reshape(-1)
        self.targets = dict(targets or {})
        self.species = list(species) if species is not None else None
        self.node_graph = np.zeros(n, dtype=np.int64) if node_graph is None else np.asarray(node_graph, dtype=np.int64)
        self.num_graphs = int(num_graphs)

        self.displacement = self.positions[self.dst] - self.positions[self.src]
        self.distance = np.sqrt(np.sum(self.displacement**2, axis=-1))
        self._basis: dict[int, EdgeBasis] = {}

    @property
    def num_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def num_edges(self) -> int:
        return self.src.size

    @property
    def edge_scalars(self) -> np.ndarray:
        """``(E, 5)``: distance followed by the bond-type one-hot."""
        onehot = np.zeros((self.num_edges, len(BOND_TYPES)))
        has = self.bond >= 0
        onehot[np.flatnonzero(has), self.bond[has]] = 1.0
        return np.concatenate([self.distance[:, None], onehot], axis=1)

    def edge_angles(self):
        """``(alpha, beta)`` arrays: azimuth and angle from the south pole."""
        alpha = np.arctan2(self.displacement[:, 1], self.displacement[:, 0]) % (2 * math.pi)
        beta = math.pi - np.arccos(np.clip(self.displacement[:, 2] / self.distance, -1.0, 1.0))
        return alpha, beta

    def edge_basis(self, max_degree: int) -> EdgeBasis:
        basis = self._basis.get(max_degree)
        if basis is None:
            edges = list(zip(self.src.tolist(), self.dst.tolist()))
            basis = self._basis[max_degree] = precompute_edge_basis(self.displacement, max_degree, edges)
        return basis

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.num_nodes)

    def with_positions(self, positions, node_features=None) -> "GeometricGraph":
        return GeometricGraph(positions, self.node_features if node_features is None else node_features,
                              self.src, self.dst, self.bond, self.targets, self.species,
                              self.node_graph, self.num_graphs)

    def transformed(self, rotation, translation=None) -> "GeometricGraph":
        """Rigidly moved copy; node features are left untouched."""
        pos = self.positions @ np.asarray(rotation).T
        if translation is not None:
            pos = pos + np.asarray(translation)
        return self.with_positions(pos)

    def permuted(self, perm) -> "GeometricGraph":
        """Relabel nodes: new node ``i`` is old node ``perm[i]``; edge order follows."""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        feats = {d: f[perm] for d, f in self.node_features.items()}
        species = [self.species[i] for i in perm] if self.species is not None else None
        return GeometricGraph(self.positions[perm], feats, inverse[self.src], inverse[self.dst], self.bond,
                              self.targets, species, self.node_graph[perm], self.num_graphs)


def node_features_for(symbols) -> np.ndarray:
    """``(N, 6, 1)``: species one-hot over H, C, N, O, F then atomic number."""
    feats = np.zeros((len(symbols), len(SPECIES) + 1, 1))
    for i, s in enumerate(symbols):
        feats[i, SPECIES.index(s), 0] = 1.0
        feats[i, -1, 0] = ATOMIC_NUMBER[s]
    return feats


def build_graph(mol: Molecule, bond_source="explicit", radius: float | None = None) -> GeometricGraph:
    """Assemble a :class:`GeometricGraph` from a molecule.

    ``bond_source="explicit"`` turns every bond into two directed edges;
    ``"cutoff"`` connects all pairs closer than ``radius`` (no bond type).
    """
    pos = mol.positions
    src, dst, bond = [], [], []
    if bond_source == "explicit":
        if not mol.bonds:
            raise DomainError("explicit bond source requires a nonempty bond list")
        for i, j, kind in mol.bonds:
            if np.linalg.norm(pos[i] - pos[j]) < 1e-9:
                raise DegenerateDirectionError(f"bonded atoms {i} and {j} coincide")
            src += [i, j]
            dst += [j, i]
            bond += [_bond_index(kind)] * 2
    elif bond_source == "cutoff":
        if radius is None or radius <= 0:
            raise DomainError("cutoff bond source requires radius > 0")
        n = len(mol.atoms)
        for i in range(n):
            for j in range(n):
                if i != j:
                    d = np.linalg.norm(pos[j] - pos[i])
                    if d < 1e-9:
                        raise DegenerateDirectionError(f"atoms {i} and {j} coincide")
                    if d < radius:
                        src.append(i)
                        dst.append(j)
                        bond.append(-1)
    else:
        raise DomainError(f"unknown bond source {bond_source!r}")
    return GeometricGraph(pos, {0: node_features_for(mol.symbols)}, src, dst, bond,
                          targets=mol.properties, species=mol.symbols)


def batch_graphs(graphs) -> GeometricGraph:
    """Disjoint union; ``node_graph`` records which input each node came from."""
    graphs = list(graphs)
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    degrees = sorted(set().union(*(g.node_features for g in graphs)))
    feats = {d: np.concatenate([g.node_features[d] for g in graphs]) for d in degrees}
    return GeometricGraph(
        np.concatenate([g.positions for g in graphs]),
        feats,
        np.concatenate([g.src + o for g, o in zip(graphs, offsets)]),
        np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]),
        np.concatenate([g.bond for g in graphs]),
        node_graph=np.concatenate([np.full(g.num_nodes, i) for i, g in enumerate(graphs)]),
        num_graphs=len(graphs),
    )


# --------------------------------------------------------------------- JSON

_NUMBER = {"type": "number"}
GRAPH_SCHEMA = {
    "type": "object",
    "required": ["version", "positions", "node_features", "edges"],
    "properties": {
        "version": {"const": GRAPH_VERSION},
        "positions": {"type": "array", "items": {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3}},
        "node_features": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "array"}},
            "additionalProperties": False,
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["src", "dst"],
                "properties": {
                    "src": {"type": "integer", "minimum": 0},
                    "dst": {"type": "integer", "minimum": 0},
                    "bond": {"enum": list(BOND_TYPES) + ["none"]},
                },
            },
        },
        "targets": {"type": "object", "additionalProperties": _NUMBER},
        "species": {"type": "array", "items": {"enum": list(SPECIES)}},
    },
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def graph_to_json(graph: GeometricGraph) -> dict:
    feats = {}
    for d, f in sorted(graph.node_features.items()):
        feats[str(d)] = f[:, :, 0].tolist() if d == 0 else f.tolist()
    doc = {
        "version": GRAPH_VERSION,
        "positions": graph.positions.tolist(),
        "node_features": feats,
        "edges": [
            {"src": int(s), "dst": int(t), "bond": "none" if b < 0 else BOND_TYPES[b]}
            for s, t, b in zip(graph.src, graph.dst, graph.bond)
        ],
        "targets": {k: float(v) for k, v in graph.targets.items()},
    }
    if graph.species is not None:
        doc["species"] = list(graph.species)
    return doc


def graph_from_json(doc) -> GeometricGraph:
    errors = sorted(jsonschema.Draft202012Validator(GRAPH_SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            path.append(missing[0])
        raise SchemaError(err.message, _pointer(path))
    n = len(doc["positions"])
    feats = {}
    for key, rows in doc["node_features"].items():
        d = int(key)
        arr = np.asarray(rows, dtype=np.float64)
        if d == 0 and arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] != n or arr.shape[2] != 2 * d + 1:
            raise SchemaError(f"expected {n} rows of {2 * d + 1}-component channels", f"/node_features/{key}")
        feats[d] = arr
    for i, e in enumerate(doc["edges"]):
        for end in ("src", "dst"):
            if e[end] >= n:
                raise SchemaError(f"node index {e[end]} out of range for {n} nodes", f"/edges/{i}/{end}")
        if e["src"] == e["dst"]:
            raise SchemaError("self-edge", f"/edges/{i}")
    if "species" in doc and len(doc["species"]) != n:
        raise SchemaError(f"expected {n} species", "/species")
    return GeometricGraph(
        doc["positions"] if n else np.zeros((0, 3)),
        feats,
        [e["src"] for e in doc["edges"]],
        [e["dst"] for e in doc["edges"]],
        [_bond_index(e.get("bond")) for e in doc["edges"]],
        targets=doc.get("targets"),
        species=doc.get("species"),
    )


def save_graph_json(graph: GeometricGraph, path):
    Path(path).write_text(json.dumps(graph_to_json(graph)) + "\n")


def load_graph_json(path) -> GeometricGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return graph_from_json(doc)
