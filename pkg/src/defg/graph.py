"""The double-edge normal factor graph data model.

Every edge joins exactly two factor slots (a factor may occupy both, forming a
self-loop). A double edge carries a variable pair ``(x, x')`` over a common
alphabet, a single edge carries one variable ``y``.

Axis convention for a factor tensor: with double ports ``d1..dk`` and single
ports ``s1..sm`` taken in port order, the tensor has shape
``[a(d1)..a(dk), a(d1)..a(dk), a(s1)..a(sm)]``, i.e. the x-block, then the
x'-block, then the y-block.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .errors import GraphSchemaError
from .tensor import DEFAULT_TOL, psd_check


class EdgeKind(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class Edge:
    id: str
    kind: EdgeKind
    alphabet: int
    ends: tuple[str, str]

    @property
    def states(self) -> int:
        """Number of joint values of the edge variable(s)."""
        return self.alphabet**2 if self.kind is EdgeKind.DOUBLE else self.alphabet

    @property
    def is_double(self) -> bool:
        return self.kind is EdgeKind.DOUBLE


@dataclass(frozen=True)
class Port:
    edge: str
    kind: EdgeKind


@dataclass(frozen=True, eq=False)
class Factor:
    id: str
    ports: tuple[Port, ...]
    data: np.ndarray

    @cached_property
    def double_ports(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.ports) if p.kind is EdgeKind.DOUBLE)

    @cached_property
    def single_ports(self) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.ports) if p.kind is EdgeKind.SINGLE)

    def axes(self, port: int) -> tuple[int, ...]:
        """Tensor axes belonging to port ``port``: ``(x, x')`` or ``(y,)``."""
        k = len(self.double_ports)
        if self.ports[port].kind is EdgeKind.DOUBLE:
            i = self.double_ports.index(port)
            return (i, k + i)
        return (2 * k + self.single_ports.index(port),)


@dataclass(frozen=True, eq=False)
class DeNfg:
    edges: dict[str, Edge]
    factors: dict[str, Factor]

    @cached_property
    def port_slots(self) -> dict[str, tuple[int, ...]]:
        """For each factor, the edge slot (0 or 1) that each of its ports occupies.

        The k-th port of factor ``f`` on edge ``e`` takes the k-th slot of
        ``e.ends`` equal to ``f``; this is what tells the two ports of a
        self-loop apart.
        """
        slots = {}
        for fid, f in self.factors.items():
            seen: Counter = Counter()
            out = []
            for p in f.ports:
                e = self.edges[p.edge]
                candidates = [s for s in (0, 1) if e.ends[s] == fid]
                out.append(candidates[seen[p.edge]])
                seen[p.edge] += 1
            slots[fid] = tuple(out)
        return slots

    def port_of(self, edge: str, slot: int) -> tuple[str, int]:
        """The (factor id, port index) sitting in ``slot`` of ``edge``."""
        fid = self.edges[edge].ends[slot]
        for i, (p, s) in enumerate(zip(self.factors[fid].ports, self.port_slots[fid])):
            if p.edge == edge and s == slot:
                return fid, i
        raise KeyError(f"no port of factor {fid!r} occupies slot {slot} of edge {edge!r}")

    def expected_shape(self, factor: Factor) -> tuple[int, ...]:
        a = [self.edges[p.edge].alphabet for p in factor.ports]
        dbl = [a[i] for i in factor.double_ports]
        return tuple(dbl + dbl + [a[i] for i in factor.single_ports])

    def y_alphabets(self, factor: Factor) -> tuple[int, ...]:
        return tuple(self.edges[factor.ports[i].edge].alphabet for i in factor.single_ports)

    def is_cycle_free(self) -> bool:
        return len(self.edges) == len(self.factors) - _components(self)

    def diameter(self) -> int:
        """Longest shortest path between two factors, counted in edges."""
        adj = _adjacency(self)
        best = 0
        for src in self.factors:
            dist = {src: 0}
            queue = deque([src])
            while queue:
                u = queue.popleft()
                for w in adj[u]:
                    if w not in dist:
                        dist[w] = dist[u] + 1
                        queue.append(w)
            best = max(best, max(dist.values()))
        return best


def _adjacency(g: DeNfg) -> dict[str, set[str]]:
    adj = {fid: set() for fid in g.factors}
    for e in g.edges.values():
        a, b = e.ends
        if a in adj and b in adj and a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def _components(g: DeNfg) -> int:
    adj = _adjacency(g)
    seen: set[str] = set()
    count = 0
    for start in g.factors:
        if start in seen:
            continue
        count += 1
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for w in adj[u] - seen:
                seen.add(w)
                stack.append(w)
    return count


def build_graph(
    edges: Iterable[Edge | tuple],
    factors: Iterable[tuple[str, Sequence[str], object]],
) -> DeNfg:
    """Assemble a graph from edges and ``(factor id, port edge ids, tensor)`` triples.

    Edges may be given as :class:`Edge` or as ``(id, kind, alphabet, (end0, end1))``
    tuples. Port kinds are taken from the edges; a port naming an unknown edge
    is kept as a single port so that :func:`validate_structure` can report it.
    """
    edge_map: dict[str, Edge] = {}
    for e in edges:
        if not isinstance(e, Edge):
            eid, kind, alphabet, ends = e
            e = Edge(eid, EdgeKind(kind), int(alphabet), tuple(ends))
        if e.id in edge_map:
            raise ValueError(f"duplicate edge id {e.id!r}")
        edge_map[e.id] = e
    factor_map: dict[str, Factor] = {}
    for fid, port_ids, data in factors:
        if fid in factor_map:
            raise ValueError(f"duplicate factor id {fid!r}")
        ports = tuple(
            Port(eid, edge_map[eid].kind if eid in edge_map else EdgeKind.SINGLE) for eid in port_ids
        )
        factor_map[fid] = Factor(fid, ports, np.asarray(data, dtype=np.complex128))
    return DeNfg(edge_map, factor_map)


def validate_structure(g: DeNfg) -> list[str]:
    """Human-readable structural violations; empty when the graph is well formed."""
    problems = []
    for eid, e in g.edges.items():
        if not isinstance(e.alphabet, int) or e.alphabet < 1:
            problems.append(f"edge {eid!r}: alphabet must be a positive integer, got {e.alphabet!r}")
        if len(e.ends) != 2:
            problems.append(f"edge {eid!r}: needs exactly two endpoints, got {len(e.ends)}")
            continue
        for end in e.ends:
            if end not in g.factors:
                problems.append(f"edge {eid!r}: endpoint {end!r} is not a factor")
    for fid, f in g.factors.items():
        counts = Counter(p.edge for p in f.ports)
        bad_port = False
        for p in f.ports:
            e = g.edges.get(p.edge)
            if e is None:
                problems.append(f"factor {fid!r}: port names unknown edge {p.edge!r}")
                bad_port = True
            elif p.kind is not e.kind:
                problems.append(f"factor {fid!r}: port on edge {p.edge!r} has kind {p.kind.value}, edge is {e.kind.value}")
                bad_port = True
        for eid, n in counts.items():
            e = g.edges.get(eid)
            if e is not None and len(e.ends) == 2 and e.ends.count(fid) != n:
                problems.append(
                    f"factor {fid!r}: has {n} port(s) on edge {eid!r} but the edge lists it {e.ends.count(fid)} time(s)"
                )
                bad_port = True
        if bad_port:
            continue
        expected = g.expected_shape(f)
        if f.data.shape != expected:
            problems.append(f"factor {fid!r}: tensor shape {f.data.shape} != expected {expected}")
        elif not np.all(np.isfinite(f.data)):
            problems.append(f"factor {fid!r}: tensor has non-finite entries")
    for eid, e in g.edges.items():
        if len(e.ends) != 2:
            continue
        for end in set(e.ends):
            f = g.factors.get(end)
            if f is not None and not any(p.edge == eid for p in f.ports):
                problems.append(f"edge {eid!r}: factor {end!r} has no port on it")
    return problems


def factor_matrix_view(f: Factor, y_assignment: Sequence[int] = ()) -> np.ndarray:
    """The x-versus-x' matrix of ``f`` with the single-edge variables fixed.

    Rows enumerate the joint x-assignment of the double ports (row-major, port
    order), columns the joint x'-assignment.
    """
    y = tuple(int(v) for v in y_assignment)
    k = len(f.double_ports)
    if len(y) != len(f.single_ports):
        raise ValueError(f"factor {f.id!r} has {len(f.single_ports)} single ports, got {len(y)} values")
    for axis, v in zip(range(2 * k, f.data.ndim), y):
        if not 0 <= v < f.data.shape[axis]:
            raise IndexError(f"y value {v} out of range for axis of size {f.data.shape[axis]}")
    block = f.data[(Ellipsis,) + y] if y else f.data
    dim = math.prod(f.data.shape[:k])
    return block.reshape(dim, dim)


def validate_psd(g: DeNfg, tol: float = DEFAULT_TOL) -> list[str]:
    """Check the PSD condition of every factor for every single-edge assignment."""
    problems = []
    for fid, f in g.factors.items():
        for y in itertools.product(*(range(a) for a in g.y_alphabets(f))):
            m = factor_matrix_view(f, y)
            if psd_check(m, tol):
                continue
            where = f" at y={y}" if y else ""
            if f.double_ports:
                problems.append(f"factor {fid!r}{where}: x/x' matrix is not positive semi-definite")
            else:
                problems.append(f"factor {fid!r}{where}: value {complex(m[0, 0]):.6g} is not a non-negative real")
    return problems


# -- JSON ------------------------------------------------------------------

GRAPH_SCHEMA = {
    "type": "object",
    "required": ["edges", "factors"],
    "properties": {
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "alphabet", "ends"],
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": ["single", "double"]},
                    "alphabet": {"type": "integer", "minimum": 1},
                    "ends": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "factors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "ports", "shape", "values"],
                "properties": {
                    "id": {"type": "string"},
                    "ports": {"type": "array", "items": {"type": "string"}},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    "values": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "items": {"type": "number"},
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                },
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(GRAPH_SCHEMA)


def _schema_message(doc, err: jsonschema.ValidationError) -> str:
    path = list(err.absolute_path)
    where = "/".join(str(p) for p in path) or "<root>"
    label = ""
    if len(path) >= 2 and path[0] in ("edges", "factors"):
        item = doc[path[0]][path[1]]
        if isinstance(item, dict) and isinstance(item.get("id"), str):
            label = f" ({path[0][:-1]} {item['id']!r})"
    return f"{where}{label}: {err.message}"


def load_graph(text: str, validate: bool = True) -> DeNfg:
    """Parse a graph document.

    Raises :class:`GraphSchemaError` on malformed JSON, schema violations
    and, when ``validate`` is set, structural violations.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphSchemaError(f"invalid JSON: {exc}") from exc
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise GraphSchemaError("; ".join(_schema_message(doc, e) for e in errors))
    factors = []
    for i, fd in enumerate(doc["factors"]):
        shape = fd["shape"]
        if len(fd["values"]) != math.prod(shape):
            raise GraphSchemaError(
                f"factors/{i} (factor {fd['id']!r}): {len(fd['values'])} values for shape {shape}"
            )
        vals = np.array(fd["values"], dtype=np.float64).reshape(-1, 2) if fd["values"] else np.zeros((0, 2))
        data = (vals[:, 0] + 1j * vals[:, 1]).reshape(shape)
        factors.append((fd["id"], fd["ports"], data))
    try:
        g = build_graph(
            ((ed["id"], ed["kind"], ed["alphabet"], tuple(ed["ends"])) for ed in doc["edges"]),
            factors,
        )
    except ValueError as exc:
        raise GraphSchemaError(str(exc)) from exc
    if validate:
        problems = validate_structure(g)
        if problems:
            raise GraphSchemaError("; ".join(problems))
    return g


def graph_to_dict(g: DeNfg) -> dict:
    return {
        "edges": [
            {"id": e.id, "kind": e.kind.value, "alphabet": e.alphabet, "ends": list(e.ends)}
            for e in g.edges.values()
        ],
        "factors": [
            {
                "id": f.id,
                "ports": [p.edge for p in f.ports],
                "shape": list(f.data.shape),
                "values": [[float(v.real), float(v.imag)] for v in f.data.ravel()],
            }
            for f in g.factors.values()
        ],
    }


def save_graph(g: DeNfg) -> str:
    return json.dumps(graph_to_dict(g))


def read_graph(path, validate: bool = True) -> DeNfg:
    with open(path, encoding="utf-8") as fh:
        return load_graph(fh.read(), validate=validate)


def write_graph(g: DeNfg, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(save_graph(g))
        fh.write("\n")


def graphs_equal(a: DeNfg, b: DeNfg) -> bool:
    if a.edges != b.edges or list(a.factors) != list(b.factors):
        return False
    return all(
        fa.ports == fb.ports and fa.data.shape == fb.data.shape and np.array_equal(fa.data, fb.data)
        for fa, fb in zip(a.factors.values(), b.factors.values())
    )


__all__ = [
    "Edge",
    "EdgeKind",
    "Port",
    "Factor",
    "DeNfg",
    "build_graph",
    "validate_structure",
    "validate_psd",
    "factor_matrix_view",
    "load_graph",
    "save_graph",
    "read_graph",
    "write_graph",
    "graph_to_dict",
    "graphs_equal",
]
