"""Random instances and canonical DE-NFG constructions.

All randomness flows through ``numpy.random.Generator`` objects backed by
PCG64 (:func:`make_rng`), whose stream for a given seed is fixed across
platforms and numpy releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotPSDError
from .graph import DeNfg, Edge, EdgeKind, build_graph
from .tensor import psd_check


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_haar_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary: QR of a complex Gaussian matrix, phases of diag(R) removed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_psd_chi2(rng: np.random.Generator, n: int) -> np.ndarray:
    """``U D U^H`` with ``U`` Haar and ``D`` holding squared standard normals (chi-square, 1 dof)."""
    u = random_haar_unitary(rng, n)
    d = rng.standard_normal(n) ** 2
    m = (u * d) @ u.conj().T
    return 0.5 * (m + m.conj().T)


def random_factor_tensor(
    rng: np.random.Generator, double_alphabets: Sequence[int], single_alphabets: Sequence[int] = ()
) -> np.ndarray:
    """A PSD local function: an independent ``random_psd_chi2`` matrix per single-edge assignment.

    With no double ports each value is a non-negative chi-square draw.
    """
    dbl = tuple(double_alphabets)
    sgl = tuple(single_alphabets)
    dim = math.prod(dbl)
    blocks = np.stack([random_psd_chi2(rng, dim) for _ in range(math.prod(sgl))])
    if dim == 1:
        blocks = blocks.real.astype(np.complex128)
    t = blocks.reshape((len(blocks),) + dbl + dbl)
    t = np.moveaxis(t, 0, -1)
    return t.reshape(dbl + dbl + sgl)


def _factor_for(rng, edges: dict[str, Edge], ports: list[str]) -> np.ndarray:
    dbl = [edges[e].alphabet for e in ports if edges[e].is_double]
    sgl = [edges[e].alphabet for e in ports if not edges[e].is_double]
    return random_factor_tensor(rng, dbl, sgl)


def _assemble(rng, edge_list: list[Edge], n_factors: int, prefix: str = "f") -> DeNfg:
    edges = {e.id: e for e in edge_list}
    ports: dict[str, list[str]] = {f"{prefix}{i}": [] for i in range(n_factors)}
    for e in edge_list:
        for end in e.ends:
            ports[end].append(e.id)
    return build_graph(edge_list, [(fid, p, _factor_for(rng, edges, p)) for fid, p in ports.items()])


# -- Example-driven constructions ---------------------------------------------


def cycle_denfg(F, n: int, check: bool = True) -> DeNfg:
    """``n`` copies of the factor ``F[x_i, x_{i+1}, x_i', x_{i+1}']`` wired in a ring.

    Edge ``e{i}`` joins ``f{i-1}`` and ``f{i}`` (indices mod ``n``); factor
    ``f{i}`` has ports ``[e{i}, e{i+1}]``.
    """
    if n < 2:
        raise ValueError("cycle length must be >= 2")
    F = np.asarray(F, dtype=np.complex128)
    if F.ndim == 2:
        q = math.isqrt(F.shape[0])
        F = F.reshape(q, q, q, q)
    if F.ndim != 4 or len(set(F.shape)) != 1:
        raise ValueError(f"cycle factor must have shape [q, q, q, q], got {F.shape}")
    q = F.shape[0]
    if check and not psd_check(F.reshape(q * q, q * q)):
        raise NotPSDError("cycle factor is not positive semi-definite")
    edges = [Edge(f"e{i}", EdgeKind.DOUBLE, q, (f"f{(i - 1) % n}", f"f{i}")) for i in range(n)]
    factors = [(f"f{i}", [f"e{i}", f"e{(i + 1) % n}"], F) for i in range(n)]
    return build_graph(edges, factors)


def random_cycle_factor(rng: np.random.Generator, q: int) -> np.ndarray:
    return random_psd_chi2(rng, q * q).reshape(q, q, q, q)


def cycle_with_chord_denfg(
    rng: np.random.Generator, q: int, chord: tuple[int, int] | None = (0, 2)
) -> DeNfg:
    """A 4-cycle of double edges plus an optional chord double edge.

    Every factor is drawn independently with :func:`random_psd_chi2` at its
    full double-port dimension and reshaped to its port tensor.
    """
    if q < 2:
        raise ValueError("q must be >= 2")
    edge_list = [Edge(f"e{i}", EdgeKind.DOUBLE, q, (f"f{(i - 1) % 4}", f"f{i}")) for i in range(4)]
    if chord is not None:
        a, b = chord
        if a == b or not (0 <= a < 4 and 0 <= b < 4):
            raise ValueError(f"invalid chord {chord}")
        edge_list.append(Edge("c", EdgeKind.DOUBLE, q, (f"f{a}", f"f{b}")))
    return _assemble(rng, edge_list, 4)


def _exactly_one(n: int) -> np.ndarray:
    # indicator over the 2**n row-major assignments of n binary variables
    e = np.zeros(2**n)
    for j in range(n):
        e[1 << (n - 1 - j)] = 1.0
    return e


def permanent_denfg(theta_tilde, check_psd: bool = True) -> DeNfg:
    """Complete-bipartite DE-NFG whose partition sum generalizes the permanent.

    ``theta_tilde`` has shape ``(n, n, 2, 2)``. Factors: ``left{i}`` and
    ``right{j}`` force exactly one active variable in both the x and the x'
    copies, ``t{i}.{j}`` ties the left and right variables of entry ``(i, j)``
    and weights them by ``theta_tilde[i, j][x, x']``. Edges ``L{i}.{j}`` join
    ``left{i}`` to ``t{i}.{j}``, edges ``R{i}.{j}`` join ``t{i}.{j}`` to ``right{j}``.
    """
    tt = np.asarray(theta_tilde, dtype=np.complex128)
    if tt.ndim != 4 or tt.shape[0] != tt.shape[1] or tt.shape[2:] != (2, 2):
        raise ValueError(f"theta_tilde must have shape (n, n, 2, 2), got {tt.shape}")
    n = tt.shape[0]
    if check_psd:
        for i in range(n):
            for j in range(n):
                if not psd_check(tt[i, j]):
                    raise NotPSDError(f"theta_tilde[{i}, {j}] is not positive semi-definite")
    e = _exactly_one(n)
    row = np.outer(e, e).reshape((2,) * (2 * n))
    edges, factors = [], []
    for i in range(n):
        for j in range(n):
            edges.append(Edge(f"L{i}.{j}", EdgeKind.DOUBLE, 2, (f"left{i}", f"t{i}.{j}")))
            edges.append(Edge(f"R{i}.{j}", EdgeKind.DOUBLE, 2, (f"t{i}.{j}", f"right{j}")))
    for i in range(n):
        factors.append((f"left{i}", [f"L{i}.{j}" for j in range(n)], row))
    for j in range(n):
        factors.append((f"right{j}", [f"R{i}.{j}" for i in range(n)], row))
    eye = np.eye(2)
    for i in range(n):
        for j in range(n):
            # t[xL, xR, xL', xR'] = delta(xL, xR) delta(xL', xR') theta~(xL, xL')
            t = np.einsum("ab,cd,ac->abcd", eye, eye, tt[i, j])
            factors.append((f"t{i}.{j}", [f"L{i}.{j}", f"R{i}.{j}"], t))
    return build_graph(edges, factors)


def theta_tilde_diagonal(theta) -> np.ndarray:
    """``diag(1, theta_ij)`` blocks; the partition sum is ``perm(theta)``."""
    theta = np.asarray(theta, dtype=np.complex128)
    tt = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    tt[..., 0, 0] = 1.0
    tt[..., 1, 1] = theta
    return tt


def theta_tilde_rank_one(theta) -> np.ndarray:
    """``(1, theta_ij)^T (1, conj(theta_ij))`` blocks; the partition sum is ``|perm(theta)|**2``."""
    theta = np.asarray(theta, dtype=np.complex128)
    v = np.stack([np.ones_like(theta), theta], axis=-1)
    return v[..., :, None] * v[..., None, :].conj()


def random_theta_tilde(rng: np.random.Generator) -> np.ndarray:
    """``[[1, conj(u)], [u, r]]`` with ``u`` uniform on the unit circle and ``r`` uniform on [1.10, 11.10]."""
    u = np.exp(2j * np.pi * rng.uniform())
    r = rng.uniform(1.10, 11.10)
    return np.array([[1.0, u.conjugate()], [u, r]], dtype=np.complex128)


def random_permanent_denfg(rng: np.random.Generator, n: int) -> DeNfg:
    tt = np.empty((n, n, 2, 2), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            tt[i, j] = random_theta_tilde(rng)
    return permanent_denfg(tt)


# -- quantum chain ------------------------------------------------------------


@dataclass
class QuantumChainSpec:
    """Density matrix, two unitaries and a measurement, all on one state space."""

    rho: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    measurement: list[np.ndarray]

    def problems(self, tol: float = 1e-10) -> list[str]:
        out = []
        d = self.rho.shape[0]
        if abs(np.trace(self.rho) - 1.0) > tol:
            out.append("rho does not have unit trace")
        if not psd_check(self.rho):
            out.append("rho is not positive semi-definite")
        for name, u in (("u0", self.u0), ("u1", self.u1)):
            if u.shape != (d, d) or np.max(np.abs(u.conj().T @ u - np.eye(d))) > tol:
                out.append(f"{name} is not a {d}x{d} unitary")
        if not self.measurement:
            out.append("measurement has no outcomes")
        elif any(m.shape != (d, d) for m in self.measurement):
            out.append("measurement operators must be square on the state space")
        else:
            total = sum(m.conj().T @ m for m in self.measurement)
            if np.max(np.abs(total - np.eye(d))) > tol:
                out.append("measurement operators are not complete")
        return out

    def outcome_probabilities(self) -> np.ndarray:
        """``tr(M_y U0 rho U0^H M_y^H)`` by direct density-matrix evolution."""
        evolved = self.u0 @ self.rho @ self.u0.conj().T
        return np.array([np.trace(m @ evolved @ m.conj().T).real for m in self.measurement])


def quantum_chain_denfg(spec: QuantumChainSpec) -> DeNfg:
    """rho -- U0 -- M -- U1 -- trace chain, with the outcome edge ``y`` closed by an all-ones factor.

    Each unitary node carries ``U[x_out, x_in] * conj(U[x_out', x_in'])`` and
    the measurement node ``M_y[x_out, x_in] * conj(M_y[x_out', x_in'])``.
    """
    problems = spec.problems()
    if problems:
        raise ValueError("; ".join(problems))
    d = spec.rho.shape[0]
    k = len(spec.measurement)
    edges = [
        Edge("a", EdgeKind.DOUBLE, d, ("rho", "U0")),
        Edge("b", EdgeKind.DOUBLE, d, ("U0", "M")),
        Edge("c", EdgeKind.DOUBLE, d, ("M", "U1")),
        Edge("d", EdgeKind.DOUBLE, d, ("U1", "trace")),
        Edge("y", EdgeKind.SINGLE, k, ("M", "outcome")),
    ]

    def channel(u):
        # [x_in, x_out, x_in', x_out']
        return np.einsum("ba,dc->abcd", u, u.conj())

    meas = np.stack([channel(m) for m in spec.measurement], axis=-1)
    factors = [
        ("rho", ["a"], spec.rho),
        ("U0", ["a", "b"], channel(spec.u0)),
        ("M", ["b", "c", "y"], meas),
        ("U1", ["c", "d"], channel(spec.u1)),
        ("trace", ["d"], np.eye(d)),
        ("outcome", ["y"], np.ones(k)),
    ]
    return build_graph(edges, factors)


def random_quantum_chain_spec(rng: np.random.Generator, dim: int = 2, outcomes: int = 2) -> QuantumChainSpec:
    """Random state, Haar unitaries, and a complete measurement cut from a Haar isometry."""
    rho = random_psd_chi2(rng, dim)
    rho = rho / np.trace(rho).real
    u0 = random_haar_unitary(rng, dim)
    u1 = random_haar_unitary(rng, dim)
    w = random_haar_unitary(rng, dim * outcomes)[:, :dim]
    meas = [w[y * dim:(y + 1) * dim, :] for y in range(outcomes)]
    return QuantumChainSpec(rho, u0, u1, meas)


def demo_quantum_chain_spec() -> QuantumChainSpec:
    """|0><0| through a Hadamard, measured in the computational basis."""
    h = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2.0)
    rho = np.array([[1, 0], [0, 0]], dtype=np.complex128)
    proj = [np.diag([1.0, 0.0]).astype(np.complex128), np.diag([0.0, 1.0]).astype(np.complex128)]
    return QuantumChainSpec(rho, h, np.eye(2, dtype=np.complex128), proj)


# -- generic random graphs ----------------------------------------------------


def random_denfg(
    rng: np.random.Generator,
    n_factors: int,
    extra_edges: int = 0,
    alphabets: Sequence[int] = (2, 3),
    p_double: float = 0.6,
    self_loops: bool = False,
) -> DeNfg:
    """Random spanning tree over ``n_factors`` nodes plus ``extra_edges`` cycle-closing edges.

    Edge kinds and alphabets are drawn at random; every factor is PSD by
    construction via :func:`random_factor_tensor`.
    """
    if n_factors < 1:
        raise ValueError("need at least one factor")
    if n_factors == 1 and not self_loops and extra_edges:
        raise ValueError("a single factor can only carry self-loops")
    pairs = [(int(rng.integers(i)), i) for i in range(1, n_factors)]
    for _ in range(extra_edges):
        while True:
            a, b = (int(v) for v in rng.integers(n_factors, size=2))
            if a != b or self_loops:
                break
        pairs.append((a, b))
    edge_list = []
    for k, (a, b) in enumerate(pairs):
        kind = EdgeKind.DOUBLE if rng.uniform() < p_double else EdgeKind.SINGLE
        alphabet = int(rng.choice(alphabets))
        edge_list.append(Edge(f"e{k}", kind, alphabet, (f"f{a}", f"f{b}")))
    return _assemble(rng, edge_list, n_factors)


def random_tree_denfg(rng: np.random.Generator, n_factors: int, **kw) -> DeNfg:
    return random_denfg(rng, n_factors, extra_edges=0, **kw)
