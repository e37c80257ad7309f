"""Ground-truth oracles that do not rely on message passing.

Two exact partition-sum routes are provided:

``enumerate``
    Plain brute force over every joint value of every edge variable (a double
    edge contributes its ``(x, x')`` pair), multiplying factor lookups. The
    cost is the product of the per-edge state counts.

``pruned``
    Processes factors one at a time, joining each factor's *non-zero* entries
    against a table of partial edge assignments, discarding rows that no
    remaining factor can extend, and summing out edges once both of their
    endpoints have been processed. Exact, and feasible on graphs such as the
    permanent construction whose factors are mostly zero.

The cycle transfer matrix, Ryser's permanent and a permutation-sum permanent
complete the set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, DegenerateMessageError
from .graph import DeNfg, Factor, validate_structure
from .tensor import matrix_power_trace, power_iteration

DEFAULT_BUDGET = 10**8
_CHUNK = 1 << 18


@dataclass(frozen=True)
class CostEstimate:
    total_terms: int
    budget: int

    @property
    def feasible(self) -> bool:
        return self.total_terms <= self.budget


def estimate_cost(g: DeNfg, budget: int = DEFAULT_BUDGET) -> CostEstimate:
    """Number of product terms plain enumeration would visit (exact Python int)."""
    return CostEstimate(math.prod(e.states for e in g.edges.values()), budget)


def port_table(g: DeNfg, f: Factor) -> np.ndarray:
    """Factor tensor with one axis per port, double ports flattened to ``x * a + x'``."""
    perm = [ax for i in range(len(f.ports)) for ax in f.axes(i)]
    shape = [g.edges[p.edge].states for p in f.ports]
    return f.data.transpose(perm).reshape(shape)


def _check(g: DeNfg) -> None:
    problems = validate_structure(g)
    if problems:
        raise ValueError("; ".join(problems))


def _enumerate(g: DeNfg, budget: int, keep: str | None) -> np.ndarray:
    cost = estimate_cost(g, budget)
    if not cost.feasible:
        raise BudgetExceededError(
            f"brute force needs {cost.total_terms} terms, budget is {budget}", cost.total_terms
        )
    edge_ids = list(g.edges)
    pos = {eid: i for i, eid in enumerate(edge_ids)}
    shape = tuple(g.edges[eid].states for eid in edge_ids)
    tables = [(port_table(g, f), [pos[p.edge] for p in f.ports]) for f in g.factors.values()]
    nkeep = g.edges[keep].states if keep else 1
    acc = np.zeros(nkeep, dtype=np.complex128)
    total = cost.total_terms
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        digits = np.unravel_index(idx, shape) if shape else ()
        prod = np.ones(idx.size, dtype=np.complex128)
        for table, where in tables:
            prod *= table[tuple(digits[i] for i in where)] if where else table
        if keep:
            acc += np.bincount(digits[pos[keep]], weights=prod.real, minlength=nkeep)
            acc += 1j * np.bincount(digits[pos[keep]], weights=prod.imag, minlength=nkeep)
        else:
            acc[0] += prod.sum()
    return acc


class _Support:
    """Non-zero entries of a factor, one column per distinct incident edge."""

    def __init__(self, g: DeNfg, f: Factor):
        table = port_table(g, f)
        ports = [p.edge for p in f.ports]
        self.edges = list(dict.fromkeys(ports))
        if not ports:  # a constant factor
            self.vals = table.reshape(1)[table.reshape(1) != 0]
            self.rows = np.zeros((len(self.vals), 0), dtype=np.int64)
            return
        nz = np.nonzero(table)
        vals = table[nz]
        keep = np.ones(vals.size, dtype=bool)
        first = {}
        for i, eid in enumerate(ports):
            if eid in first:  # self-loop: both ports see the same variable
                keep &= nz[first[eid]] == nz[i]
            else:
                first[eid] = i
        cols = [nz[first[eid]][keep] for eid in self.edges]
        self.rows = np.stack(cols, axis=1) if cols else np.zeros((int(keep.sum()), 0), dtype=np.int64)
        self.vals = vals[keep]


def _row_keys(rows: np.ndarray, radices: list[int]) -> np.ndarray:
    # mixed-radix integer code per row; falls back to row labels if int64 overflows
    if math.prod(radices) < 2**62:
        code = np.zeros(len(rows), dtype=np.int64)
        for i, r in enumerate(radices):
            code = code * r + rows[:, i]
        return code
    return np.unique(rows, axis=0, return_inverse=True)[1].ravel()


def _match_keys(a: np.ndarray, b: np.ndarray, radices: list[int]) -> tuple[np.ndarray, np.ndarray]:
    # consistent integer labels for the rows of a and b
    if math.prod(radices) < 2**62:
        return _row_keys(a, radices), _row_keys(b, radices)
    both = np.concatenate([a, b], axis=0)
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.ravel()
    return inv[: len(a)], inv[len(a):]


def _pruned(g: DeNfg, budget: int, keep: str | None) -> np.ndarray:
    supports = {fid: _Support(g, f) for fid, f in g.factors.items()}
    states = {eid: e.states for eid, e in g.edges.items()}
    touching: dict[str, list[str]] = {eid: [] for eid in g.edges}
    for fid, sup in supports.items():
        for eid in sup.edges:
            touching[eid].append(fid)
    order = {fid: i for i, fid in enumerate(g.factors)}
    remaining = set(g.factors)
    done_ends = {eid: 0 for eid in g.edges}
    cols: list[str] = []
    rows = np.zeros((1, 0), dtype=np.int64)
    w = np.ones(1, dtype=np.complex128)

    while remaining:
        assigned = set(cols)
        linked = [fid for fid in remaining if any(e in assigned for e in supports[fid].edges)]
        pool = linked or list(remaining)

        def score(fid):
            sup = supports[fid]
            shared = math.prod(states[e] for e in sup.edges if e in assigned)
            new = sum(1 for e in sup.edges if e not in assigned)
            return (len(sup.vals) / shared, new, order[fid])

        fid = min(pool, key=score)
        sup = supports[fid]
        shared = [e for e in sup.edges if e in assigned]
        fresh = [e for e in sup.edges if e not in assigned]
        colpos = {e: i for i, e in enumerate(cols)}
        if shared:
            kr, ks = _match_keys(
                rows[:, [colpos[e] for e in shared]],
                sup.rows[:, [sup.edges.index(e) for e in shared]],
                [states[e] for e in shared],
            )
        else:
            kr = np.zeros(len(rows), dtype=np.int64)
            ks = np.zeros(len(sup.vals), dtype=np.int64)
        srt = np.argsort(ks, kind="stable")
        ks_sorted = ks[srt]
        lo = np.searchsorted(ks_sorted, kr, "left")
        cnt = np.searchsorted(ks_sorted, kr, "right") - lo
        total = int(cnt.sum())
        if total > budget:
            raise BudgetExceededError(f"pruned enumeration table reached {total} rows, budget is {budget}", total)
        row_idx = np.repeat(np.arange(len(rows)), cnt)
        offsets = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        sup_idx = srt[np.repeat(lo, cnt) + offsets]
        rows = np.concatenate([rows[row_idx], sup.rows[sup_idx][:, [sup.edges.index(e) for e in fresh]]], axis=1)
        w = w[row_idx] * sup.vals[sup_idx]
        cols = cols + fresh
        remaining.discard(fid)
        for e in sup.edges:
            done_ends[e] += g.edges[e].ends.count(fid)

        # drop rows that some unprocessed neighbour can no longer extend
        colpos = {e: i for i, e in enumerate(cols)}
        for hid in sorted({h for e in fresh for h in touching[e] if h in remaining}, key=order.get):
            hs = supports[hid]
            seen = [e for e in hs.edges if e in colpos]
            kr, ks = _match_keys(
                rows[:, [colpos[e] for e in seen]],
                hs.rows[:, [hs.edges.index(e) for e in seen]],
                [states[e] for e in seen],
            )
            ok = np.isin(kr, ks)
            rows, w = rows[ok], w[ok]

        closed = [e for e in cols if done_ends[e] == 2 and e != keep]
        if closed:
            stay = [i for i, e in enumerate(cols) if e not in closed]
            cols = [cols[i] for i in stay]
            rows = rows[:, stay]
            if not cols:
                w = np.array([w.sum()])
                rows = np.zeros((1, 0), dtype=np.int64)
            elif len(rows):
                _, first, inv = np.unique(
                    _row_keys(rows, [states[e] for e in cols]), return_index=True, return_inverse=True
                )
                rows = rows[first]
                inv = inv.ravel()
                w = np.bincount(inv, weights=w.real, minlength=len(rows)) + 1j * np.bincount(
                    inv, weights=w.imag, minlength=len(rows)
                )
        nz = w != 0
        if not nz.all() and cols:
            rows, w = rows[nz], w[nz]

    if keep is None:
        return np.array([w.sum()])
    acc = np.zeros(g.edges[keep].states, dtype=np.complex128)
    np.add.at(acc, rows[:, cols.index(keep)], w)
    return acc


def _dispatch(g: DeNfg, budget: int, method: str, keep: str | None) -> np.ndarray:
    _check(g)
    if method == "auto":
        method = "enumerate" if estimate_cost(g, budget).feasible else "pruned"
    if method == "enumerate":
        return _enumerate(g, budget, keep)
    if method == "pruned":
        return _pruned(g, budget, keep)
    raise ValueError(f"unknown method {method!r}")


def exact_partition_sum(g: DeNfg, budget: int = DEFAULT_BUDGET, method: str = "auto") -> complex:
    """Exact ``Z``: the sum of the global function over all variable values.

    ``method`` is ``"enumerate"``, ``"pruned"`` or ``"auto"`` (enumerate when the
    brute-force term count fits the budget, otherwise pruned).
    """
    return complex(_dispatch(g, budget, method, None)[0])


def exact_marginal(g: DeNfg, edge: str, budget: int = DEFAULT_BUDGET, method: str = "auto") -> np.ndarray:
    """Exact marginal of one edge variable.

    A vector summing to one for single edges, a unit-trace ``[x, x']`` matrix
    for double edges.
    """
    e = g.edges[edge]
    acc = _dispatch(g, budget, method, edge)
    if e.is_double:
        acc = acc.reshape(e.alphabet, e.alphabet)
        mass = np.trace(acc).real
    else:
        mass = acc.sum().real
    if not mass > 0:
        raise DegenerateMessageError(f"edge {edge!r} has zero total mass", edge=edge)
    return acc / mass


# -- cycle transfer matrix ---------------------------------------------------


def b_matrix(F) -> np.ndarray:
    """Reindex a cycle factor ``F[x0, x1, x0', x1']`` into ``B[(x0, x0'), (x1, x1')]``."""
    F = np.asarray(F, dtype=np.complex128)
    if F.ndim != 4 or len(set(F.shape)) != 1:
        raise ValueError(f"expected a [q, q, q, q] tensor, got shape {F.shape}")
    q = F.shape[0]
    return F.transpose(0, 2, 1, 3).reshape(q * q, q * q)


def b_matrix_inverse(B) -> np.ndarray:
    B = np.asarray(B, dtype=np.complex128)
    q = math.isqrt(B.shape[0])
    if B.ndim != 2 or B.shape[0] != B.shape[1] or q * q != B.shape[0]:
        raise ValueError(f"expected a [q^2, q^2] matrix, got shape {B.shape}")
    return B.reshape(q, q, q, q).transpose(0, 2, 1, 3)


def cycle_spectral_z(F, n: int) -> tuple[complex, float, float]:
    """Exact and Bethe partition sums of the ``n``-cycle built from ``F``.

    Returns ``(trace(B**n), lambda0, lambda0**n)`` where ``lambda0`` is the
    dominant eigenvalue of the transfer matrix, found by power iteration
    started from the identity pattern.
    """
    if n < 2:
        raise ValueError("cycle length must be >= 2")
    F = np.asarray(F, dtype=np.complex128)
    if F.ndim == 2:
        q = math.isqrt(F.shape[0])
        F = F.reshape(q, q, q, q)
    B = b_matrix(F)
    q = F.shape[0]
    lam, _ = power_iteration(B, start=np.eye(q).ravel())
    return matrix_power_trace(B, n), lam, lam**n


# -- permanents ----------------------------------------------------------------


def _square_matrix(theta, nmax: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.complex128)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {theta.shape}")
    if not 1 <= theta.shape[0] <= nmax:
        raise ValueError(f"matrix size {theta.shape[0]} outside 1..{nmax}")
    return theta


def ryser_permanent(theta) -> complex:
    """Permanent by Ryser's inclusion-exclusion formula over Gray-code ordered column subsets."""
    a = _square_matrix(theta, 30)
    n = a.shape[0]
    sums = np.zeros(n, dtype=np.complex128)
    in_set = [False] * n
    total = 0j
    size = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        if in_set[j]:
            sums -= a[:, j]
            size -= 1
        else:
            sums += a[:, j]
            size += 1
        in_set[j] = not in_set[j]
        term = complex(np.prod(sums))
        total += -term if size & 1 else term
    return -total if n & 1 else total


def naive_permanent(theta) -> complex:
    """Permanent as the sum over all ``n!`` permutations."""
    a = _square_matrix(theta, 8)
    n = a.shape[0]
    total = 0j
    for sigma in itertools.permutations(range(n)):
        term = 1 + 0j
        for i, j in enumerate(sigma):
            term *= a[i, j]
        total += term
    return total
