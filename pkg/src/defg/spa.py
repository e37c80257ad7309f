"""Sum-product algorithm on DE-NFGs with the flooding schedule.

A message is identified by ``(edge id, slot)``: it travels along the edge
toward the factor sitting in ``ends[slot]``. Single-edge payloads are vectors
over the alphabet, double-edge payloads are ``alphabet x alphabet`` matrices
indexed ``[x, x']``.

Every iteration recomputes all messages from the previous iteration's state
(synchronous update). By default messages are rescaled to unit sum (single)
or unit trace (double) and Hermitized, which only removes rounding drift.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateMessageError, GraphSchemaError, InvariantViolation
from .graph import DeNfg, validate_psd, validate_structure
from .tensor import DEFAULT_TOL, psd_check

log = logging.getLogger(__name__)

MessageKey = tuple[str, int]

INIT_MODES = ("uniform", "delta", "seeded")
NORMALIZATIONS = ("standard", "none")
DEGENERATE_TOL = 1e-12
SINGLE_NEG_TOL = 1e-12


@dataclass(frozen=True)
class SpaConfig:
    """Knobs for :func:`run_spa`.

    ``normalization="standard"`` rescales single-edge messages to sum one and
    double-edge messages to trace one; ``"none"`` leaves them unscaled.
    ``verify`` checks after every iteration that single-edge messages are
    non-negative and double-edge messages positive semi-definite.
    """

    max_iters: int = 1000
    conv_tol: float = 1e-10
    damping: float = 0.0
    normalization: str = "standard"
    hermitize: bool = True
    verify: bool = False
    psd_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be > 0")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class Message:
    edge: str
    slot: int
    target: str
    payload: np.ndarray


@dataclass
class MessageState:
    messages: dict[MessageKey, np.ndarray]
    iteration: int = 0

    def toward(self, g: DeNfg, edge: str, factor: str) -> np.ndarray:
        return self.messages[edge, _slot_toward(g, edge, factor)]

    def incoming(self, g: DeNfg, factor: str) -> list[np.ndarray]:
        """Messages arriving at ``factor``, aligned with its ports."""
        f = g.factors[factor]
        return [self.messages[p.edge, s] for p, s in zip(f.ports, g.port_slots[factor])]

    def scaled(self, factors: dict[MessageKey, float]) -> "MessageState":
        msgs = {k: v * factors.get(k, 1.0) for k, v in self.messages.items()}
        return MessageState(msgs, self.iteration)


@dataclass
class SpaResult:
    state: MessageState
    converged: bool
    iterations: int
    residuals: list[float] = field(default_factory=list)
    z_bethe: complex | None = None
    breakdown: object = None


def _slot_toward(g: DeNfg, edge: str, toward) -> int:
    if isinstance(toward, (int, np.integer)) and not isinstance(toward, bool):
        if toward not in (0, 1):
            raise ValueError(f"slot must be 0 or 1, got {toward}")
        return int(toward)
    ends = g.edges[edge].ends
    if toward not in ends:
        raise ValueError(f"factor {toward!r} is not an endpoint of edge {edge!r}")
    if ends[0] == ends[1]:
        raise ValueError(f"edge {edge!r} is a self-loop; give the slot (0 or 1) instead of the factor")
    return ends.index(toward)


def init_messages(g: DeNfg, mode: str = "uniform", seed: int | None = None) -> MessageState:
    """Strictly positive (definite) initial messages.

    ``uniform`` and ``delta`` both give all-equal single-edge messages and the
    trace-normalized identity (a scaled Kronecker delta) on double edges.
    ``seeded`` draws positive vectors and matrices ``A^H A + 1e-6 I`` from a
    PCG64 stream seeded with ``seed``.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    if mode == "seeded" and seed is None:
        raise ValueError("seeded initialization needs a seed")
    rng = np.random.default_rng(seed) if mode == "seeded" else None
    msgs = {}
    for eid, e in g.edges.items():
        a = e.alphabet
        for slot in (0, 1):
            if rng is None:
                m = np.eye(a) / a if e.is_double else np.full(a, 1.0 / a)
            elif e.is_double:
                z = rng.standard_normal((a, a)) + 1j * rng.standard_normal((a, a))
                m = z.conj().T @ z + 1e-6 * np.eye(a)
                m = m / np.trace(m).real
            else:
                m = rng.uniform(0.1, 1.0, a)
                m = m / m.sum()
            msgs[eid, slot] = m.astype(np.complex128) if e.is_double else m
    return MessageState(msgs, 0)


class _Update:
    """Precomputed contraction producing the message ``key``."""

    __slots__ = ("key", "edge", "double", "tensor", "inputs", "subs", "out")

    def __init__(self, g: DeNfg, key: MessageKey):
        edge, slot = key
        src, port = g.port_of(edge, 1 - slot)
        f = g.factors[src]
        self.key = key
        self.edge = g.edges[edge]
        self.double = self.edge.is_double
        self.tensor = f.data
        self.inputs = []
        self.subs = [list(range(f.data.ndim))]
        for i, (p, s) in enumerate(zip(f.ports, g.port_slots[src])):
            if i == port:
                continue
            self.inputs.append((p.edge, s))
            self.subs.append(list(f.axes(i)))
        self.out = list(f.axes(port))

    def _operands(self, messages) -> list:
        ops = [self.tensor, self.subs[0]]
        for k, sub in zip(self.inputs, self.subs[1:]):
            ops += [messages[k], sub]
        ops.append(self.out)
        return ops

    def raw(self, messages) -> np.ndarray:
        # every message axis is a factor axis, so one pass over the factor
        # tensor is already optimal and skips einsum's path search
        return np.einsum(*self._operands(messages), optimize=False)


def _finish(upd: _Update, raw: np.ndarray, cfg: SpaConfig, iteration: int | None) -> np.ndarray:
    if upd.double:
        if cfg.hermitize:
            raw = 0.5 * (raw + raw.conj().T)
        div = np.trace(raw).real
    else:
        if cfg.hermitize:
            raw = raw.real
        div = raw.sum().real
    if cfg.normalization == "standard":
        if not div > DEGENERATE_TOL * np.max(np.abs(raw)):
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise DegenerateMessageError(
                f"message on edge {upd.key[0]!r} toward slot {upd.key[1]} is degenerate{where} "
                f"(normalizer {div:.3e})",
                edge=upd.key[0],
                iteration=iteration,
            )
        raw = raw / div
    return raw


def update_message(
    g: DeNfg, state: MessageState, edge: str, toward, cfg: SpaConfig | None = None
) -> Message:
    """Recompute one message from the current state.

    ``toward`` is the target factor id, or the slot index for self-loops.
    """
    cfg = cfg or SpaConfig()
    slot = _slot_toward(g, edge, toward)
    upd = _Update(g, (edge, slot))
    payload = _finish(upd, upd.raw(state.messages), cfg, None)
    return Message(edge, slot, g.edges[edge].ends[slot], payload)


def _plan(g: DeNfg) -> list[_Update]:
    return [_Update(g, (eid, slot)) for eid in g.edges for slot in (0, 1)]


def flood_iteration(
    g: DeNfg, state: MessageState, cfg: SpaConfig, plan: list[_Update] | None = None
) -> tuple[MessageState, float]:
    """One synchronous update of every message; returns the new state and max L1 change."""
    plan = plan if plan is not None else _plan(g)
    old = state.messages
    t = state.iteration + 1
    new = {}
    residual = 0.0
    for upd in plan:
        m = _finish(upd, upd.raw(old), cfg, t)
        prev = old[upd.key]
        if cfg.damping:
            m = cfg.damping * prev + (1.0 - cfg.damping) * m
        residual = max(residual, float(np.abs(m - prev).sum()))
        new[upd.key] = m
    return MessageState(new, t), residual


def check_messages(g: DeNfg, state: MessageState, tol: float = DEFAULT_TOL) -> list[str]:
    """Messages that are not non-negative (single) or not PSD (double)."""
    bad = []
    for (eid, slot), m in state.messages.items():
        if g.edges[eid].is_double:
            if not psd_check(m, tol):
                bad.append(f"edge {eid!r} slot {slot}: double-edge message is not PSD")
        else:
            scale = max(1.0, float(np.max(np.abs(m))))
            if np.iscomplexobj(m) and np.max(np.abs(m.imag)) > tol * scale:
                bad.append(f"edge {eid!r} slot {slot}: single-edge message is not real")
            elif np.min(m.real) < -SINGLE_NEG_TOL * scale:
                bad.append(f"edge {eid!r} slot {slot}: single-edge message has negative entries")
    return bad


def run_spa(
    g: DeNfg,
    cfg: SpaConfig | None = None,
    init: str | MessageState = "uniform",
    seed: int | None = None,
    callback: Callable[[MessageState], None] | None = None,
) -> SpaResult:
    """Iterate the flooding schedule until the residual drops below ``cfg.conv_tol``.

    ``callback`` is invoked with the state after every iteration. Running out
    of iterations is not an error: the result carries ``converged=False``.
    """
    cfg = cfg or SpaConfig()
    problems = validate_structure(g)
    if cfg.verify:
        problems += validate_psd(g, cfg.psd_tol)
    if problems:
        raise GraphSchemaError("; ".join(problems))
    state = init if isinstance(init, MessageState) else init_messages(g, init, seed)
    plan = _plan(g)
    residuals: list[float] = []
    converged = False
    while state.iteration < cfg.max_iters:
        state, res = flood_iteration(g, state, cfg, plan)
        residuals.append(res)
        if cfg.verify:
            bad = check_messages(g, state, cfg.psd_tol)
            if bad:
                raise InvariantViolation(f"iteration {state.iteration}: " + "; ".join(bad))
        if callback is not None:
            callback(state)
        if res < cfg.conv_tol:
            converged = True
            break
    log.debug("spa stopped after %d iterations, residual %.3e", state.iteration, residuals[-1])
    return SpaResult(state, converged, state.iteration, residuals)


def beliefs(g: DeNfg, state: MessageState) -> dict[str, np.ndarray]:
    """Edge beliefs from the two opposing messages on each edge.

    Single edges get a probability vector, double edges a unit-trace matrix
    formed from the element-wise product of the two messages.
    """
    out = {}
    for eid, e in g.edges.items():
        b = state.messages[eid, 0] * state.messages[eid, 1]
        norm = np.trace(b).real if e.is_double else b.sum().real
        if not norm > DEGENERATE_TOL * np.max(np.abs(b)):
            raise DegenerateMessageError(f"belief on edge {eid!r} has zero mass", edge=eid)
        out[eid] = b / norm
    return out
