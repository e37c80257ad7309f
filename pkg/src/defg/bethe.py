"""Bethe approximation of the partition sum from a collection of SPA messages.

``Z_Bethe = prod_f Z_f / prod_e Z_e`` where ``Z_f`` contracts factor ``f``
with all of its incoming messages and ``Z_e`` sums the element-wise product
of the two opposing messages on edge ``e``. The quotient is invariant under
positive rescaling of any message, so it may be evaluated on normalized
messages at any iteration.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import VanishingEdgeSumError
from .graph import DeNfg, Edge, Factor
from .spa import MessageState, SpaConfig, SpaResult, run_spa
from .tensor import contract

VANISHING_TOL = 1e-12


@dataclass
class BetheBreakdown:
    z_f: dict[str, complex]
    z_e: dict[str, complex]
    z_bethe: complex
    converged: bool | None = None


def z_factor(f: Factor, incoming: Sequence[np.ndarray]) -> complex:
    """Full contraction of ``f`` with the messages arriving on its ports (port order)."""
    if len(incoming) != len(f.ports):
        raise ValueError(f"factor {f.id!r} has {len(f.ports)} ports, got {len(incoming)} messages")
    ops: list = [f.data, list(range(f.data.ndim))]
    for i, m in enumerate(incoming):
        axes = list(f.axes(i))
        m = np.asarray(m)
        if m.shape != tuple(f.data.shape[a] for a in axes):
            raise ValueError(
                f"factor {f.id!r} port {i}: message shape {m.shape} does not fit tensor axes {axes}"
            )
        ops += [m, axes]
    ops.append([])
    return complex(np.einsum(*ops, optimize=False))


def z_edge(e: Edge, msg_a: np.ndarray, msg_b: np.ndarray) -> complex:
    """Sum over the edge's values of the product of its two opposing messages."""
    shape = (e.alphabet, e.alphabet) if e.is_double else (e.alphabet,)
    msg_a, msg_b = np.asarray(msg_a), np.asarray(msg_b)
    if msg_a.shape != shape or msg_b.shape != shape:
        raise ValueError(f"edge {e.id!r}: messages {msg_a.shape}, {msg_b.shape} do not match {shape}")
    return complex(contract(msg_a, msg_b, [(i, i) for i in range(len(shape))]))


def _log_product(values) -> tuple[float, float]:
    # (log magnitude, phase); magnitude -inf for a zero factor
    logmag, phase = 0.0, 0.0
    for v in values:
        if v == 0:
            return -math.inf, 0.0
        logmag += math.log(abs(v))
        phase += cmath.phase(v)
    return logmag, phase


def z_bethe(g: DeNfg, state: MessageState, converged: bool | None = None) -> BetheBreakdown:
    """Evaluate the Bethe partition sum on the message set ``state``.

    Raises :class:`VanishingEdgeSumError` when some ``|Z_e|`` is at most
    ``1e-12`` times the geometric mean of the ``|Z_f|``.
    """
    zf = {fid: z_factor(f, state.incoming(g, fid)) for fid, f in g.factors.items()}
    ze = {eid: z_edge(e, state.messages[eid, 0], state.messages[eid, 1]) for eid, e in g.edges.items()}
    num_mag, num_phase = _log_product(zf.values())
    if zf and math.isfinite(num_mag):
        threshold = VANISHING_TOL * math.exp(num_mag / len(zf))
    else:
        threshold = 0.0
    for eid, v in ze.items():
        if abs(v) <= threshold:
            raise VanishingEdgeSumError(f"edge {eid!r}: Z_e = {v:.3e} vanishes", edge=eid)
    if not math.isfinite(num_mag):
        return BetheBreakdown(zf, ze, 0j, converged)
    den_mag, den_phase = _log_product(ze.values())
    value = cmath.rect(math.exp(num_mag - den_mag), num_phase - den_phase)
    return BetheBreakdown(zf, ze, value, converged)


def solve(
    g: DeNfg,
    cfg: SpaConfig | None = None,
    init="uniform",
    seed: int | None = None,
    callback=None,
) -> SpaResult:
    """Run the SPA and attach the Bethe partition sum of the final message set."""
    result = run_spa(g, cfg, init=init, seed=seed, callback=callback)
    result.breakdown = z_bethe(g, result.state, converged=result.converged)
    result.z_bethe = result.breakdown.z_bethe
    return result
