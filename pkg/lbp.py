"""
Log-space sum-product loopy belief propagation for a Potts model on a torus.

Pairwise factor on every edge: exp(alpha/2 * delta(a_i, a_j)). Messages are
updated synchronously (flooding) with damping and kept max-normalized, so
every log-message entry is <= 0 and the largest entry is exactly 0.

Message layout: log_messages[d, y, x, :] is the message received by site
(x, y) from its neighbour in direction d, with d indexing (E, W, S, N) as in
grid.DIRECTIONS.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import UsageError
from grid import Torus
from settings import LbpOptions

EAST, WEST, SOUTH, NORTH = range(4)
OPPOSITE = (WEST, EAST, NORTH, SOUTH)


@dataclass(frozen=True, eq=False)
class MessageField:
    """
    log_messages: (D, ..., q). On a torus, directions not listed in
    `directions` hold zero messages and carry no edge.
    """
    log_messages: np.ndarray
    directions: Optional[Tuple[int, ...]] = None

    @property
    def count(self) -> int:
        """Number of directed messages, 2 |E| on a torus"""
        n = int(np.prod(self.log_messages.shape[1:-1]))
        return n * (len(self.directions) if self.directions is not None else self.log_messages.shape[0])


@dataclass(frozen=True, eq=False)
class BeliefSet:
    """
    site: (..., q) probability vectors. edge: (..., q, q) probability tables,
    or None when edge beliefs were not requested. On a torus the edge array
    has shape (2, H, W, q, q): index 0 holds the edge to the east neighbour,
    index 1 the edge to the south neighbour; axis -2 is the site's own label.
    On an axis of length 2 the two columns (or rows) hold the same edge seen
    from either end.
    """
    site: np.ndarray
    edge: Optional[np.ndarray]
    converged: bool
    iterations: int
    residual: float
    torus: Optional[Torus] = None
    messages: Optional[MessageField] = None

    @property
    def q(self) -> int:
        return self.site.shape[-1]


def _log_expm1(a: float) -> float:
    """ln(e^a - 1) for a >= 0, -inf at a = 0"""
    if a == 0.0:
        return -math.inf
    return a + math.log(-math.expm1(-a))


def _potts_message(cavity: np.ndarray, log_gain: float) -> np.ndarray:
    """
    m(x) = ln sum_y exp(cavity(y) + alpha/2 delta(x, y)), max-normalized.

    For the Potts factor the sum collapses to S + (e^(alpha/2) - 1) exp(cavity(x))
    with S = sum_y exp(cavity(y)); log_gain is ln(e^(alpha/2) - 1).
    """
    h = cavity - cavity.max(axis=-1, keepdims=True)
    log_total = np.log(np.exp(h).sum(axis=-1, keepdims=True))
    msg = np.logaddexp(log_total, log_gain + h)
    return msg - msg.max(axis=-1, keepdims=True)


def _from_neighbor(arr: np.ndarray, d: int) -> np.ndarray:
    """arr evaluated at each site's neighbour in direction d"""
    if d == EAST:
        return np.roll(arr, -1, axis=1)
    if d == WEST:
        return np.roll(arr, 1, axis=1)
    if d == SOUTH:
        return np.roll(arr, -1, axis=0)
    return np.roll(arr, 1, axis=0)


def _reply_slot(t: Torus, d: int) -> int:
    """
    Slot in which the neighbour in direction d keeps the message it gets from
    us. On an axis of length 2 that neighbour sees us in direction d as well.
    """
    if (d in (EAST, WEST) and t.width == 2) or (d in (SOUTH, NORTH) and t.height == 2):
        return d
    return OPPOSITE[d]


def _damp(computed: np.ndarray, old: np.ndarray, damping: float):
    new = (1.0 - damping) * computed + damping * old
    new -= new.max(axis=-1, keepdims=True)
    return new, float(np.max(np.abs(new - old))) if new.size else 0.0


def _normalize(log_p: np.ndarray, axis) -> np.ndarray:
    p = np.exp(log_p - logsumexp(log_p, axis=axis, keepdims=True))
    return p / p.sum(axis=axis, keepdims=True)


def _check_inputs(log_unaries: np.ndarray, alpha: float):
    if log_unaries.shape[-1] < 2:
        raise UsageError(f"need at least 2 labels, got unaries of shape {log_unaries.shape}")
    if not np.all(np.isfinite(log_unaries)):
        raise UsageError("log-unaries must be finite")
    if not math.isfinite(alpha) or alpha < 0:
        raise UsageError(f"alpha must be finite and non-negative, got {alpha}")


def run_lbp(t: Torus, log_unaries, alpha: float, opts: Optional[LbpOptions] = None,
            edge_beliefs: bool = True) -> BeliefSet:
    """
    Sum-product LBP on the torus for the posterior
    prod_i exp(log_unary_i(a_i)) prod_{ij} exp(alpha/2 delta(a_i, a_j)).

    Stops once the largest log-message change drops below opts.tolerance or
    after opts.max_iters iterations; hitting the cap is reported through
    `converged`, not raised.
    """
    opts = opts or LbpOptions()
    log_unaries = np.asarray(log_unaries, dtype=np.float64)
    if log_unaries.shape[:2] != t.shape or log_unaries.ndim != 3:
        raise UsageError(f"log-unaries must have shape {t.shape + ('q',)}, got {log_unaries.shape}")
    _check_inputs(log_unaries, alpha)

    log_gain = _log_expm1(0.5 * alpha)
    directions = t.directions
    messages = np.zeros((4,) + log_unaries.shape)
    computed = np.zeros_like(messages)
    converged = False
    residual = math.inf
    iterations = 0
    for iterations in range(1, opts.max_iters + 1):
        total = log_unaries + messages.sum(axis=0)
        for d in directions:
            # sent by the neighbour in direction d, excluding what it heard from us
            out = _potts_message(total - messages[_reply_slot(t, d)], log_gain)
            computed[d] = _from_neighbor(out, d)
        messages, residual = _damp(computed, messages, opts.damping)
        if residual < opts.tolerance:
            converged = True
            break

    total = log_unaries + messages.sum(axis=0)
    site = _normalize(total, axis=-1)

    edge = None
    if edge_beliefs:
        diag = 0.5 * alpha * np.eye(log_unaries.shape[-1])
        edge = np.empty((2,) + log_unaries.shape + (log_unaries.shape[-1],))
        for k, d in enumerate((EAST, SOUTH)):
            mine = total - messages[d]
            theirs = _from_neighbor(total - messages[_reply_slot(t, d)], d)
            joint = mine[..., :, None] + theirs[..., None, :] + diag
            edge[k] = _normalize(joint, axis=(-2, -1))

    return BeliefSet(
        site=site, edge=edge, converged=converged, iterations=iterations,
        residual=residual, torus=t, messages=MessageField(messages, directions),
    )


def run_lbp_chain(log_unaries, alpha: float, opts: Optional[LbpOptions] = None) -> BeliefSet:
    """
    The same message equations and schedule on an open path graph of n sites
    (n - 1 edges). BP is exact on a tree, which makes this a reference for
    the torus implementation. Edge beliefs have shape (n - 1, q, q).
    """
    opts = opts or LbpOptions()
    log_unaries = np.asarray(log_unaries, dtype=np.float64)
    if log_unaries.ndim != 2 or log_unaries.shape[0] < 2:
        raise UsageError(f"chain unaries must have shape (n >= 2, q), got {log_unaries.shape}")
    _check_inputs(log_unaries, alpha)

    log_gain = _log_expm1(0.5 * alpha)
    # [0]: from the left neighbour, [1]: from the right neighbour
    messages = np.zeros((2,) + log_unaries.shape)
    converged = False
    residual = math.inf
    iterations = 0
    for iterations in range(1, opts.max_iters + 1):
        total = log_unaries + messages.sum(axis=0)
        computed = np.zeros_like(messages)
        computed[0, 1:] = _potts_message(total[:-1] - messages[1, :-1], log_gain)
        computed[1, :-1] = _potts_message(total[1:] - messages[0, 1:], log_gain)
        messages, residual = _damp(computed, messages, opts.damping)
        if residual < opts.tolerance:
            converged = True
            break

    total = log_unaries + messages.sum(axis=0)
    site = _normalize(total, axis=-1)
    diag = 0.5 * alpha * np.eye(log_unaries.shape[-1])
    mine = (total - messages[1])[:-1]
    theirs = (total - messages[0])[1:]
    edge = _normalize(mine[:, :, None] + theirs[:, None, :] + diag, axis=(-2, -1))
    return BeliefSet(
        site=site, edge=edge, converged=converged, iterations=iterations,
        residual=residual, messages=MessageField(messages),
    )


def mean_agreement(b: BeliefSet) -> float:
    """Average over edges of the probability that both endpoints share a label"""
    if b.edge is None:
        raise UsageError("belief set has no edge beliefs; run LBP with edge_beliefs=True")
    agree = np.trace(b.edge, axis1=-2, axis2=-1)
    if b.torus is None:
        return float(agree.mean())
    t = b.torus
    across = agree[0][:, :1] if t.width == 2 else agree[0]
    down = agree[1][:1] if t.height == 2 else agree[1]
    return float(np.concatenate([across.ravel(), down.ravel()]).mean())
