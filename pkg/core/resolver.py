"""Resolution of pair-wise DOA ambiguity by consensus over all interpretations

Each of the N ambiguous bearings offers two candidates, so there are 2^N
interpretations. An interpretation's consensus DOA is the mode of the kernel
density of its chosen angles, and its error is the sum of the wrapped
distances from its angles to that mode. The interpretation with the smallest
error wins; ties go to the lower index.

Interpretation index bit n selects the candidate of bearing n: 0 picks φ′,
1 picks φ″.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import AmbiguousBearing
from .kde import AngleSet, KdeParams, find_modes
from .utils import DoaError, run_ordered, wrapped_difference

logger = logging.getLogger(__name__)

MAX_PAIRS = 24
# masks up to this many pairs get their consensus bounds from a (2^N, N, 2) table
TABLE_BOUND_LIMIT = 16
BOUND_SLACK = 1e-9
DEFAULT_CHUNK_SIZE = 4096
FIRST_CHUNK_SIZE = 32


class ResolverError(DoaError):
    """Bearing count outside the range the resolver accepts"""
    default_error_type = "resolver_error"


@dataclass(frozen=True, eq=False)
class Interpretation:
    """One choice of candidate per bearing"""
    index: int
    selection: Tuple[int, ...]
    angles: AngleSet


@dataclass(frozen=True)
class DoaEstimate:
    """Winning interpretation and its consensus DOA

    Attributes:
        phi_hat: consensus DOA, radians in [0, 2π)
        error: sum of per_pair_residuals, radians
        winner: interpretation index
        per_pair_residuals: wrapped distance of each chosen angle to phi_hat
        phi_init: refinement start of the winning interpretation
        evaluated: interpretations whose mode was computed
        not_converged: evaluated interpretations scored from a non-converged iterate
    """
    phi_hat: float
    error: float
    winner: int
    per_pair_residuals: Tuple[float, ...]
    phi_init: float
    evaluated: int = 0
    not_converged: int = 0
    selection: Tuple[int, ...] = field(default=())

    @property
    def n_pairs(self) -> int:
        return len(self.per_pair_residuals)

    def to_dict(self) -> Dict[str, Any]:
        """Degree-valued summary for CSV/JSON output"""
        return {
            "phi_hat_deg": math.degrees(self.phi_hat),
            "phi_err_deg": math.degrees(self.error),
            "winner_index": self.winner,
            "n_pairs": self.n_pairs,
            "phi_init_deg": math.degrees(self.phi_init),
            "per_pair_residuals_deg": [math.degrees(r) for r in self.per_pair_residuals],
            "evaluated": self.evaluated,
            "not_converged": self.not_converged,
        }


def candidate_matrix(bearings: Sequence[AmbiguousBearing]) -> np.ndarray:
    """(N, 2) array of (φ′, φ″) per bearing"""
    return np.array([b.candidates for b in bearings], dtype=float).reshape(-1, 2)


def _check_count(n: int, minimum: int, max_pairs: int):
    if n < minimum:
        message = ("A single pair is irreducibly ambiguous; at least 2 are needed"
                   if minimum > 1 else "At least one bearing is needed")
        raise ResolverError(message, error_type="too_few_pairs",
                            details={"n_pairs": n, "minimum": minimum})
    if n > max_pairs:
        raise ResolverError(
            f"{n} pairs give 2^{n} interpretations, above the limit of {max_pairs} pairs",
            error_type="too_many_pairs",
            details={"n_pairs": n, "max_pairs": max_pairs}
        )


def mask_bits(masks, n: int) -> np.ndarray:
    """(k, n) 0/1 matrix, column j holding bit j of each mask"""
    masks = np.asarray(masks, dtype=np.int64)
    return (masks[:, np.newaxis] >> np.arange(n)) & 1


def interpretation_angles(candidates: np.ndarray, masks) -> np.ndarray:
    """(k, N) chosen angles for a batch of interpretation indices"""
    bits = mask_bits(masks, candidates.shape[0])
    return np.where(bits == 1, candidates[:, 1], candidates[:, 0])


def enumerate_interpretations(bearings: Sequence[AmbiguousBearing],
                              max_pairs: int = MAX_PAIRS) -> Iterator[Interpretation]:
    """All 2^N interpretations in ascending index order, generated lazily

    Raises ``too_many_pairs`` immediately rather than on first iteration.
    """
    candidates = candidate_matrix(bearings)
    _check_count(candidates.shape[0], 1, max_pairs)
    return _iter_interpretations(candidates)


def _iter_interpretations(candidates: np.ndarray) -> Iterator[Interpretation]:
    n = candidates.shape[0]
    rows = np.arange(n)
    for index in range(1 << n):
        bits = (index >> rows) & 1
        yield Interpretation(index, tuple(int(b) for b in bits),
                             AngleSet(candidates[rows, bits]))


def interpretation_error(angles, phi_hat):
    """Σ_n |wrap(φ_n - φ̂)|, one value per set for a batch"""
    raw = angles.angles if isinstance(angles, AngleSet) else np.asarray(angles, dtype=float)
    if raw.ndim == 1:
        return float(np.sum(wrapped_difference(raw, phi_hat)))
    phi = np.asarray(phi_hat, dtype=float)[:, np.newaxis]
    return np.sum(wrapped_difference(raw, phi), axis=1)


def consensus_lower_bounds(candidates: np.ndarray, masks) -> np.ndarray:
    """Smallest error any consensus DOA could reach, per interpretation

    The wrapped absolute-deviation sum of a set is minimized at one of the
    set's own angles, so min over m of Σ_n |wrap(φ_n - φ_m)| is a lower bound
    on the interpretation error for every mode the density can produce.
    """
    masks = np.asarray(masks, dtype=np.int64)
    n = candidates.shape[0]
    if n <= TABLE_BOUND_LIMIT and masks.size >= (1 << n) // 4:
        return _table_bounds(candidates)[masks]

    bounds = np.empty(masks.size)
    for start in range(0, masks.size, DEFAULT_CHUNK_SIZE):
        angles = interpretation_angles(candidates, masks[start:start + DEFAULT_CHUNK_SIZE])
        spread = wrapped_difference(angles[:, :, np.newaxis], angles[:, np.newaxis, :]).sum(axis=1)
        bounds[start:start + angles.shape[0]] = spread.min(axis=1)
    return bounds


def _table_bounds(candidates: np.ndarray) -> np.ndarray:
    """Lower bounds for every mask of N <= TABLE_BOUND_LIMIT bearings"""
    n = candidates.shape[0]
    # distance[j, c, m, c'] = |wrap(candidate c of j - candidate c' of m)|
    distance = wrapped_difference(candidates[:, :, np.newaxis, np.newaxis],
                                  candidates[np.newaxis, np.newaxis, :, :])

    # totals[mask, m, c'] = Σ_j distance[j, bit_j(mask), m, c'], built one bit at a time
    totals = np.zeros((1, n, 2))
    for j in range(n):
        totals = np.concatenate((totals + distance[j, 0], totals + distance[j, 1]))

    bits = mask_bits(np.arange(1 << n), n)
    spread = np.where(bits == 1, totals[:, :, 1], totals[:, :, 0])
    return spread.min(axis=1)


@dataclass
class _Incumbent:
    error: float = math.inf
    index: int = -1
    phi_hat: float = math.nan
    phi_init: float = math.nan
    angles: Optional[np.ndarray] = None
    evaluated: int = 0
    not_converged: int = 0


def _score_chunk(candidates: np.ndarray, params: KdeParams, masks: np.ndarray):
    angles = interpretation_angles(candidates, masks)
    modes = find_modes(angles, params)
    return masks, angles, modes, interpretation_error(angles, modes.phi_hat)


def _chunk_edges(total: int, chunk_size: int, first: int) -> List[int]:
    """Chunk boundaries that double from ``first`` up to ``chunk_size``"""
    starts, start, size = [], 0, min(first, chunk_size)
    while start < total:
        starts.append(start)
        start += size
        size = min(2 * size, chunk_size)
    return starts + [total]


def resolve(bearings: Sequence[AmbiguousBearing], params: Optional[KdeParams] = None,
            max_pairs: int = MAX_PAIRS, prune: bool = True, workers: int = 1,
            chunk_size: int = DEFAULT_CHUNK_SIZE) -> DoaEstimate:
    """Consensus DOA of the interpretation with the smallest error

    Interpretations are scored in chunks mapped over ``workers`` threads and
    reduced by (error, index), so the winner does not depend on scheduling.
    With ``prune`` on, chunks start at FIRST_CHUNK_SIZE and double up to
    ``chunk_size``; they are visited in ascending order of their consensus
    lower bound and interpretations whose bound already exceeds the
    incumbent error are skipped; the winner is the same as with ``prune=False``.

    A non-converged mode search does not fail the resolve: that
    interpretation is scored at its best iterate and counted in
    ``not_converged``.
    """
    params = params or KdeParams()
    bearings = list(bearings)
    candidates = candidate_matrix(bearings)
    n = candidates.shape[0]
    _check_count(n, 2, max_pairs)

    total = 1 << n
    if prune:
        bounds = consensus_lower_bounds(candidates, np.arange(total))
        order = np.argsort(bounds, kind="stable")
    else:
        bounds = None
        order = np.arange(total)

    chunk_size = max(1, int(chunk_size))
    edges = _chunk_edges(total, chunk_size, FIRST_CHUNK_SIZE if prune else chunk_size)
    chunks = [order[a:b] for a, b in zip(edges, edges[1:])]
    wave = max(1, int(workers))
    best = _Incumbent()

    for start in range(0, len(chunks), wave):
        batch = chunks[start:start + wave]
        if bounds is not None:
            if bounds[batch[0][0]] - BOUND_SLACK > best.error:
                break
            batch = [c[bounds[c] - BOUND_SLACK <= best.error] for c in batch]
            batch = [c for c in batch if c.size]

        results = run_ordered(lambda masks: _score_chunk(candidates, params, masks), batch, workers)
        for masks, angles, modes, errors in results:
            best.evaluated += masks.size
            best.not_converged += modes.not_converged
            i = int(np.lexsort((masks, errors))[0])
            if (errors[i], masks[i]) < (best.error, best.index):
                best.error, best.index = float(errors[i]), int(masks[i])
                best.phi_hat, best.phi_init = float(modes.phi_hat[i]), float(modes.phi0[i])
                best.angles = angles[i]

    residuals = wrapped_difference(best.angles, best.phi_hat)
    if best.not_converged:
        logger.warning("Interpretations scored from non-converged mode searches",
                       extra={"not_converged": best.not_converged, "evaluated": best.evaluated})
    logger.debug("Resolved bearings", extra={"n_pairs": n, "winner": best.index,
                                             "evaluated": best.evaluated, "total": total})

    return DoaEstimate(
        phi_hat=best.phi_hat,
        error=float(np.sum(residuals)),
        winner=best.index,
        per_pair_residuals=tuple(float(r) for r in residuals),
        phi_init=best.phi_init,
        evaluated=best.evaluated,
        not_converged=best.not_converged,
        selection=tuple(int(b) for b in mask_bits([best.index], n)[0]),
    )

