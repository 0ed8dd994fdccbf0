"""Least-squares fusion of bearings into a source position, and ambiguity
resolution by triangulation over every candidate choice"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Sequence, Union

import numpy as np

from .geometry import AmbiguousBearing, Point, as_point, true_doa
from .utils import DoaError, run_ordered, wrap_angle, wrapped_difference

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
MAX_NODES = 16
METHODS = ("sincos", "tan")


class TriangulationError(DoaError):
    """Bearing system that cannot be solved"""
    default_error_type = "degenerate_system"


@dataclass(frozen=True)
class Bearing:
    """Unambiguous DOA observed from a sensor position"""
    position: Point
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_point(self.position))
        object.__setattr__(self, "angle", wrap_angle(self.angle))


@dataclass(frozen=True)
class SourceLocation:
    position: Point
    residual_norm: float

    def to_dict(self) -> Dict[str, Any]:
        return {"x": self.position[0], "y": self.position[1],
                "residual_norm": self.residual_norm}


@dataclass(frozen=True)
class Node:
    """Sensor position with its two mirror-image candidate DOAs"""
    position: Point
    phi_prime: float
    phi_double_prime: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_point(self.position))
        object.__setattr__(self, "phi_prime", wrap_angle(self.phi_prime))
        object.__setattr__(self, "phi_double_prime", wrap_angle(self.phi_double_prime))

    @classmethod
    def from_bearing(cls, bearing: AmbiguousBearing) -> "Node":
        return cls(bearing.position, bearing.phi_prime, bearing.phi_double_prime)


class OttoyResult(NamedTuple):
    location: SourceLocation
    mask: int
    error: float


def _system(positions: np.ndarray, angles: np.ndarray, method: str):
    qx, qy = positions[:, 0], positions[:, 1]
    if method == "tan":
        # p_x·tan φ - p_y = q_x·tan φ - q_y, undefined where cos φ = 0
        t = np.tan(angles)
        return np.column_stack((t, -np.ones_like(t))), t * qx - qy
    s, c = np.sin(angles), np.cos(angles)
    return np.column_stack((s, -c)), s * qx - c * qy


def triangulate(bearings: Sequence[Bearing], method: str = "sincos") -> SourceLocation:
    """Least-squares intersection of two or more bearing lines

    ``method="sincos"`` solves sin φ·p_x - cos φ·p_y = sin φ·q_x - cos φ·q_y,
    whose residual is the perpendicular distance in meters from the solution
    to each bearing line. ``method="tan"`` solves the same lines divided by
    cos φ.

    Raises:
        TriangulationError: ``too_few_bearings`` below two bearings,
            ``degenerate_system`` when the condition number exceeds 1e12
    """
    if method not in METHODS:
        raise TriangulationError(f"Unknown triangulation method: {method}",
                                 error_type="invalid_method",
                                 details={"method": method, "choices": list(METHODS)})
    bearings = list(bearings)
    if len(bearings) < 2:
        raise TriangulationError("Triangulation needs at least 2 bearings",
                                 error_type="too_few_bearings",
                                 details={"bearings": len(bearings)})

    positions = np.array([b.position for b in bearings], dtype=float)
    angles = np.array([b.angle for b in bearings], dtype=float)
    a, rhs = _system(positions, angles, method)

    with np.errstate(all="ignore"):
        cond = np.linalg.cond(a) if np.all(np.isfinite(a)) else math.inf
    if not cond <= CONDITION_LIMIT:
        raise TriangulationError(
            "Bearing lines are parallel or nearly so",
            details={"condition_number": float(cond), "limit": CONDITION_LIMIT}
        )

    solution, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    residual = float(np.linalg.norm(a @ solution - rhs))
    return SourceLocation((float(solution[0]), float(solution[1])), residual)


def bearing_to_source(q: Sequence[float], p: Sequence[float]) -> float:
    """Four-quadrant angle from sensor q to source p, in [0, 2π)"""
    return true_doa(q, p)


def _mask_error(positions: np.ndarray, candidates: np.ndarray, mask: int,
                method: str) -> float:
    bits = (mask >> np.arange(len(positions))) & 1
    angles = np.where(bits == 1, candidates[:, 1], candidates[:, 0])
    try:
        location = triangulate([Bearing(tuple(q), phi) for q, phi in zip(positions, angles)],
                               method=method)
    except TriangulationError:
        return math.inf

    offsets = np.asarray(location.position) - positions
    if np.any(np.hypot(offsets[:, 0], offsets[:, 1]) == 0.0):
        return math.inf
    implied = wrap_angle(np.arctan2(offsets[:, 1], offsets[:, 0]))
    return float(np.sum(wrapped_difference(angles, implied)))


def ottoy_resolve(nodes: Sequence[Union[Node, AmbiguousBearing]], max_nodes: int = MAX_NODES,
                  workers: int = 1, method: str = "sincos") -> OttoyResult:
    """Resolve node ambiguity by triangulating every candidate choice

    Each mask (bit n = 1 picks node n's φ″) is triangulated, the angle from
    every node to the solution is recomputed, and the mask is scored by the
    summed wrapped difference between chosen and recomputed angles. The
    smallest score wins, ties by lower mask. Masks whose system is degenerate
    score infinity.

    Raises:
        TriangulationError: ``too_few_bearings`` below three nodes,
            ``too_many_nodes`` above ``max_nodes``, ``all_degenerate`` when
            no mask can be triangulated
    """
    nodes: List[Node] = [n if isinstance(n, Node) else Node.from_bearing(n) for n in nodes]
    if len(nodes) < 3:
        raise TriangulationError("Ambiguity resolution by triangulation needs at least 3 nodes",
                                 error_type="too_few_bearings", details={"nodes": len(nodes)})
    if len(nodes) > max_nodes:
        raise TriangulationError(f"{len(nodes)} nodes exceed the limit of {max_nodes}",
                                 error_type="too_many_nodes",
                                 details={"nodes": len(nodes), "max_nodes": max_nodes})

    positions = np.array([n.position for n in nodes], dtype=float)
    candidates = np.array([(n.phi_prime, n.phi_double_prime) for n in nodes], dtype=float)
    masks = range(1 << len(nodes))
    errors = run_ordered(lambda mask: _mask_error(positions, candidates, mask, method),
                         masks, workers)

    finite = [(err, mask) for mask, err in enumerate(errors) if math.isfinite(err)]
    if not finite:
        raise TriangulationError("Every candidate choice gives a degenerate system",
                                 error_type="all_degenerate", details={"nodes": len(nodes)})
    error, mask = min(finite)

    bits = (mask >> np.arange(len(nodes))) & 1
    angles = np.where(bits == 1, candidates[:, 1], candidates[:, 0])
    location = triangulate([Bearing(tuple(q), phi) for q, phi in zip(positions, angles)],
                           method=method)
    logger.debug("Resolved nodes by triangulation",
                 extra={"nodes": len(nodes), "mask": mask,
                        "degenerate": len(errors) - len(finite)})
    return OttoyResult(location, mask, error)
