"""Planar microphone array geometry, microphone pairs and ambiguous pair-wise DOAs

Angles are polar: radians, counterclockwise from the +x axis, in [0, 2π).

Two pair-frame conventions meet here:

* index frame -- ``pair_doa_from_tde`` returns α with α > 0 when the wavefront
  reaches ``index_a`` first (τ = arrival_b - arrival_a);
* line frame -- ``to_polar_candidates`` takes α with α > 0 tilting φ′ toward
  the pair's ``axis_angle`` direction.

``MicPair.orientation`` converts between them and ``bearing_from_tde`` is the
only place the TDE pipeline crosses over.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .utils import DoaError, TWO_PI, wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_SPEED_OF_SOUND = 343.0
DEFAULT_CLAMP_TOLERANCE = 1e-9
COLLINEAR_AREA_TOLERANCE = 1e-12
COINCIDENT_TOLERANCE = 1e-12

Point = Tuple[float, float]


class GeometryError(DoaError):
    """Invalid array geometry or physically impossible pair measurement"""
    default_error_type = "invalid_geometry"


def as_point(value: Sequence[float]) -> Point:
    if len(value) != 2:
        raise GeometryError(
            f"Expected an (x, y) position, got {value!r}",
            details={"value": list(value)}
        )
    return (float(value[0]), float(value[1]))


def _triangle_area(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
    u, w = q - p, r - p
    return 0.5 * abs(u[0] * w[1] - u[1] * w[0])


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar microphone array plus the physical constants it is used with

    Attributes:
        mics: microphone (x, y) positions in meters, index = channel number
        speed_of_sound: meters/second
        orientation_offset: radians added to every DOA estimated with this array
        area_tolerance: minimum largest-triangle area (m²) for a non-linear array
    """
    mics: Tuple[Point, ...]
    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND
    orientation_offset: float = 0.0
    area_tolerance: float = COLLINEAR_AREA_TOLERANCE

    def __post_init__(self):
        object.__setattr__(self, "mics", tuple(as_point(m) for m in self.mics))
        object.__setattr__(self, "speed_of_sound", float(self.speed_of_sound))
        self._validate()

    def _validate(self):
        if len(self.mics) < 3:
            raise GeometryError(
                f"A planar array needs at least 3 microphones, got {len(self.mics)}",
                details={"num_mics": len(self.mics)}
            )
        if not self.speed_of_sound > 0:
            raise GeometryError(
                f"Speed of sound must be positive, got {self.speed_of_sound}",
                details={"speed_of_sound": self.speed_of_sound}
            )

        positions = self.positions
        for a, b in itertools.combinations(range(len(self.mics)), 2):
            if np.hypot(*(positions[b] - positions[a])) <= COINCIDENT_TOLERANCE:
                raise GeometryError(
                    f"Microphones {a} and {b} share a position",
                    details={"index_a": a, "index_b": b}
                )

        max_area = max(
            _triangle_area(positions[i], positions[j], positions[k])
            for i, j, k in itertools.combinations(range(len(self.mics)), 3)
        )
        if max_area < self.area_tolerance:
            raise GeometryError(
                "Microphones are collinear; a non-linear planar array is required",
                details={"max_triangle_area": float(max_area),
                         "area_tolerance": self.area_tolerance}
            )

    @property
    def positions(self) -> np.ndarray:
        return np.array(self.mics, dtype=float)

    @property
    def num_mics(self) -> int:
        return len(self.mics)

    @property
    def aperture(self) -> float:
        """Largest microphone separation in meters"""
        return max(pair.baseline for pair in enumerate_pairs(self))

    def max_tdoa(self) -> float:
        """Largest physically possible delay between any two microphones, seconds"""
        return self.aperture / self.speed_of_sound

    def rotated(self, theta: float) -> "ArrayGeometry":
        """Copy of the array rotated by theta radians about the origin"""
        c, s = math.cos(theta), math.sin(theta)
        mics = tuple((c * x - s * y, s * x + c * y) for x, y in self.mics)
        return ArrayGeometry(mics, self.speed_of_sound, self.orientation_offset, self.area_tolerance)

    @classmethod
    def circular(cls, radius: float, count: int,
                 speed_of_sound: float = DEFAULT_SPEED_OF_SOUND,
                 start_angle: float = 0.0) -> "ArrayGeometry":
        """Uniform circular array centred on the origin, mic 0 at start_angle"""
        angles = start_angle + TWO_PI * np.arange(count) / count
        mics = tuple((radius * math.cos(a), radius * math.sin(a)) for a in angles)
        return cls(mics, speed_of_sound)


@dataclass(frozen=True)
class MicPair:
    """Two microphones treated as a two-element linear array (a node)

    ``axis_angle`` is the direction of the line through both microphones in
    [0, π). ``orientation`` is +1 when the direction from b to a equals
    ``axis_angle`` and -1 when it equals ``axis_angle + π``.
    """
    index_a: int
    index_b: int
    midpoint: Point
    baseline: float
    axis_angle: float
    orientation: int


def make_pair(geometry: ArrayGeometry, index_a: int, index_b: int) -> MicPair:
    """Derive the MicPair for two microphone indices of an array"""
    for index in (index_a, index_b):
        if not 0 <= index < geometry.num_mics:
            raise GeometryError(
                f"Microphone index {index} out of range for {geometry.num_mics} microphones",
                details={"index": index, "num_mics": geometry.num_mics}
            )
    if index_a == index_b:
        raise GeometryError("A pair needs two different microphones",
                            details={"index": index_a})

    (xa, ya), (xb, yb) = geometry.mics[index_a], geometry.mics[index_b]
    ray = wrap_angle(math.atan2(yb - ya, xb - xa))
    if ray >= math.pi:
        axis, orientation = ray - math.pi, 1
    else:
        axis, orientation = ray, -1

    return MicPair(
        index_a=index_a,
        index_b=index_b,
        midpoint=((xa + xb) / 2.0, (ya + yb) / 2.0),
        baseline=math.hypot(xb - xa, yb - ya),
        axis_angle=axis,
        orientation=orientation,
    )


def enumerate_pairs(geometry: ArrayGeometry) -> List[MicPair]:
    """All M·(M-1)/2 microphone pairs ordered by (index_a, index_b), index_a < index_b"""
    pairs = [make_pair(geometry, a, b)
             for a, b in itertools.combinations(range(geometry.num_mics), 2)]
    logger.debug("Generated mic pairs", extra={"num_pairs": len(pairs)})
    return pairs


@dataclass(frozen=True)
class AmbiguousBearing:
    """A pair's two mirror-image polar DOA candidates (φ′, φ″)"""
    pair: MicPair
    phi_prime: float
    phi_double_prime: float

    @property
    def candidates(self) -> Tuple[float, float]:
        return (self.phi_prime, self.phi_double_prime)

    @property
    def position(self) -> Point:
        return self.pair.midpoint

    def swapped(self) -> "AmbiguousBearing":
        """Same bearing with the φ′ / φ″ labels exchanged"""
        return AmbiguousBearing(self.pair, self.phi_double_prime, self.phi_prime)


def reflect(phi: float, axis_angle: float) -> float:
    """Mirror a polar angle across the line at axis_angle"""
    return wrap_angle(2.0 * axis_angle - phi)


def pair_doa_from_tde(tau: float, d: float, v: float,
                      clamp_tolerance: float = DEFAULT_CLAMP_TOLERANCE) -> float:
    """Pair-frame DOA α = arcsin(τv/d), radians in [-π/2, π/2]

    α is measured from the pair's broadside; α > 0 when the wavefront reaches
    ``index_a`` first. Ratios within ``clamp_tolerance`` (relative) of ±1 are
    clamped, anything beyond raises ``out_of_range``.
    """
    if not d > 0 or not v > 0:
        raise GeometryError(
            "Pair distance and speed of sound must be positive",
            details={"d": d, "v": v}
        )

    ratio = tau * v / d
    if abs(ratio) > 1.0:
        if abs(ratio) - 1.0 > clamp_tolerance:
            raise GeometryError(
                f"Delay {tau:.3e} s exceeds the physical maximum {d / v:.3e} s for this pair",
                error_type="out_of_range",
                details={"tau": tau, "d": d, "v": v, "ratio": ratio}
            )
        ratio = math.copysign(1.0, ratio)
    return math.asin(ratio)


def tde_from_pair_doa(alpha: float, d: float, v: float) -> float:
    """Inverse of pair_doa_from_tde: τ = d·sin(α)/v"""
    return d * math.sin(alpha) / v


def to_polar_candidates(alpha: float, pair: MicPair) -> AmbiguousBearing:
    """Map a line-frame pair DOA to its two polar candidates

    φ′ = axis_angle + π/2 - α and φ″ is φ′ mirrored across the pair axis.
    """
    phi_prime = wrap_angle(pair.axis_angle + math.pi / 2.0 - alpha)
    return AmbiguousBearing(pair, phi_prime, reflect(phi_prime, pair.axis_angle))


def bearing_from_tde(tau: float, pair: MicPair, v: float,
                     clamp_tolerance: float = DEFAULT_CLAMP_TOLERANCE) -> AmbiguousBearing:
    """Ambiguous polar bearing for a measured delay τ = arrival_b - arrival_a"""
    alpha = pair_doa_from_tde(tau, pair.baseline, v, clamp_tolerance)
    return to_polar_candidates(pair.orientation * alpha, pair)


def pair_doa_from_polar(phi: float, pair: MicPair) -> float:
    """Line-frame pair DOA a far-field source at polar angle phi produces"""
    return math.asin(max(-1.0, min(1.0, math.cos(phi - pair.axis_angle))))


def true_doa(origin: Sequence[float], target: Sequence[float]) -> float:
    """Four-quadrant polar angle from origin to target, in [0, 2π)"""
    (x0, y0), (x1, y1) = as_point(origin), as_point(target)
    dx, dy = x1 - x0, y1 - y0
    scale = max(1.0, abs(x0), abs(y0), abs(x1), abs(y1))
    if math.hypot(dx, dy) <= np.finfo(float).eps * scale:
        raise GeometryError(
            "DOA undefined: source and sensor coincide",
            error_type="degenerate_geometry",
            details={"from": [x0, y0], "to": [x1, y1]}
        )
    return wrap_angle(math.atan2(dy, dx))
