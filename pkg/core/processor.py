"""Per-frame estimation pipeline shared by the CLI and the HTTP API"""
import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .config import RunConfig
from .geometry import ArrayGeometry, GeometryError, MicPair, bearing_from_tde, enumerate_pairs
from .resolver import DoaEstimate, ResolverError, resolve
from .tde import MultichannelFrame, TdeError, estimate_tde, frame_stream, read_wav
from .utils import run_ordered, wrap_angle

logger = logging.getLogger(__name__)

RECORD_FIELDS = [
    "start_time_s", "phi_hat_deg", "phi_err_deg", "winner_index", "n_pairs_used",
    "status", "reason",
]


@dataclass(frozen=True)
class FrameRecord:
    """Result for one frame: an estimate, or a skip with its reason

    ``phi_hat`` includes the array's orientation offset; ``estimate`` holds
    the raw resolver output.
    """
    start_time: float
    phi_hat: Optional[float]
    estimate: Optional[DoaEstimate]
    n_pairs_used: int
    reason: str = ""

    @property
    def status(self) -> str:
        return "ok" if self.estimate is not None else "skip"

    def to_row(self, position: Optional[Tuple[float, float]] = None) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "start_time_s": round(self.start_time, 9),
            "phi_hat_deg": math.degrees(self.phi_hat) if self.estimate else None,
            "phi_err_deg": math.degrees(self.estimate.error) if self.estimate else None,
            "winner_index": self.estimate.winner if self.estimate else None,
            "n_pairs_used": self.n_pairs_used,
            "status": self.status,
            "reason": self.reason,
        }
        if position is not None:
            row["position_x"], row["position_y"] = position
        return row


def _pair_bearings(frame: MultichannelFrame, pairs: Sequence[MicPair], v: float,
                   config: RunConfig):
    bearings, dropped = [], []
    for pair in pairs:
        try:
            result = estimate_tde(frame, pair, v, config.weighting, config.window)
            bearings.append(bearing_from_tde(result.tau, pair, v))
        except (TdeError, GeometryError) as e:
            dropped.append(e.error_type)
    return bearings, dropped


def process_frame(frame: MultichannelFrame, geometry: ArrayGeometry,
                  pairs: Sequence[MicPair], config: RunConfig) -> FrameRecord:
    """TDE for every pair, then resolve the bearings that survived

    Pairs whose delay estimate fails (silent channel, delay out of range) are
    dropped; fewer than two surviving pairs gives a skip record.
    """
    bearings, dropped = _pair_bearings(frame, pairs, geometry.speed_of_sound, config)
    if dropped:
        logger.debug("Dropped pairs", extra={"start_time": frame.start_time,
                                             "dropped": len(dropped), "reasons": sorted(set(dropped))})

    if len(bearings) < 2:
        reason = dropped[0] if dropped else "too_few_pairs"
        return FrameRecord(frame.start_time, None, None, len(bearings), reason)

    try:
        estimate = resolve(bearings, config.kde_params(), max_pairs=config.max_pairs)
    except ResolverError as e:
        return FrameRecord(frame.start_time, None, None, len(bearings), e.error_type)

    phi = wrap_angle(estimate.phi_hat + geometry.orientation_offset)
    return FrameRecord(frame.start_time, phi, estimate, len(bearings))


def process_signal(signal: np.ndarray, sample_rate: float, geometry: ArrayGeometry,
                   config: RunConfig) -> List[FrameRecord]:
    """Frame channels x samples audio and estimate every frame, ordered by start time"""
    signal = np.atleast_2d(signal)
    MultichannelFrame(signal[:, :1], sample_rate).check_geometry(geometry)
    pairs = enumerate_pairs(geometry)
    frames = frame_stream(signal, sample_rate, config.frame_len, config.hop)

    records = run_ordered(lambda frame: process_frame(frame, geometry, pairs, config),
                          frames, config.workers)
    skipped = sum(record.estimate is None for record in records)
    if skipped:
        logger.warning("Frames skipped", extra={"frames": len(records), "skipped": skipped})
    return records


def process_recording(path: str, geometry: ArrayGeometry, config: RunConfig) -> List[FrameRecord]:
    """Read a multichannel WAV file and estimate every frame"""
    signal, sample_rate = read_wav(path)
    return process_signal(signal, sample_rate, geometry, config)


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_records(rows: Iterable[Dict[str, Any]], stream: TextIO, fmt: str = "csv",
                  fieldnames: Optional[List[str]] = None):
    """Write dict rows as CSV (with header) or JSON lines, LF-terminated"""
    rows = [{key: _finite_or_none(value) for key, value in row.items()} for row in rows]
    if fmt == "json-lines":
        for row in rows:
            stream.write(json.dumps(row, allow_nan=False) + "\n")
        return

    fieldnames = fieldnames or (list(rows[0].keys()) if rows else RECORD_FIELDS)
    writer = csv.DictWriter(stream, fieldnames=fieldnames, lineterminator="\n",
                            extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
