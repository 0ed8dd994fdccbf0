"""Monte-Carlo study of the resolver on a planar array

Each iteration places a far-field source at random in an annulus, perturbs
every pair's true DOA with wrapped Gaussian noise, rebuilds both mirror
candidates per pair and resolves them with a random kernel concentration.
Iteration k draws from its own child of ``SeedSequence(rng_seed)``, so the
records do not depend on how iterations are scheduled over workers.
"""
import logging
import math
from dataclasses import asdict, dataclass
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .geometry import ArrayGeometry, enumerate_pairs, pair_doa_from_polar, to_polar_candidates, true_doa
from .kde import KdeParams, NoConvergence, find_mode
from .resolver import MAX_PAIRS, DoaEstimate, resolve
from .utils import DoaError, TWO_PI, map_ordered, process_pool, signed_difference, wrap_angle, wrapped_difference

logger = logging.getLogger(__name__)

MIN_ANALYSIS_RECORDS = 1000
RECORD_COLUMNS = [
    "iteration", "true_doa_deg", "sigma_deg", "kappa", "phi_hat_deg",
    "output_error_deg", "winner_index", "range_m", "status",
]


class SimulationError(DoaError):
    """Invalid simulation settings or too little data to analyze"""
    default_error_type = "invalid_config"


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo settings; angles in radians, distances in meters"""
    geometry: ArrayGeometry
    iterations: int = 10000
    r_min: float = 10.0
    r_max: float = 1000.0
    sigma_max: float = math.radians(45.0)
    kappa_range: Tuple[float, float] = (0.1, 100.0)
    bins: int = 512
    rng_seed: int = 0
    workers: int = 4
    prune: bool = True
    max_pairs: int = MAX_PAIRS

    def __post_init__(self):
        object.__setattr__(self, "kappa_range", tuple(float(k) for k in self.kappa_range))
        problems = []
        if self.iterations < 1:
            problems.append("iterations must be at least 1")
        if not 0 < self.r_min < self.r_max:
            problems.append("annulus needs 0 < r_min < r_max")
        if not self.sigma_max > 0:
            problems.append("sigma_max must be positive")
        if len(self.kappa_range) != 2 or not 0 < self.kappa_range[0] < self.kappa_range[1]:
            problems.append("kappa_range needs 0 < low < high")
        if problems:
            raise SimulationError("; ".join(problems), details={
                "iterations": self.iterations, "r_min": self.r_min, "r_max": self.r_max,
                "sigma_max": self.sigma_max, "kappa_range": list(self.kappa_range),
            })
        # surfaces bad bins/kappa here rather than in the first iteration
        KdeParams(kappa=self.kappa_range[1], bins=self.bins)


@dataclass(frozen=True)
class SimRecord:
    """One iteration; ``estimate`` is None and ``status`` names the error on failure"""
    iteration: int
    true_doa: float
    sigma: float
    kappa: float
    range_m: float
    estimate: Optional[DoaEstimate]
    output_error: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_row(self) -> Dict[str, Any]:
        estimate = self.estimate
        return {
            "iteration": self.iteration,
            "true_doa_deg": math.degrees(self.true_doa),
            "sigma_deg": math.degrees(self.sigma),
            "kappa": self.kappa,
            "phi_hat_deg": math.degrees(estimate.phi_hat) if estimate else math.nan,
            "output_error_deg": math.degrees(self.output_error),
            "winner_index": estimate.winner if estimate else -1,
            "range_m": self.range_m,
            "status": self.status,
        }


def sample_annulus(rng: np.random.Generator, r_min: float, r_max: float) -> Tuple[float, float, float]:
    """Point uniform by area in r_min < r < r_max around the origin; returns (x, y, r)"""
    r = math.sqrt(rng.uniform(r_min * r_min, r_max * r_max))
    theta = rng.uniform(0.0, TWO_PI)
    return r * math.cos(theta), r * math.sin(theta), r


def _run_iteration(config: SimConfig, pairs, centre: np.ndarray, iteration: int,
                   seed: np.random.SeedSequence) -> SimRecord:
    rng = np.random.default_rng(seed)
    x, y, r = sample_annulus(rng, config.r_min, config.r_max)
    source = (centre[0] + x, centre[1] + y)
    sigma = rng.uniform(0.0, config.sigma_max)
    noise = rng.normal(0.0, 1.0, len(pairs)) * sigma
    kappa = rng.uniform(*config.kappa_range)

    truth = true_doa(tuple(centre), source)
    pair_truth = np.array([true_doa(pair.midpoint, source) for pair in pairs])
    noisy = wrap_angle(pair_truth + noise)
    bearings = [to_polar_candidates(pair_doa_from_polar(phi, pair), pair)
                for phi, pair in zip(noisy, pairs)]

    try:
        estimate = resolve(bearings, KdeParams(kappa=kappa, bins=config.bins),
                           max_pairs=config.max_pairs, prune=config.prune)
    except DoaError as e:
        logger.warning("Simulation iteration failed",
                       extra={"iteration": iteration, "error_type": e.error_type})
        return SimRecord(iteration, truth, sigma, kappa, r, None, math.nan, e.error_type)

    return SimRecord(iteration, truth, sigma, kappa, r, estimate,
                     wrapped_difference(estimate.phi_hat, truth))


def _run_item(config: SimConfig, pairs, centre: np.ndarray,
              item: Tuple[int, np.random.SeedSequence]) -> SimRecord:
    return _run_iteration(config, pairs, centre, *item)


def run_simulation(config: SimConfig,
                   progress_callback: Optional[Callable[[int, int], None]] = None) -> List[SimRecord]:
    """Run ``config.iterations`` independent iterations, returned in iteration order

    With ``config.workers > 1`` iterations are spread over that many processes.
    """
    pairs = enumerate_pairs(config.geometry)
    centre = config.geometry.positions.mean(axis=0)
    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.iterations)
    logger.info("Starting simulation", extra={"iterations": config.iterations,
                                              "pairs": len(pairs), "workers": config.workers})

    records: List[SimRecord] = []
    block = max(1, config.workers) * 64
    run_item = partial(_run_item, config, pairs, centre)
    with process_pool(config.workers) as pool:
        for start in range(0, config.iterations, block):
            items = list(enumerate(seeds[start:start + block], start))
            records.extend(map_ordered(run_item, items, pool, chunksize=8))
            if progress_callback:
                progress_callback(len(records), config.iterations)

    failed = sum(not record.ok for record in records)
    logger.info("Simulation finished", extra={"iterations": len(records), "failed": failed})
    return records


def records_to_frame(records: Sequence[SimRecord]) -> pd.DataFrame:
    """Tabulate records with degree-valued columns in RECORD_COLUMNS order"""
    return pd.DataFrame([record.to_row() for record in records], columns=RECORD_COLUMNS)


def _usable(records: Sequence[SimRecord], min_records: int) -> pd.DataFrame:
    frame = records_to_frame(records)
    frame = frame[frame["status"] == "ok"]
    if len(frame) < min_records:
        raise SimulationError(
            f"Analysis needs at least {min_records} successful records, got {len(frame)}",
            error_type="insufficient_data",
            details={"records": len(frame), "min_records": min_records}
        )
    return frame


@dataclass(frozen=True)
class NoiseRatio:
    """Least-squares fit output_error = slope·sigma + intercept with 95% CI half-widths"""
    slope: float
    intercept: float
    slope_ci: float
    intercept_ci: float
    r_value: float
    n: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def analyze_noise_ratio(records: Sequence[SimRecord],
                        min_records: int = MIN_ANALYSIS_RECORDS) -> NoiseRatio:
    """Regress output error on input noise over the successful records"""
    frame = _usable(records, min_records)
    sigma = frame["sigma_deg"].to_numpy()
    error = frame["output_error_deg"].to_numpy()
    if np.ptp(sigma) == 0:
        raise SimulationError("Records do not span a range of sigma",
                              error_type="insufficient_data", details={"records": len(frame)})

    fit = stats.linregress(sigma, error)
    t = stats.t.ppf(0.975, len(frame) - 2)
    return NoiseRatio(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_ci=float(t * fit.stderr),
        intercept_ci=float(t * fit.intercept_stderr),
        r_value=float(fit.rvalue),
        n=len(frame),
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def analyze_independence(records: Sequence[SimRecord],
                         min_records: int = MIN_ANALYSIS_RECORDS) -> Dict[str, float]:
    """Pearson correlation of output error with source range, true DOA and κ

    A covariate (or error) with zero variance has correlation 0.
    """
    frame = _usable(records, min_records)
    error = frame["output_error_deg"].to_numpy()
    return {
        "range": _pearson(frame["range_m"].to_numpy(), error),
        "true_doa": _pearson(frame["true_doa_deg"].to_numpy(), error),
        "kappa": _pearson(frame["kappa"].to_numpy(), error),
    }


@dataclass(frozen=True)
class ErrorSummary:
    """Distribution of signed DOA errors, degrees"""
    circular_mean_deg: float
    circular_std_deg: float
    mode_deg: float
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def summarize_errors(signed_errors, kappa: float = 10.0, bins: int = 512) -> ErrorSummary:
    """Circular mean, circular standard deviation and density mode of signed errors

    The mode is the orientation bias a constant offset would remove.
    """
    errors = np.asarray(signed_errors, dtype=float).ravel()
    errors = errors[np.isfinite(errors)]
    if errors.size == 0:
        raise SimulationError("No errors to summarize", error_type="insufficient_data")

    try:
        mode = find_mode(wrap_angle(errors), KdeParams(kappa=kappa, bins=bins))
    except NoConvergence as e:
        mode = e.best

    mean = stats.circmean(errors, high=math.pi, low=-math.pi)
    return ErrorSummary(
        circular_mean_deg=math.degrees(signed_difference(mean, 0.0)),
        circular_std_deg=math.degrees(stats.circstd(errors, high=math.pi, low=-math.pi)),
        mode_deg=math.degrees(signed_difference(mode, 0.0)),
        count=int(errors.size),
    )


def signed_errors(records: Sequence[SimRecord]) -> np.ndarray:
    """phi_hat - true_doa in [-π, π) for every successful record"""
    return np.array([signed_difference(r.estimate.phi_hat, r.true_doa)
                     for r in records if r.ok], dtype=float)


def build_summary(records: Sequence[SimRecord], config: SimConfig,
                  min_records: int = MIN_ANALYSIS_RECORDS) -> Dict[str, Any]:
    """Everything ``simulate --summary`` reports; analyses without enough data are None"""
    frame = records_to_frame(records)
    ok = frame[frame["status"] == "ok"]
    summary: Dict[str, Any] = {
        "iterations": len(frame),
        "failed": int(len(frame) - len(ok)),
        "rng_seed": config.rng_seed,
        "mean_output_error_deg": float(ok["output_error_deg"].mean()) if len(ok) else None,
        "median_output_error_deg": float(ok["output_error_deg"].median()) if len(ok) else None,
        "noise_ratio": None,
        "independence": None,
        "error_distribution": None,
    }

    try:
        summary["noise_ratio"] = analyze_noise_ratio(records, min_records).to_dict()
        summary["independence"] = analyze_independence(records, min_records)
    except SimulationError as e:
        logger.warning("Skipping regression analysis", extra={"reason": str(e)})

    if len(ok):
        summary["error_distribution"] = summarize_errors(signed_errors(records)).to_dict()
    return summary
