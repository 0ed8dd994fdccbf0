"""Core module for planar-doa"""
from .config import ConfigError, RunConfig, load_geometry
from .geometry import (
    AmbiguousBearing,
    ArrayGeometry,
    GeometryError,
    MicPair,
    bearing_from_tde,
    enumerate_pairs,
    pair_doa_from_polar,
    pair_doa_from_tde,
    to_polar_candidates,
    true_doa,
)
from .kde import AngleSet, KdeError, KdeParams, NoConvergence, find_mode, find_modes, histogram_init
from .processor import FrameRecord, process_frame, process_recording, process_signal, write_records
from .resolver import DoaEstimate, Interpretation, ResolverError, enumerate_interpretations, resolve
from .sim import SimConfig, SimRecord, SimulationError, run_simulation
from .tde import MultichannelFrame, TdeError, estimate_tde, frame_stream, read_wav
from .triangulation import (
    Bearing,
    Node,
    SourceLocation,
    TriangulationError,
    bearing_to_source,
    ottoy_resolve,
    triangulate,
)
from .utils import DoaError, create_error_response, create_response, wrap_angle, wrapped_difference

__all__ = [
    'ConfigError', 'RunConfig', 'load_geometry',
    'AmbiguousBearing', 'ArrayGeometry', 'GeometryError', 'MicPair', 'bearing_from_tde',
    'enumerate_pairs', 'pair_doa_from_polar', 'pair_doa_from_tde', 'to_polar_candidates', 'true_doa',
    'AngleSet', 'KdeError', 'KdeParams', 'NoConvergence', 'find_mode', 'find_modes', 'histogram_init',
    'FrameRecord', 'process_frame', 'process_recording', 'process_signal', 'write_records',
    'DoaEstimate', 'Interpretation', 'ResolverError', 'enumerate_interpretations', 'resolve',
    'SimConfig', 'SimRecord', 'SimulationError', 'run_simulation',
    'MultichannelFrame', 'TdeError', 'estimate_tde', 'frame_stream', 'read_wav',
    'Bearing', 'Node', 'SourceLocation', 'TriangulationError', 'bearing_to_source',
    'ottoy_resolve', 'triangulate',
    'DoaError', 'create_error_response', 'create_response', 'wrap_angle', 'wrapped_difference',
]
