#!/usr/bin/env python3
"""
Flask JSON API for planar-doa
Exposes the resolver, triangulation and a capped simulator over HTTP
"""

from flask import Flask, request, jsonify
from flask_cors import CORS
import math
import os
import sys
import traceback
from datetime import datetime
from typing import Any, Dict, List

# Import from parent directory
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from core.config import RunConfig
from core.geometry import AmbiguousBearing, ArrayGeometry
from core.kde import KdeParams
from core.resolver import resolve
from core.sim import SimConfig, build_summary, run_simulation
from core.triangulation import Bearing, Node, ottoy_resolve, triangulate
from core.utils import DoaError, create_error_response, create_response

VERSION = '1.0.0'
MAX_SIM_ITERATIONS = 2000

# Initialize Flask app
app = Flask(__name__)
CORS(app)  # Enable CORS for all routes

# Configuration
app.config['MAX_CONTENT_LENGTH'] = 1 * 1024 * 1024  # 1MB max request size


class RequestError(DoaError):
    """Malformed request body"""
    default_error_type = "invalid_request"


def _body() -> Dict[str, Any]:
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        raise RequestError("Request body must be a JSON object")
    return data


def _list(data: Dict[str, Any], key: str) -> List[Dict[str, Any]]:
    items = data.get(key)
    if not isinstance(items, list) or not all(isinstance(i, dict) for i in items):
        raise RequestError(f"'{key}' must be a list of objects")
    return items


def _number(item: Dict[str, Any], key: str) -> float:
    try:
        value = float(item[key])
    except (KeyError, TypeError, ValueError):
        raise RequestError(f"Missing or non-numeric '{key}'", details={"item": item})
    if not math.isfinite(value):
        raise RequestError(f"'{key}' must be finite", details={"item": item})
    return value


def _position(item: Dict[str, Any]):
    position = item.get('position', [0.0, 0.0])
    if not isinstance(position, (list, tuple)) or len(position) != 2:
        raise RequestError("'position' must be [x, y]", details={"item": item})
    return _number({'x': position[0]}, 'x'), _number({'y': position[1]}, 'y')


def _error_status(error: DoaError) -> int:
    return 404 if error.error_type == "config_not_found" else 400


def _handle(name: str, func):
    try:
        return jsonify(create_response(True, data=func()))
    except DoaError as e:
        status = _error_status(e)
        return jsonify(create_error_response(str(e), e.error_type, status, e.details)), status
    except (TypeError, ValueError) as e:
        return jsonify(create_error_response(str(e), "invalid_request", 400)), 400
    except Exception as e:
        app.logger.error(f"Error in {name}: {str(e)}\n{traceback.format_exc()}")
        return jsonify(create_error_response(str(e), 'internal_error', 500)), 500


@app.route('/')
def index():
    """List the API endpoints"""
    return jsonify({
        'service': 'planar-doa-api',
        'version': VERSION,
        'endpoints': {
            'GET /api/health': 'Health check',
            'POST /api/resolve': 'Resolve ambiguous pair bearings into one DOA',
            'POST /api/triangulate': 'Least-squares source position from bearings',
            'POST /api/ottoy': 'Resolve node ambiguity by triangulation',
            'POST /api/simulate': f'Monte-Carlo study (at most {MAX_SIM_ITERATIONS} iterations)',
        }
    })


@app.route('/api/health', methods=['GET'])
def health_check():
    """Health check endpoint"""
    return jsonify({
        'status': 'healthy',
        'timestamp': datetime.now().isoformat(),
        'service': 'planar-doa-api',
        'version': VERSION
    })


def _resolve():
    data = _body()
    params = KdeParams(kappa=float(data.get('kappa', 10.0)), bins=int(data.get('bins', 512)),
                       refine=bool(data.get('refine', True)))
    bearings = []
    for item in _list(data, 'candidates'):
        bearings.append(AmbiguousBearing(
            None,
            math.radians(_number(item, 'phi_prime_deg')) % (2 * math.pi),
            math.radians(_number(item, 'phi_double_prime_deg')) % (2 * math.pi),
        ))
    estimate = resolve(bearings, params, prune=bool(data.get('prune', True)))
    return estimate.to_dict()


def _triangulate():
    data = _body()
    bearings = [Bearing(_position(item), math.radians(_number(item, 'angle_deg')))
                for item in _list(data, 'bearings')]
    return triangulate(bearings, method=data.get('method', 'sincos')).to_dict()


def _ottoy():
    data = _body()
    nodes = [Node(_position(item), math.radians(_number(item, 'phi_prime_deg')),
                  math.radians(_number(item, 'phi_double_prime_deg')))
             for item in _list(data, 'nodes')]
    result = ottoy_resolve(nodes, method=data.get('method', 'sincos'))
    return {**result.location.to_dict(), 'mask': result.mask,
            'error_deg': math.degrees(result.error)}


def _simulate():
    data = _body()
    iterations = int(data.get('iterations', 200))
    if not 1 <= iterations <= MAX_SIM_ITERATIONS:
        raise RequestError(f"iterations must be between 1 and {MAX_SIM_ITERATIONS}",
                           details={"iterations": iterations})

    if 'microphones' in data:
        geometry = ArrayGeometry([_position(m) for m in _list(data, 'microphones')],
                                 float(data.get('speed_of_sound', 343.0)))
    else:
        geometry = RunConfig().load_geometry()

    config = SimConfig(
        geometry=geometry,
        iterations=iterations,
        r_min=float(data.get('r_min', 10.0)),
        r_max=float(data.get('r_max', 1000.0)),
        sigma_max=math.radians(float(data.get('sigma_max_deg', 45.0))),
        kappa_range=(float(data.get('kappa_min', 0.1)), float(data.get('kappa_max', 100.0))),
        bins=int(data.get('bins', 512)),
        rng_seed=int(data.get('seed', 0)),
        workers=1,
    )
    records = run_simulation(config)
    return build_summary(records, config, min_records=max(3, min(iterations, 1000)))


@app.route('/api/resolve', methods=['POST'])
def resolve_endpoint():
    """Resolve ambiguous pair bearings (degrees) into one DOA"""
    return _handle('resolve', _resolve)


@app.route('/api/triangulate', methods=['POST'])
def triangulate_endpoint():
    """Least-squares source position from unambiguous bearings"""
    return _handle('triangulate', _triangulate)


@app.route('/api/ottoy', methods=['POST'])
def ottoy_endpoint():
    """Resolve node ambiguity by triangulating every candidate choice"""
    return _handle('ottoy', _ottoy)


@app.route('/api/simulate', methods=['POST'])
def simulate_endpoint():
    """Small Monte-Carlo run returning its summary"""
    return _handle('simulate', _simulate)


if __name__ == '__main__':
    app.run(host='127.0.0.1', port=5001, debug=False)
