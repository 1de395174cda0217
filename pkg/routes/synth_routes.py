# routes/synth_routes.py
import logging

from flask import current_app, jsonify, request

from models.rollout import EvaluationRequest
from utils.errors import CurationError

from . import synth_bp


def _provider():
    return current_app.config['SYNTH_PROVIDER']


@synth_bp.route('/evaluate', methods=['POST'])
def evaluate():
    """Per-run correct counts for one (problem, configuration) at the requested budget."""
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        return jsonify({"success": False, "message": "Expected a JSON object body"}), 400
    missing = [key for key in ("problem_id", "config", "runs", "samples_per_run") if key not in payload]
    if missing:
        return jsonify({"success": False, "message": f"Missing required fields: {', '.join(missing)}"}), 400
    try:
        eval_request = EvaluationRequest.from_record(payload)
        counts = _provider().evaluate(eval_request)
    except (CurationError, TypeError, ValueError) as e:
        logging.warning(f"Rejected evaluation request {payload}: {e}")
        return jsonify({"success": False, "message": str(e)}), 400
    except Exception as e:
        logging.error(f"Error serving evaluation request {payload}: {e}", exc_info=True)
        return jsonify({"success": False, "message": f"An unexpected error occurred: {str(e)}"}), 500
    return jsonify({
        "success": True,
        "problem_id": eval_request.problem_id,
        "config": list(eval_request.config.kp_indices),
        "run_counts": counts,
    })


@synth_bp.route('/worlds', methods=['GET'])
def list_worlds():
    return jsonify({"success": True, "worlds": sorted(_provider().worlds)})


@synth_bp.route('/worlds/<problem_id>', methods=['GET'])
def get_world(problem_id):
    world = _provider().worlds.get(problem_id)
    if world is None:
        return jsonify({"success": False, "message": f"Unknown problem {problem_id}"}), 404
    return jsonify({"success": True, "world": world.to_record()})
