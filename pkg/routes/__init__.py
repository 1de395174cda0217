# routes/__init__.py
from flask import Blueprint

# Create blueprints
synth_bp = Blueprint('synth', __name__, url_prefix='/api')

# Import routes to register them with the blueprints
from . import synth_routes
