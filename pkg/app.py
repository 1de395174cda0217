# app.py
import logging

from flask import Flask

from services.synth_service import SyntheticProvider


def create_app(worlds, exact=False, paired=False):
    """Flask app serving synthetic rollouts (`synth serve`)."""
    app = Flask(__name__)
    app.config['SYNTH_PROVIDER'] = SyntheticProvider(worlds, exact=exact, paired=paired)

    from routes import synth_bp
    app.register_blueprint(synth_bp)

    logging.info(f"Synthetic provider app created with {len(worlds)} worlds (exact={exact}, paired={paired})")
    return app
