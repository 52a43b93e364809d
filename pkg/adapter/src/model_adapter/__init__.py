"""HTTP adapter serving image classifiers through the logits wire protocol."""

from .models import LinearEchoModel, load_model
from .server import make_server, serve

__version__ = "0.1.0"
