"""Interpretable scoring of procurement RFP responses.

Trains a small Bi-LSTM regressor (plus a random-forest baseline) on
question/response pairs graded 0-100, and explains individual scores by
measuring how much each phrase pushes the prediction up or down.
"""

__version__ = "0.1.0"

from .errors import ScoredeckError

__all__ = ["ScoredeckError", "__version__"]
