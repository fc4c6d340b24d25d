"""Online goal-state (intention) prediction with differentiable optimal control."""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"

from .predictor import IntentionPredictor  # noqa: E402

__all__ = ["IntentionPredictor"]
