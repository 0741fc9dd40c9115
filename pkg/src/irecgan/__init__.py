"""Model-based RL for recommendation with adversarial training."""
__version__ = "0.1.0"
