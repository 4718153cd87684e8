"""Adaptive model choice between low- and high-fidelity design evaluators for PPO agents."""
from .fidelity import CostLedger, DesignEnv, ModelId, eval_model, quality
from .orchestrator import RunConfig, run_training

__all__ = ["CostLedger", "DesignEnv", "ModelId", "RunConfig", "eval_model", "quality", "run_training"]
__version__ = "0.1.0"
