"""Momentum-conserving graph neural SDEs for Brownian particle systems."""
from .evaluation import MetricReport, Protocol, evaluate, zero_shot
from .integrator import em_step, generate_training_data, rollout, simulate
from .models import init_params, predict
from .systems import SystemSpec, default_spec
from .training import TrainConfig, fit

__all__ = [
    "MetricReport",
    "Protocol",
    "SystemSpec",
    "TrainConfig",
    "default_spec",
    "em_step",
    "evaluate",
    "fit",
    "generate_training_data",
    "init_params",
    "predict",
    "rollout",
    "simulate",
    "zero_shot",
]
