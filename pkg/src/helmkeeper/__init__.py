"""Learned-model MPC station keeping for a differential-thrust surface vessel."""
from .vessel import CALM, BodyVelocity, Pose, SimState, ThrustCmd, VesselParams, Wind, step, wrap_angle
from .models import HybridModel, MlpModel, Normalizer, SDModel, linearize, load_model, rollout, save_model
from .sysid import Dataset, TrainConfig, generate_maneuvers, sem_grad, sem_loss, train
from .mpc import GoalWeights, MpcConfig, solve
from .guidance import ControllerGains, SupervisorState, dubins_plan, supervisor_step
from .benchmark import Scenario, compare, docking_windows, metrics, run, standard_scenarios

__version__ = "0.1.0"

__all__ = [
    "CALM", "BodyVelocity", "Pose", "SimState", "ThrustCmd", "VesselParams", "Wind", "step", "wrap_angle",
    "HybridModel", "MlpModel", "Normalizer", "SDModel", "linearize", "load_model", "rollout", "save_model",
    "Dataset", "TrainConfig", "generate_maneuvers", "sem_grad", "sem_loss", "train",
    "GoalWeights", "MpcConfig", "solve",
    "ControllerGains", "SupervisorState", "dubins_plan", "supervisor_step",
    "Scenario", "compare", "docking_windows", "metrics", "run", "standard_scenarios",
]
