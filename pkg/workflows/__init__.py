"""
Workflows LangGraph para orquestar el experimento.
"""

from .experiment_workflow import create_experiment_workflow, run_experiment

__all__ = ["create_experiment_workflow", "run_experiment"]
