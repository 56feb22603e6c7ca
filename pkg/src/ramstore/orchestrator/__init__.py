"""Cluster orchestration: parallel deploy/remove of transient clusters."""

from .deploy import deploy, kill_agent, remove, status
from .launch import launch_parallel
from .plan import DeploymentPlan, DeploymentReport

__all__ = [
    "deploy",
    "kill_agent",
    "remove",
    "status",
    "launch_parallel",
    "DeploymentPlan",
    "DeploymentReport",
]
