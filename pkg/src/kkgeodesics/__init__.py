"""Reduced geodesic motion on Kaluza-Klein conformally flat 3-metrics.

Modules
-------
geometry   metric families, Christoffel symbols, monopole fields
dynamics   reduced Hamiltonian, equations of motion, Poisson brackets
integrate  adaptive Dormand-Prince integration and drift monitoring
killing    Killing conditions and the van Holten constraint hierarchy
conserved  angular momentum, Runge-Lenz quantities, lifted tensors
cli        scenario runner
"""
from .geometry import DomainError, GaugeStringError, MetricSpec
from .dynamics import PhaseState
from .integrate import IntegratorConfig, Trajectory

__all__ = ["DomainError", "GaugeStringError", "MetricSpec", "PhaseState", "IntegratorConfig",
           "Trajectory"]
__version__ = "0.1.0"
