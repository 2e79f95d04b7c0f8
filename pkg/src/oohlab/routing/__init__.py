"""Capacitated vehicle routing: heuristic solver, exact oracle, marginal costs."""
from . import backend
from .backend import use_backend
from .solver import *  # noqa: F401,F403
from .solver import __all__ as _solver_all

__all__ = ["backend", "use_backend", *_solver_all]
