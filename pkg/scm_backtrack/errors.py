from __future__ import annotations


class BacktrackError(Exception):
  pass


class CyclicGraph(BacktrackError, ValueError):
  pass


class DimensionMismatch(BacktrackError, ValueError):
  pass


class InversionFailure(BacktrackError, ValueError):
  pass


class NumericalFailure(BacktrackError, ArithmeticError):
  pass


class NonFinite(NumericalFailure):
  pass


class OscillationDetected(NumericalFailure):
  def __init__(self, message: str, iteration: int = 0):
    super().__init__(message)
    self.iteration = iteration


class InfeasibleSparsity(BacktrackError):
  def __init__(self, message: str, residual: float = 0.0, reference: float = 0.0):
    super().__init__(message)
    self.residual = residual
    self.reference = reference


class UnknownDistanceKind(BacktrackError, KeyError):
  def __str__(self) -> str:
    return str(self.args[0]) if self.args else ''


class UnknownMechanismKind(BacktrackError, KeyError):
  def __str__(self) -> str:
    return str(self.args[0]) if self.args else ''


class EmptyDataset(BacktrackError, ValueError):
  pass


class InvalidPlan(BacktrackError, ValueError):
  pass


class ModelNotFound(BacktrackError, FileNotFoundError):
  pass


class IoFailure(BacktrackError, OSError):
  pass
