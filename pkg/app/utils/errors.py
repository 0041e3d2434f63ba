from typing import Optional


class HJDCError(Exception):
  exit_code = 1


class ConfigError(HJDCError):
  exit_code = 2

  def __init__(self, message: str, path: Optional[str] = None):
    self.path = path
    super().__init__(f"{path}: {message}" if path else message)


class ArtifactIOError(HJDCError):
  exit_code = 3


class NumericalError(HJDCError):
  exit_code = 4


class SingularStateError(NumericalError):
  pass


class OraclePoleError(NumericalError):
  pass


class IntegrationError(NumericalError):

  def __init__(self, step: int, particle: int, integrator_id: str):
    self.step = step
    self.particle = particle
    super().__init__(
      f"non-finite state after step {step} for particle {particle} ({integrator_id})"
    )


class TrainingDivergedError(NumericalError):

  def __init__(self, iteration: int, interval: int):
    self.iteration = iteration
    self.interval = interval
    super().__init__(f"loss became NaN at iteration {iteration} (subinterval {interval})")
