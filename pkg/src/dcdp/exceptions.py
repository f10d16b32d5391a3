"""Exceptions raised by the solvers and samplers."""


class NonFiniteError(FloatingPointError):
    """An iterate became NaN or Inf.

    ``stage`` names the routine that failed and ``step`` the index of the
    offending update (gradient step, diffusion timestep or outer iteration).
    """

    def __init__(self, stage, step, detail=""):
        self.stage = stage
        self.step = step
        msg = f"non-finite state in {stage} at step {step}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class DivergenceError(NonFiniteError):
    """An iterate exceeded the divergence guard (``max |x| > limit``)."""

    def __init__(self, stage, step, norm, limit):
        self.stage = stage
        self.step = step
        self.norm = norm
        self.limit = limit
        FloatingPointError.__init__(
            self, f"divergence in {stage} at step {step}: max |x| = {norm:.3g} "
                  f"exceeds {limit:.3g}")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``where`` locates the offending field."""

    def __init__(self, where, message):
        self.where = where
        super().__init__(f"{where}: {message}")
