"""Exception types shared across the package."""


class HodoflowError(Exception):
    """Base class for all package errors."""


class CoordsOutOfRange(HodoflowError, ValueError):
    def __init__(self, chart, coords, reason=""):
        self.chart = chart
        self.coords = coords
        msg = f"coordinates outside the open chart {chart.kind}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class BoundaryHit(HodoflowError):
    """Raised when a geodesic leaves the open chart; carries the partial trajectory."""

    def __init__(self, state, trajectory=None):
        self.state = state
        self.trajectory = trajectory
        super().__init__(f"geodesic left the chart near t={state.t:.6g}")


class StepUnderflow(HodoflowError):
    def __init__(self, state, trajectory=None):
        self.state = state
        self.trajectory = trajectory
        super().__init__(f"step size underflow at t={state.t:.6g}")


class UndefinedIntegral(HodoflowError, ValueError):
    def __init__(self, name, reason=""):
        self.name = name
        super().__init__(f"integral {name} undefined" + (f": {reason}" if reason else ""))


class NoConvergence(HodoflowError):
    def __init__(self, velocities, residual, iterations):
        self.velocities = velocities
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"Newton did not converge after {iterations} iterations "
                         f"(|S|={residual:.3e})")


class SingularJacobian(HodoflowError):
    """det M vanished at a Newton iterate: the derivative blow-up signal."""

    def __init__(self, velocities, det):
        self.velocities = velocities
        self.det = det
        super().__init__(f"singular hodograph matrix (det M={det:.3e})")


class OutOfFamilyDomain(HodoflowError, ValueError):
    pass


class Unsupported(HodoflowError, ValueError):
    pass


class InsufficientDomain(HodoflowError):
    pass


class MultiValued(HodoflowError):
    """Characteristics crossed: the gradient catastrophe has happened."""

    def __init__(self, region, grid=None):
        self.region = region
        self.grid = grid
        super().__init__(f"multi-valued field at {int(region.sum())} target nodes")


class ConfigError(HodoflowError, ValueError):
    pass
