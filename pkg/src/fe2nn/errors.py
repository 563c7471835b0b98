"""Exception hierarchy shared by all modules."""


class Fe2Error(Exception):
    """Base class for every error raised by the package."""


class InvalidDeformation(Fe2Error):
    def __init__(self, det, message=None):
        self.det = float(det)
        super().__init__(message or f"deformation gradient has non-positive determinant {self.det:.6g}")


class ElementInversion(Fe2Error):
    def __init__(self, element, det):
        self.element = int(element)
        self.det = float(det)
        super().__init__(f"element {self.element} inverted (det F = {self.det:.6g})")


class ConstraintError(Fe2Error):
    pass


class SingularSystem(Fe2Error):
    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is singular to working precision at pivot {self.pivot}")


class NonConvergence(Fe2Error):
    def __init__(self, residual_history, message=None):
        self.residual_history = list(residual_history)
        last = self.residual_history[-1] if self.residual_history else float("nan")
        super().__init__(message or f"Newton did not converge in {len(self.residual_history)} "
                                    f"iterations (last residual {last:.3e})")


class MeshError(Fe2Error):
    pass


class MeshNotPeriodic(MeshError):
    pass


class ShapeError(Fe2Error):
    pass


class TrainingDiverged(Fe2Error):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class EmptyDataset(Fe2Error):
    pass


class SamplingInfeasible(Fe2Error):
    pass


class DatasetGenerationFailed(Fe2Error):
    def __init__(self, failures, n_samples):
        self.failures = list(failures)
        self.n_samples = n_samples
        super().__init__(f"{len(self.failures)} of {n_samples} RVE solves failed "
                         f"(first: sample {self.failures[0][0]}: {self.failures[0][1]})")


class GaussPointError(Fe2Error):
    """RVE failure at a macroscale Gauss point, with its location attached."""

    def __init__(self, element, point, X, cause):
        self.element = element
        self.point = point
        self.X = tuple(float(v) for v in X)
        self.cause = cause
        super().__init__(f"RVE failed at element {element}, Gauss point {point} "
                         f"X=({self.X[0]:.4g}, {self.X[1]:.4g}): {cause}")


class IncompatibleResults(Fe2Error):
    pass


class ConfigError(Fe2Error):
    pass
