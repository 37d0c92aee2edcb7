"""Exception types shared across the package."""


class GridWalkError(Exception):
    """Base class for every error raised by this package."""


# -- graph construction and lookup ------------------------------------------

class NonPositiveLength(GridWalkError, ValueError):
    """Edge declared with length <= 0."""


class DanglingVertexReference(GridWalkError, ValueError):
    """Vertex id referenced by no edge, or out of range."""


class InvalidPoint(GridWalkError, ValueError):
    """GraphPoint outside its edge's coordinate range."""


class UnknownVertex(GridWalkError, KeyError):
    """Vertex id not present in the graph."""


# -- diffusion data ----------------------------------------------------------

class NotIncident(GridWalkError, ValueError):
    """Edge is not incident to the requested vertex."""


class IntervalOutOfRange(GridWalkError, ValueError):
    """Integration interval not contained in the edge."""


class NonFiniteDensity(GridWalkError, ArithmeticError):
    """Speed density evaluated to a non-finite value inside the interval."""


class InvariantError(GridWalkError, ValueError):
    """Constructor invariant violated (bad betas, rho, spec wiring, ...)."""


# -- subdivisions ------------------------------------------------------------

class StepTooLarge(GridWalkError, ValueError):
    """Grid step does not fit the shortest finite edge."""


class RefinementCapExceeded(GridWalkError, RuntimeError):
    """Bisection cap reached before the thinness target; carries the cell."""


class NotExtendable(GridWalkError, ValueError):
    """lazy_extend called on a closed edge or with a stale frontier."""


class NoVertexCells(GridWalkError, ValueError):
    """Subdivision diagnostic requested but no vertex cell exists."""


# -- transition kernels ------------------------------------------------------

class OutOfInterval(GridWalkError, ValueError):
    """Evaluation point not strictly inside (a, b)."""


class OutOfCell(GridWalkError, ValueError):
    """Starting point not inside the vertex cell."""


class QuadratureFailure(GridWalkError, ArithmeticError):
    """Quadrature produced a non-finite or inconsistent value."""


# -- sampling ----------------------------------------------------------------

class OutsideGeneratedRegion(GridWalkError, ValueError):
    """Start point beyond the current grid frontier."""


class FrontierExhausted(GridWalkError, RuntimeError):
    """Lazy extension cap reached while a path kept pushing the frontier."""


class ZeroTimeLoop(GridWalkError, RuntimeError):
    """The walk cycled through zero-time transitions; kernel is degenerate."""


class TimeOutOfRange(GridWalkError, ValueError):
    """Path evaluated outside [0, last jump time]."""


class NotNaturalScale(GridWalkError, ValueError):
    """Sampling requested for a spec whose edge scales are not the identity."""


# -- analysis ----------------------------------------------------------------

class TooFewSamples(GridWalkError, ValueError):
    """Operation needs at least two samples."""


class TimeNotSampled(GridWalkError, KeyError):
    """Requested time is not among the ensemble's sample times."""


# -- configuration -----------------------------------------------------------

class SchemaError(GridWalkError, ValueError):
    """Scenario file structurally invalid; message carries the field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
