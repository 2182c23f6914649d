"""Semantic exception hierarchy shared by all rde_lab modules."""


class RdeLabError(Exception):
    """Base class for all library errors."""


class SpecValidationError(RdeLabError):
    """An offspring specification violates a structural assumption."""


class DomainError(RdeLabError):
    """Evaluation requested at a point where the quantity is undefined
    (e.g. a generating-function derivative at a square-root singularity)."""


class FeasibilityError(RdeLabError):
    """A moment equation has no root in its admissible bracket.

    Carries the order ``n`` at which the recursion became infeasible,
    signalling that only the constant moment sequence exists.
    """

    def __init__(self, n: int, message: str | None = None):
        self.n = n
        super().__init__(message or f"no feasible moment root at order n={n}")


class ResourceError(RdeLabError):
    """A sampled tree exceeded the configured node cap."""
