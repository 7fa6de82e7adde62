"""Exceptions shared across the package."""


class NonUnichainPolicy(ValueError):
    """The policy induces several recurrent classes reachable from the start state."""


class MaxIterationsExceeded(RuntimeError):
    """An iterative solver hit its sweep cap without meeting its stopping rule."""


class Infeasible(ValueError):
    """A box-constrained transition set contains no probability vector."""


class LemmaViolation(AssertionError):
    """A run log breaks one of the checked inequalities."""
