"""Exception types shared across the package.

Everything raised on purpose derives from GraphShieldError so callers can
catch domain failures without swallowing programming errors.
"""

from __future__ import annotations


class GraphShieldError(Exception):
    """Base class for all deliberate failures in this package."""


class UnknownHost(GraphShieldError):
    """A host id that does not exist in the topology."""


class IneligibleHost(GraphShieldError):
    """A host that exists but may not be removed by a variant."""


class RedPathBroken(GraphShieldError):
    """The attacker can no longer reach the critical server."""


class NoEligibleHost(GraphShieldError):
    """Variant generation ran out of hosts it is allowed to remove."""


class NonActionableHost(GraphShieldError):
    """The defender tried to act on a host it has no agent on."""


class ShapeMismatch(GraphShieldError):
    """Tensor operands with incompatible shapes."""


class NonFinite(GraphShieldError):
    """A NaN or Inf appeared where only finite values are allowed."""


class AllMasked(GraphShieldError):
    """A node distribution was requested for a graph with no selectable node."""


class IndexOutOfRange(GraphShieldError, IndexError):
    """A flat action index outside the valid range."""


class InputWidthMismatch(GraphShieldError):
    """A fixed-width model was fed an observation of a different width."""
