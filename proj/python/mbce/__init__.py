"""RSS-map-assisted MIMO channel estimation (C++ core bindings)."""

try:
    from ._mbce import *  # noqa: F401,F403
    from ._mbce import __doc__  # noqa: F401
except ImportError:  # build-tree layout: extension next to the package
    from _mbce import *  # noqa: F401,F403
