"""Topology optimization of thin-walled structures with uniform feature size on adaptive simplicial meshes."""

from .errors import ThinwallError

__version__ = "0.1.0"
__all__ = ["ThinwallError", "__version__"]
