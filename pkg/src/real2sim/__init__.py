"""Plan-driven exploration of a simulated workspace to recover physical parameters.

A behavior tree of atomic robot actions is executed against a torque-sensing
compliant manipulator in a quasi-static micro-physics world.  The recorded
interaction wrenches are turned into estimates of object mass, surface
friction and support height, which are merged back into a scene description.
"""

__version__ = "0.1.0"

from real2sim._core import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
