"""Multi-opponent overtaking planner and 2D racing simulator.

Pipeline: sparse-GP opponent prediction -> spatiotemporal occupancy
corridors -> topological gap selection -> flatness-based reference
trajectories -> condensed LTV-MPC solved by a fast projected dense-QP
solver, all exercised in a deterministic kinematic simulation.
"""

__version__ = "0.1.0"

from .config import Config, load_config  # noqa: F401
from .track import (  # noqa: F401
    FrenetState,
    TrackMap,
    default_track,
    from_waypoints,
    load_track,
    to_cartesian,
    to_frenet,
)
