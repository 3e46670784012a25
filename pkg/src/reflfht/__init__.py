"""Hitting times of a reflected Brownian motion for recurrent gap-time data."""

__version__ = "0.1.0"

from .fht_dist import *  # noqa: F401,F403
from .sampler import *  # noqa: F401,F403
from .recurrent_model import *  # noqa: F401,F403
from .likelihood import *  # noqa: F401,F403
from .inference import *  # noqa: F401,F403
from .model_selection import *  # noqa: F401,F403
