from ._rsynth import *  # noqa: F401,F403
