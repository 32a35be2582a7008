"""Negative training for neural dialogue response generation."""

from ._negtrain import *  # noqa: F401,F403
from ._negtrain import Error, NumericError, __doc__  # noqa: F401
