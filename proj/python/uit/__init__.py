"""Python bindings for the UiT keyword-spotting and audio-tagging engine."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
