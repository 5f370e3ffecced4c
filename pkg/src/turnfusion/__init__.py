"""Turn-taking and backchannel prediction from word-aligned dialog, with late fusion
of acoustic and text encoders and multi-task instruction heads."""

__version__ = "0.1.0"
