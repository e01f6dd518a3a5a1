"""Corpus exporter for the rwen-tts interchange formats.

This package deliberately does not import rwen_tts: it talks to it only
through the documented manifest/tensor file formats and the CLI.
"""

__version__ = "0.1.0"
