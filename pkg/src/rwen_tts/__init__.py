"""Relation-aware word encoding for speech synthesis.

Subpackages are imported explicitly (``rwen_tts.deptree``, ``rwen_tts.rwen``,
...); the top-level module stays import-light so that tree/format tooling does
not pull in torch.
"""

__version__ = "0.1.0"
