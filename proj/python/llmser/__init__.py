"""LLM-assisted data augmentation for sequential recommendation.

Thin wrapper over the compiled `_llmser` core. See the project README for the
pipeline stages and file formats.
"""

try:
    from ._llmser import *  # noqa: F401,F403  (installed package layout)
    from ._llmser import __doc__ as _core_doc  # noqa: F401
except ImportError:  # build-tree layout: module sits next to the package
    from _llmser import *  # noqa: F401,F403

__version__ = "0.1.0"
