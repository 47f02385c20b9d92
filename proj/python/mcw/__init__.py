"""SPECK32/64-CBC indistinguishability workbench bindings."""

try:
    from ._mcw import *  # noqa: F401,F403
    from ._mcw import __version__  # noqa: F401
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _mcw import *  # type: ignore # noqa: F401,F403
    from _mcw import __version__  # type: ignore # noqa: F401
