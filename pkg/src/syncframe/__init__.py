"""syncframe: deterministic simulator, checkers and analyzer for
multi-writer synchronization mechanisms."""

__version__ = "0.1.0"
