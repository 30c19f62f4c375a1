"""datasmith: an orchestrated, sandboxed notebook engine for data tasks."""

__version__ = "0.1.0"
