"""sqlcot: bootstrap, validate, and export SQL-building rationales."""

__version__ = "0.1.0"
