"""Entity co-occurrence graphs of weekly news and their link to market dislocations."""

__version__ = "0.1.0"
