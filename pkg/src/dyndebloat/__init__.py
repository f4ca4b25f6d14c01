"""Dynamic debloating of bytecode and native methods in a simulated app runtime."""

__version__ = "0.1.0"
