"""Detection and retrieval-augmented repair of flaky Dockerfiles."""

__version__ = "0.1.0"
