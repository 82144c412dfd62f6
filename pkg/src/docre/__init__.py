"""Document-level relation extraction with description-similarity logit adaptation."""

__version__ = "0.1.0"
