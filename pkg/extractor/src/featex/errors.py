"""Extractor error hierarchy."""


class FeatexError(Exception):
    """Base class for extractor failures."""


class DatasetNotFound(FeatexError):
    """The dataset root or split directory is missing or empty."""


class BackboneUnavailable(FeatexError):
    """The requested encoder backbone cannot be loaded."""
