"""Bridge from images to ADTRFT01 feature files via a frozen CNN backbone."""

__version__ = "0.1.0"
