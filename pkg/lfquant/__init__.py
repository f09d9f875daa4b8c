"""Label-free LC-MS/MS quantification and differential abundance toolkit."""

__version__ = "1.0.0"
