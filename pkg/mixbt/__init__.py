"""mixbt: Barlow Twins and Mixed Barlow Twins pre-training at desk scale."""

__version__ = "0.1.0"
