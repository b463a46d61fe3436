"""Scharfetter-Gummel finite volume solver for a 1D corrosion model."""
