"""CHEST: combined hyperbolic and Euclidean SoftTriple loss."""
