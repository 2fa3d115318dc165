"""Mixed finite elements for the p-Bilaplacian."""
