# Graphon mean field game solver and n-player simulator

__version__ = "0.1.0"
