"""Particle-in-cell Vlasov solver coupled to a pseudo-spectral power-law fluid."""
__version__ = "0.1.0"
