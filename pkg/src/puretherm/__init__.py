"""Equilibrium and typicality of isolated quantum pure states.

Modules: ``spectra`` (models and spectra), ``states`` (population/phase
algebra), ``ensembles`` (RPSE and FEEE samplers), ``dynamics`` (phase
evolution and time averages), ``thermo`` (typicality, state functions,
temperatures) and ``cli`` (batch front-end).

Units: hbar = k_B = 1.
"""
__version__ = "0.1.0"
