"""
AE-HNN-NCS Package

Surrogate-assisted Negatively Correlated Search: autoencoder policy embedding,
Poincaré-ball classifier preselection, desk-scale fitness problems and the
run/sweep/audit harness.
"""
