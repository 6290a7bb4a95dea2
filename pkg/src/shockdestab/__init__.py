"""Numerical counterexamples to weighted relative-entropy contraction for viscous shocks.

Modules
-------
flux_catalog
    Convex fluxes and the barotropic pressure law.
wave_profiles
    Viscous shock profiles for the scalar law and the transformed system.
weights
    Weight generators and their composition with profiles.
scalar_destab, ns_destab
    Shock-variable functionals, destabilizing perturbations, searches.
pde_sim
    Shock-frame solvers and the weighted relative entropy under shifts.
cli_reports
    Configuration parsing, experiment orchestration and reports.
"""

__version__ = "0.1.0"
