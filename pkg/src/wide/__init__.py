"""Global-in-time minimization of weighted inertia-dissipation-energy functionals."""
