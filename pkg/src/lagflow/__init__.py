"""Lagrangian minimizing-movement schemes for nonlinear Fokker-Planck equations."""
