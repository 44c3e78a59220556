"""Parametric divergence-free BDM / IPDG Stokes solver on curved tetrahedral meshes."""
