"""
Finite element core: meshes, quadrature and spaces
"""
