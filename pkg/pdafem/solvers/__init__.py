"""
Local solvers, KKT solves and the ADMM driver
"""
