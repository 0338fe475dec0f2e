"""Operations are the numerical building blocks of the library.

They are stateless functions over entities, grouped by concern: special
functions, delayed Mittag-Leffler matrices, deterministic solvers, stochastic
simulation and control.
"""
