"""Chronological (time-ordered) operator exponentials.

Subpackages
-----------
expr             expression parsing, evaluation and symbolic derivatives
opalg            differential-operator algebra on polynomial and grid functions
texp             ordered exponentials of matrix generators and linear solvers
identities       randomized verification of ordered-exponential identities
characteristics  nonlinear ODEs as characteristic flows
pdesolve         linear PDE examples built on the above
cli              command-line front end
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
