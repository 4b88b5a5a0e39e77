"""Bouchaud trap model on the nonnegative integers with slowly varying traps.

Modules
-------
logreal    extended-range nonnegative reals in log space
tails      slowly varying tail families and the auxiliary scale function
landscape  seeded trap landscapes, streaming scans and record skeletons
localise   localisation sets, relocalisation audits, favourable events
quenched   exact quenched laws on finite segments plus a Monte Carlo oracle
harness    experiment drivers, output writers and the command line
"""
from .logreal import LogMagnitude, lse_sum, sub_positive, to_linear_checked
from .tails import AuxFunction, TailModel, parse_aux, parse_model

__all__ = [
    "LogMagnitude",
    "lse_sum",
    "sub_positive",
    "to_linear_checked",
    "TailModel",
    "AuxFunction",
    "parse_model",
    "parse_aux",
]

__version__ = "0.1.0"
