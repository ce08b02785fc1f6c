"""Bookkeeping and model solvers for polyhomogeneous 0- and b-calculus operators.

Modules
-------
index_algebra     exact index sets and their operations
bmap_calculus     model spaces, boundary matrices, pull-back and push-forward of index families
operator_classes  operator-class descriptors and the composition/adjoint/inclusion rule tables
bessel_model      numerical solvers for the model (Bessel) operator on the half-line
cli_dsl           the script language and the ``phgcalc`` command
"""
from .index_algebra import INF, NAT, ComplexExact, Generator, IndexSet, extended_union, index_set
from .bmap_calculus import IndexFamily, pullback_family, pushforward_family, registry_bmap
from .operator_classes import OperatorClass, Twist, TwistBlock, adjoint_class, compose_classes, parametrix_ledger

__all__ = [
    "INF", "NAT", "ComplexExact", "Generator", "IndexSet", "extended_union", "index_set",
    "IndexFamily", "pullback_family", "pushforward_family", "registry_bmap",
    "OperatorClass", "Twist", "TwistBlock", "adjoint_class", "compose_classes", "parametrix_ledger",
]
