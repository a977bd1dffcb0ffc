"""Partially linear repeated-measures estimation.

Kernel-weighted estimating equations with backfitting for the Gaussian
partially linear model on clustered repeated measures, plus smooth population
summaries (plug-in, imputation, and inverse-probability-weighted estimators)
with bootstrap and plug-in asymptotic variances.
"""

try:
    # Installed-package layout: the extension lives inside the package.
    from ._semirep import *  # noqa: F401,F403
    from . import _semirep as _impl
except ImportError:
    # Build-tree layout: the extension sits next to the package on sys.path.
    from _semirep import *  # noqa: F401,F403
    import _semirep as _impl

__version__ = "1.0.0"
__all__ = [name for name in dir(_impl) if not name.startswith("_")]
del _impl
