"""Data-driven optimisation of ultra-dense network COPs under user/DBS position error.

Modules: :mod:`~ddoec.netsim` (system-level simulator), :mod:`~ddoec.datagen`
(paired ideal/erroneous KPI databases), :mod:`~ddoec.surrogate` (gradient-boosted
tree regressors), :mod:`~ddoec.optimizer` (objective, SA, GA),
:mod:`~ddoec.pipeline` (experiments), :mod:`~ddoec.report` and :mod:`~ddoec.cli`.
"""
__version__ = "0.1.0"
