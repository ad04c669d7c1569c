"""Molmer-Sorensen gates on the axial modes of a trapped-ion chain.

Modules: ``chain`` (equilibrium and normal modes), ``gate`` and ``numeric``
(pulse schedules, analytic and integrated dynamics), ``noise`` (sampled
noise, heating and the error budget), ``readout`` (dual detection and
post-selection) and ``cli`` (scenario runner).
"""

__version__ = "0.1.0"
