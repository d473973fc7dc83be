"""Simulator for a star-topology MDI-QKD network with integrated Bell-state analyzers.

Modules, bottom up: ``optics`` (mode unitaries, two-photon statistics),
``devices`` (couplers, analyzer, channels, sources, detectors), ``bsa``
(classification, HOM scans, projection tests), ``protocol`` (encoding,
estimators, sifting), ``netsim`` (scheduling and sessions) and ``cli``.
"""

__version__ = "0.1.0"
