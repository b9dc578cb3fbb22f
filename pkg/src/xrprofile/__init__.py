"""User profiling from AR/VR behavioral telemetry.

Four stages: raw acquisition (:mod:`telemetry`), bias removal (:mod:`debias`),
time-series aggregation and selection (:mod:`features`) and classification
(:mod:`models`, :mod:`evaluation`, :mod:`experiments`). :mod:`synthgen`
produces labeled synthetic telemetry for end-to-end checks.
"""

__version__ = "0.1.0"
