"""Index advisor toolkit: workload compression, rewriting, candidate
enumeration and masked actor-critic index selection over an analytic
what-if cost model."""

__version__ = "0.1.0"
