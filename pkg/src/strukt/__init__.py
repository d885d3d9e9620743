"""Criteria-first structure extraction from image-like measurement fields.

Structural products (partitions, hierarchies, region graphs, scalar fields)
are extracted under explicit, hashed criteria, validated structurally, and
only then handed to downstream semantic mappings.
"""

__version__ = "0.1.0"
