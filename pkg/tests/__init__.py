"""
Tests de posefuse.
"""
