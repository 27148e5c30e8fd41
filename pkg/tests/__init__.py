"""
Test package.
"""