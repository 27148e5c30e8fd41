"""
Utility functions package.
"""

from app.utils.io_utils import canonical_json, content_hash

__all__ = ["canonical_json", "content_hash"]
