"""
Content Hashing

SHA-256 identities for configs and instances. Run logs carry
these so reports can refuse to mix runs measured on different inputs.
"""

import hashlib
import json


def sha256_json(payload) -> str:
    """
    SHA-256 of the canonical JSON of a payload.

    Canonical form: sorted keys, no whitespace, UTF-8. Two payloads that
    compare equal as JSON always hash equal.

    Args:
        payload: JSON-serializable object.

    Returns:
        Hex SHA-256 hash string.
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

