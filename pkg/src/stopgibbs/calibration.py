"""Fitted big-O constants used by the bound checks.

The asymptotic error statements carry no explicit constants; each bound is
therefore checked as a scaling exponent plus a fitted constant.  The shipped
``calibration.json`` records both the working constants used by the budget
helpers and the constants actually measured on the bundled instance suite
(the latter are documentation, not ground truth).
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources

_DEFAULTS = {
    "gibbs_budget": 5.0,
    "partition_budget": 5.0,
    "fault_bound": 5.0,
    "k_deviation": 10.0,
}


def _raw() -> bytes:
    return resources.files("stopgibbs").joinpath("calibration.json").read_bytes()


@lru_cache(maxsize=1)
def load_calibration() -> dict:
    data = json.loads(_raw().decode("utf-8"))
    constants = dict(_DEFAULTS)
    constants.update(data.get("constants", {}))
    data["constants"] = constants
    return data


def constant(name: str) -> float:
    try:
        return float(load_calibration()["constants"][name])
    except KeyError:
        raise KeyError(f"no calibration constant named {name!r}") from None


@lru_cache(maxsize=1)
def calibration_sha256() -> str:
    return hashlib.sha256(_raw()).hexdigest()
