from __future__ import annotations

from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _version
from typing import Literal


def _get_version() -> str:
    try:
        return _version("lensbench")
    except PackageNotFoundError:
        return "0.0.0"


__version__ = _get_version()
__all__ = [
    "AeAggregate",
    "CsaId",
    "LightId",
    "Mode",
    "PolicyId",
    "ScorerId",
    "__version__",
]

Mode = Literal["luminous", "reflective"]

LightId = Literal["L1", "L2", "L3", "L4", "L6", "L7"]

# Quality estimators usable by Lens
ScorerId = Literal["confidence", "knn", "react", "ash", "vim"]

# Candidate selection algorithms
CsaId = Literal["full", "csa1", "csa2", "csa3"]

# Baselines, oracles and the selection policy itself
PolicyId = Literal["oracle_s", "oracle_f", "ae", "random", "lens"]

# How the five auto-exposure shots collapse into one AE outcome
AeAggregate = Literal["top1", "best_of_5"]

SCORER_IDS: tuple[ScorerId, ...] = ("confidence", "knn", "react", "ash", "vim")
CSA_IDS: tuple[CsaId, ...] = ("full", "csa1", "csa2", "csa3")
POLICY_IDS: tuple[PolicyId, ...] = ("oracle_s", "oracle_f", "ae", "random", "lens")
