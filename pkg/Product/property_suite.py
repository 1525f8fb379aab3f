"""
Randomized checks of the gate, range and decoder identities

Each property draws its own inputs from a generator derived from
(seed, property name), so any reported counterexample can be replayed alone.
Failures are data: they are counted and reported, never raised.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, TextIO

import numpy as np

from errors import TreeFormatError
from parsing_net import gate_vector, gates_from_alphas, hard_alpha, soft_alpha, structure_probs
from tree_ops import (
    all_hard_ranges,
    baseline_tree,
    binary_spans,
    check_no_partial_overlap,
    count_internal,
    leaves,
    profile_to_tree,
    tree_from_ranges,
    unlabeled_f1,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12
LIMIT_TEMPERATURE = 1e6
LIMIT_TOL = 1e-9
MAX_TIMESTEP = 20
MAX_TREE_LEAVES = 12
MAX_CONSISTENCY_LEAVES = 10


@dataclass
class OracleReport:
    name: str
    trials: int
    failures: int
    counterexample: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def property_rng(seed: int, name: str) -> np.random.Generator:
    """Generator derived from (seed, property name)"""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _distinct_profile(rng: np.random.Generator, n: int) -> np.ndarray:
    # continuous draws are distinct with probability one; check anyway
    while True:
        profile = rng.uniform(0.0, 1.0, size=n)
        if np.unique(profile).size == n:
            return profile


# ============================================================================
# Individual checks: return None on success or the failing inputs
# ============================================================================

def check_cdf_identity(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    t = int(rng.integers(1, MAX_TIMESTEP + 1))
    alphas = rng.uniform(0.0, 1.0, size=t - 1)
    cdf = np.cumsum(structure_probs(alphas))
    if np.max(np.abs(cdf - gate_vector(alphas))) >= IDENTITY_TOL:
        return {"alphas": alphas.tolist()}
    return None


def check_normalization(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    t = int(rng.integers(1, MAX_TIMESTEP + 1))
    alphas = rng.uniform(0.0, 1.0, size=t - 1)
    probs = structure_probs(alphas)
    if abs(probs.sum() - 1.0) >= IDENTITY_TOL or np.any(probs < 0.0):
        return {"alphas": alphas.tolist()}
    return None


def check_monotone_gates(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(2, MAX_TIMESTEP + 1))
    profile = rng.uniform(0.0, 1.0, size=n)
    temperature = float(rng.choice([1.0, 10.0, 100.0]))
    for t in range(1, n):
        gates = gate_vector(soft_alpha(profile[t], profile[1:t], temperature))
        if np.any(np.diff(gates) < 0.0) or np.any(gates < 0.0) or np.any(gates > 1.0):
            return {"profile": profile.tolist(), "t": t, "temperature": temperature}
    return None


def check_limit_consistency(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    d_t, d_j = rng.uniform(0.0, 1.0, size=2)
    # saturation needs |d_t - d_j| * tau >= 1
    if abs(d_t - d_j) * LIMIT_TEMPERATURE < 1.0:
        return None
    if abs(float(soft_alpha(d_t, d_j, LIMIT_TEMPERATURE)) - float(hard_alpha(d_t, d_j))) >= LIMIT_TOL:
        return {"d_t": float(d_t), "d_j": float(d_j)}
    return None


def check_hard_gates_match_ranges(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(2, MAX_TREE_LEAVES + 1))
    profile = _distinct_profile(rng, n)
    # alphas[t, j] = hard alpha of position j seen from t
    matrix = gates_from_alphas(hard_alpha(profile[:, None], profile[None, :]), window=n)
    for left, t in all_hard_ranges(profile):
        gates = matrix.row(t)
        expected = np.zeros(t)
        expected[left:] = 1.0
        if not np.array_equal(gates, expected):
            return {"profile": profile.tolist(), "t": t}
    return None


def check_no_partial_overlap_property(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(2, MAX_TREE_LEAVES + 1))
    profile = _distinct_profile(rng, n)
    ok, violation = check_no_partial_overlap(all_hard_ranges(profile))
    if not ok:
        return {"profile": profile.tolist(), "violation": [list(r) for r in violation]}
    return None


def check_decoder_matches_ranges(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(1, MAX_CONSISTENCY_LEAVES + 1))
    profile = _distinct_profile(rng, n)
    decoded = binary_spans(profile_to_tree(profile))
    try:
        rebuilt = binary_spans(tree_from_ranges(all_hard_ranges(profile), n))
    except TreeFormatError as exc:
        return {"profile": profile.tolist(), "error": exc.message}
    if decoded != rebuilt:
        return {
            "profile": profile.tolist(),
            "decoded": sorted(decoded),
            "from_ranges": sorted(rebuilt),
        }
    return None


def check_tree_validity(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(1, MAX_TREE_LEAVES + 1))
    profile = _distinct_profile(rng, n)
    tree = profile_to_tree(profile)
    if leaves(tree) != list(range(n)) or count_internal(tree) != n - 1:
        return {"profile": profile.tolist()}
    return None


def check_f1_symmetry(rng: np.random.Generator) -> Optional[Dict[str, Any]]:
    n = int(rng.integers(1, MAX_TREE_LEAVES + 1))
    pred = binary_spans(baseline_tree("random", n, rng=rng))
    gold = binary_spans(baseline_tree("random", n, rng=rng))
    p1, r1, f1 = unlabeled_f1(pred, gold, n)
    p2, r2, f2 = unlabeled_f1(gold, pred, n)
    if (p1, r1, f1) != (r2, p2, f2):
        return {"n": n, "pred": sorted(pred), "gold": sorted(gold)}
    return None


# name -> (check, default trials)
PROPERTIES: Dict[str, tuple] = {
    "cdf_identity": (check_cdf_identity, 10_000),
    "normalization": (check_normalization, 10_000),
    "monotone_gates": (check_monotone_gates, 10_000),
    "limit_consistency": (check_limit_consistency, 10_000),
    "hard_gates_match_ranges": (check_hard_gates_match_ranges, 1_000),
    "no_partial_overlap": (check_no_partial_overlap_property, 1_000),
    "decoder_matches_ranges": (check_decoder_matches_ranges, 1_000),
    "tree_validity": (check_tree_validity, 1_000),
    "f1_symmetry": (check_f1_symmetry, 1_000),
}


# ============================================================================
# Runner
# ============================================================================

def run_property(name: str, seed: int, trials: Optional[int] = None) -> OracleReport:
    check, default_trials = PROPERTIES[name]
    trials = default_trials if trials is None else trials
    rng = property_rng(seed, name)
    failures = 0
    counterexample = None
    for _ in range(trials):
        found = check(rng)
        if found is not None:
            failures += 1
            if counterexample is None:
                counterexample = found
    if failures:
        logger.warning("❌ Property %s failed %d/%d trials", name, failures, trials)
    else:
        logger.info("✅ Property %s held over %d trials", name, trials)
    return OracleReport(name=name, trials=trials, failures=failures, counterexample=counterexample)


def run_suite(
    seed: int = 0,
    trials: Optional[int] = None,
    names: Optional[Sequence[str]] = None,
    workers: int = 4,
) -> List[OracleReport]:
    """
    Run every registered property.

    Args:
        seed: base seed; each property derives its own stream from it
        trials: overrides every property's default trial count when given
        names: subset of properties to run (all by default)
        workers: thread count

    Returns:
        Reports in registry order
    """
    selected = list(names) if names else list(PROPERTIES)
    unknown = [name for name in selected if name not in PROPERTIES]
    if unknown:
        raise KeyError(f"Unknown properties: {', '.join(unknown)}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda name: run_property(name, seed, trials), selected))


def write_reports(reports: Sequence[OracleReport], stream: TextIO):
    for report in reports:
        stream.write(json.dumps(report.to_dict()) + "\n")
