"""Per-run seed derivation."""

from __future__ import annotations

import numpy as np


# Fixed tags keep the sub-streams of a run independent of each other.
ROLES = {
    "init": 1,
    "order": 2,
    "permutation": 3,
}


def derive_seed(master_seed: int, run_index: int, role: str) -> int:
    """A 64-bit seed mixed from the master seed, the run index and a role tag."""
    if role not in ROLES:
        raise ValueError(f"unknown seed role {role!r}")
    seq = np.random.SeedSequence([master_seed, run_index, ROLES[role]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])
