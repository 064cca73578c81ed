"""Root-seed splitting: every random component draws from its own stream."""

import zlib

import numpy as np
import torch


def component_seed(root: int, name: str) -> int:
    """Deterministic 32-bit seed for component ``name`` under ``root``."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


def rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(component_seed(root, name))


def seed_torch(root: int, name: str) -> None:
    torch.manual_seed(component_seed(root, name))
