"""Circular (ECFP-style) fingerprints and Tanimoto similarity.

Atom identifiers are 64-bit integers produced by :func:`hash_ints`, a chain of
SplitMix64 finalisers::

    mix64(z):  z += 0x9E3779B97F4A7C15
               z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9
               z = (z ^ z >> 27) * 0x94D049BB133111EB
               return z ^ z >> 31            (all arithmetic mod 2**64)

    hash_ints(v_1..v_k, seed) = mix64(... mix64(mix64(seed) ^ v_1) ... ^ v_k)

Negative integers enter as their two's-complement 64-bit pattern.  Nothing
depends on Python's ``hash`` or object addresses, so bits are identical across
processes and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smiles import AROMATIC, ATOMIC_NUMBER, MolGraph

MASK64 = (1 << 64) - 1
ECFP_SEED = 0xEC4F


def mix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_ints(values, seed: int = 0) -> int:
    h = mix64(seed & MASK64)
    for v in values:
        h = mix64(h ^ (int(v) & MASK64))
    return h


def _bond_code(order: float) -> int:
    return 4 if order == AROMATIC else int(order)


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray        # bool, shape (width,)
    radius: int = 2

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def on_bits(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


def atom_identifiers(mol: MolGraph, radius: int = 2) -> list[list[int]]:
    """Identifiers per round: ``result[r][atom]`` for r in 0..radius."""
    heavy = [i for i, a in enumerate(mol.atoms) if a.element != "H"]
    ids = {}
    for i in heavy:
        a = mol.atoms[i]
        h = a.implicit_h + sum(1 for j, _ in mol.adjacency[i] if mol.atoms[j].element == "H")
        ids[i] = hash_ints(
            (ATOMIC_NUMBER[a.element], mol.heavy_degree(i), a.charge, h, int(a.aromatic)),
            seed=ECFP_SEED,
        )
    rounds = [[ids[i] for i in heavy]]
    for _ in range(radius):
        new = {}
        for i in heavy:
            env = sorted(
                (_bond_code(order), ids[j]) for j, order in mol.adjacency[i] if j in ids
            )
            flat = [ids[i]]
            for code, nid in env:
                flat.extend((code, nid))
            new[i] = hash_ints(flat, seed=ECFP_SEED)
        ids = new
        rounds.append([ids[i] for i in heavy])
    return rounds


def ecfp(mol: MolGraph, radius: int = 2, width: int = 2048) -> Fingerprint:
    """Fold identifiers from rounds 0..radius into a ``width``-bit vector."""
    if width <= 0 or width & (width - 1):
        raise ValueError(f"fingerprint width must be a power of two, got {width}")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    bits = np.zeros(width, dtype=bool)
    for ids in atom_identifiers(mol, radius):
        for ident in ids:
            bits[ident % width] = True
    return Fingerprint(bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.width != b.width:
        raise ValueError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def tanimoto_matrix(queries, library) -> np.ndarray:
    """Pairwise Tanimoto between two lists of fingerprints, shape [len(q), len(l)]."""
    q = np.stack([f.bits for f in queries]).astype(np.int32)
    lib = np.stack([f.bits for f in library]).astype(np.int32)
    inter = q @ lib.T
    union = q.sum(axis=1)[:, None] + lib.sum(axis=1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return sim
