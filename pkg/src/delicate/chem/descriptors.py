"""Sixteen graph-computable descriptors (the PhysChemPred targets) and z-scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smiles import ATOMIC_MASS, HALOGENS, MolGraph

DESCRIPTOR_NAMES = (
    "heavy_atoms",
    "mol_weight",
    "rings",
    "aromatic_atoms",
    "aromatic_fraction",
    "heteroatoms",
    "n_count",
    "o_count",
    "halogens",
    "s_count",
    "hbd",
    "hba",
    "rotatable_bonds",
    "formal_charge",
    "implicit_h",
    "fragments",
)
N_DESCRIPTORS = len(DESCRIPTOR_NAMES)

CLIP = 10.0


def descriptors(mol: MolGraph) -> np.ndarray:
    atoms = mol.atoms
    heavy = [i for i, a in enumerate(atoms) if a.element != "H"]
    n_heavy = len(heavy)
    elems = [atoms[i].element for i in heavy]

    mw = sum(ATOMIC_MASS[a.element] + a.implicit_h * ATOMIC_MASS["H"] for a in atoms)
    n_arom = sum(1 for i in heavy if atoms[i].aromatic)

    hbd = 0
    for i in heavy:
        a = atoms[i]
        if a.element not in ("N", "O"):
            continue
        bonded_h = sum(1 for j, _ in mol.adjacency[i] if atoms[j].element == "H")
        if a.implicit_h + bonded_h >= 1:
            hbd += 1

    rotatable = 0
    for b in mol.bonds:
        if b.in_ring or b.order != 1.0:
            continue
        if atoms[b.begin].element == "H" or atoms[b.end].element == "H":
            continue
        if mol.heavy_degree(b.begin) >= 2 and mol.heavy_degree(b.end) >= 2:
            rotatable += 1

    n_n = elems.count("N")
    n_o = elems.count("O")
    values = [
        n_heavy,
        mw,
        mol.ring_count(),
        n_arom,
        n_arom / n_heavy if n_heavy else 0.0,
        sum(1 for e in elems if e != "C"),
        n_n,
        n_o,
        sum(1 for e in elems if e in HALOGENS),
        elems.count("S"),
        hbd,
        n_n + n_o,
        rotatable,
        sum(a.charge for a in atoms),
        sum(a.implicit_h for a in atoms),
        mol.n_fragments(),
    ]
    return np.asarray(values, dtype=np.float64)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def fit_norm(vectors) -> NormStats:
    """Column mean and population std; constant columns get std 1."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("fit_norm needs a non-empty 2-D array of descriptor vectors")
    if x.shape[0] < 2:
        raise ValueError("fit_norm needs at least two molecules")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return NormStats(mean, std)


def apply_norm(vectors, stats: NormStats) -> np.ndarray:
    z = (np.asarray(vectors, dtype=np.float64) - stats.mean) / stats.std
    return np.clip(z, -CLIP, CLIP)
