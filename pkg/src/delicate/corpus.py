"""Deterministic toy SMILES corpus and corpus-file I/O.

Molecules are assembled from a small fragment grammar: a backbone of 1-4
units (alkyl pieces, aliphatic rings of size 3-6, benzene/pyridine rings,
linkers such as ether, amide, sulfone), optional terminal groups at each end
(halogens, hydroxyl, nitrile, carboxylate, nitro, ammonium) and, rarely, a
second small fragment after ``.``.  Every unit declares its entry and exit
atoms, so the output is valid by construction.  Aromatic rings are only
six-membered and never fused, which keeps implicit-H assignment exact without
aromaticity perception.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .rng import fork

# (smiles, entry atom aromatic, exit atom aromatic, ring labels used)
_BACKBONE = [
    ("C", False, False, 0), ("CC", False, False, 0), ("CCC", False, False, 0),
    ("CC(C)", False, False, 0), ("C(C)(C)", False, False, 0), ("C(F)", False, False, 0),
    ("C(O)", False, False, 0), ("C(Cl)", False, False, 0), ("C=C", False, False, 0),
    ("C#C", False, False, 0), ("O", False, False, 0), ("N", False, False, 0),
    ("S", False, False, 0), ("N(C)", False, False, 0), ("C(=O)", False, False, 0),
    ("C(=O)N", False, False, 0), ("C(=O)O", False, False, 0), ("S(=O)(=O)", False, False, 0),
    ("C{r}CC{r}", False, False, 1), ("C{r}CCC{r}", False, False, 1),
    ("C{r}CCCC{r}", False, False, 1), ("C{r}CCCCC{r}", False, False, 1),
    ("C{r}CCN(CC{r})", False, False, 1), ("C{r}CCOC{r}", False, False, 1),
    ("C{r}CC(CC{r})", False, False, 1), ("N{r}CCN(CC{r})", False, False, 1),
    ("c{r}ccccc{r}", True, True, 1), ("c{r}ccc(cc{r})", True, True, 1),
    ("c{r}ccncc{r}", True, True, 1), ("c{r}cc(F)ccc{r}", True, True, 1),
    ("c{r}ccc(cc{r}Cl)", True, True, 1), ("c{r}cc(ncc{r})", True, True, 1),
    ("c{r}cc(O)ccc{r}", True, True, 1), ("c{r}cc(C)ccc{r}", True, True, 1),
]

# (form at the start of a molecule, form at the end)
_TERMINAL = [
    ("F", "F"), ("Cl", "Cl"), ("Br", "Br"), ("I", "I"), ("O", "O"), ("N", "N"),
    ("N#C", "C#N"), ("OC(=O)", "C(=O)O"), ("[O-]C(=O)", "C(=O)[O-]"),
    ("[O-][N+](=O)", "[N+](=O)[O-]"), ("[NH3+]", "[NH3+]"), ("NC(=O)", "C(=O)N"),
    ("CO", "OC"), ("CS", "SC"), ("CN(C)", "N(C)C"),
]

_EXTRA_FRAGMENT = ["O", "CCO", "[NH4+]", "CC(=O)[O-]", "C[NH3+]"]

# labels cycled through so both single digits and %nn appear
_RING_LABELS = ["1", "2", "3", "%10", "%11"]

MAX_CONTENT_TOKENS = 60


class CorpusCapacityError(ValueError):
    pass


def _one(rng) -> str:
    from .chem.tokenizer import split_tokens  # local: corpus is imported by chem users

    parts: list[str] = []
    prev_aromatic = False
    label_i = int(rng.integers(len(_RING_LABELS)))
    if rng.random() < 0.5:
        parts.append(_TERMINAL[int(rng.integers(len(_TERMINAL)))][0])
    for _ in range(int(rng.integers(1, 5))):
        smi, entry_ar, exit_ar, n_rings = _BACKBONE[int(rng.integers(len(_BACKBONE)))]
        if n_rings:
            smi = smi.format(r=_RING_LABELS[label_i % len(_RING_LABELS)])
            label_i += 1
        if parts and prev_aromatic and entry_ar:
            parts.append("-")
        parts.append(smi)
        prev_aromatic = exit_ar
    if rng.random() < 0.6:
        parts.append(_TERMINAL[int(rng.integers(len(_TERMINAL)))][1])
    smiles = "".join(parts)
    if rng.random() < 0.05:
        smiles += "." + _EXTRA_FRAGMENT[int(rng.integers(len(_EXTRA_FRAGMENT)))]
    if len(split_tokens(smiles)) > MAX_CONTENT_TOKENS:
        return ""
    return smiles


def gen_corpus(seed: int, n: int, max_attempts_per_molecule: int = 200) -> list[str]:
    """``n`` distinct generated SMILES, identical for identical ``(seed, n)`` prefixes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = fork(seed, "corpus")
    out: dict[str, None] = {}
    attempts = 0
    budget = n * max_attempts_per_molecule
    while len(out) < n:
        if attempts >= budget:
            raise CorpusCapacityError(
                f"grammar produced only {len(out)} distinct molecules in {attempts} attempts"
            )
        attempts += 1
        smi = _one(rng)
        if smi and smi not in out:
            out[smi] = None
    return list(out)


def read_corpus(path: str | Path) -> list[str]:
    """One SMILES per line; blank lines and ``#`` comments are skipped.

    ``#`` is also the triple-bond symbol, so a comment is a line starting with
    ``#`` or anything after whitespace (a trailing name or remark).
    """
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line.split()[0])
    return out


def write_corpus(path: str | Path, smiles: Iterable[str], header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines.extend(smiles)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
