from .descriptors import DESCRIPTOR_NAMES, N_DESCRIPTORS, NormStats, apply_norm, descriptors, fit_norm
from .fingerprint import Fingerprint, ecfp, tanimoto, tanimoto_matrix
from .smiles import Atom, Bond, MolGraph, parse_smiles
from .tokenizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    SequenceLengthError,
    SmilesSyntaxError,
    Vocab,
    build_vocab,
    detokenize,
    split_tokens,
    tokenize,
)

__all__ = [
    "Atom", "Bond", "CLS_ID", "DESCRIPTOR_NAMES", "Fingerprint", "MASK_ID", "MolGraph",
    "N_DESCRIPTORS", "NormStats", "PAD_ID", "SEP_ID", "SPECIAL_TOKENS", "SequenceLengthError",
    "SmilesSyntaxError", "UNK_ID", "Vocab", "apply_norm", "build_vocab", "descriptors",
    "detokenize", "ecfp", "fit_norm", "parse_smiles", "split_tokens", "tanimoto",
    "tanimoto_matrix", "tokenize",
]
