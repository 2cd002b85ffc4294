import numpy as np
import pytest

from delicate.chem.descriptors import CLIP, DESCRIPTOR_NAMES, N_DESCRIPTORS, apply_norm, descriptors, fit_norm
from delicate.chem.smiles import parse_smiles
from delicate.corpus import gen_corpus


def desc(smi):
    return dict(zip(DESCRIPTOR_NAMES, descriptors(parse_smiles(smi))))


def test_sixteen_descriptors():
    assert N_DESCRIPTORS == 16 == len(descriptors(parse_smiles("CCO")))


def test_ethanol():
    d = desc("CCO")
    assert d["heavy_atoms"] == 3
    assert d["mol_weight"] == pytest.approx(2 * 12.011 + 6 * 1.008 + 15.999, abs=1e-9)
    assert d["mol_weight"] == pytest.approx(46.07, abs=5e-3)
    assert d["rings"] == 0 and d["hbd"] == 1 and d["hba"] == 1


def test_benzene_rings_and_aromatic_fraction():
    d = desc("c1ccccc1")
    assert d["rings"] == 1 and d["aromatic_fraction"] == 1.0


def test_bicyclopropyl_rings():
    assert desc("C1CC1C1CC1")["rings"] == 2


def test_rotatable_bonds():
    assert desc("CCCC")["rotatable_bonds"] == 1
    assert desc("C1CCCCC1")["rotatable_bonds"] == 0


def test_descriptors_finite_and_deterministic():
    for smi in gen_corpus(5, 100):
        a, b = descriptors(parse_smiles(smi)), descriptors(parse_smiles(smi))
        assert np.isfinite(a).all()
        np.testing.assert_array_equal(a, b)


def test_identical_molecules_normalize_to_zero():
    x = np.stack([descriptors(parse_smiles("CCO"))] * 4)
    stats = fit_norm(x)
    np.testing.assert_array_equal(apply_norm(x, stats), 0.0)
    np.testing.assert_array_equal(stats.std, 1.0)


def test_two_point_z_score():
    stats = fit_norm(np.array([[40.0], [60.0]]))
    np.testing.assert_allclose(apply_norm(np.array([[40.0], [60.0]]), stats), [[-1.0], [1.0]])


def test_corpus_normalization_moments():
    x = np.stack([descriptors(parse_smiles(s)) for s in gen_corpus(7, 400)])
    stats = fit_norm(x)
    z = apply_norm(x, stats)
    varying = x.std(axis=0) > 0
    # clipping would break the moments, so the corpus must not reach it
    assert np.abs(z).max() < CLIP
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z[:, varying].var(axis=0), 1.0, atol=1e-9)


def test_fit_norm_needs_two_rows():
    with pytest.raises(ValueError):
        fit_norm(np.zeros((1, 16)))
