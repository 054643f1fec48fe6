import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ooolab import _kernels_py, kernels
from ooolab.errors import ConfigurationError, ContractViolation
from ooolab.synthdata import (BACKGROUND_COLOURS, DEFAULT_SPACE, OBJECT_COLOURS, FactorSpace,
                              all_factors, factor_space_size, flat_index, object_mask,
                              read_ppm, render, render_batch, sample_factors, write_ppm,
                              write_previews)

codes_strategy = st.tuples(*[st.integers(0, c - 1) for c in DEFAULT_SPACE.cardinalities])


def test_space_size_default():
    assert factor_space_size(DEFAULT_SPACE) == math.prod((3, 6, 8, 8, 8, 4, 4)) == 147456
    assert len(all_factors()) == 147456


@pytest.mark.parametrize("cards, size", [((5,), 5), ((2, 3), 6)])
def test_space_size_small(cards, size):
    space = FactorSpace(names=tuple(f"f{i}" for i in range(len(cards))), cardinalities=cards)
    assert factor_space_size(space) == size


def test_cardinality_one_rejected():
    with pytest.raises(ConfigurationError):
        FactorSpace(names=("a", "b"), cardinalities=(1, 3))


def test_binary_factor_frequencies():
    space = FactorSpace(names=("a",), cardinalities=(2,))
    draws = sample_factors(np.random.default_rng(0), space, 10_000)
    assert abs(draws.mean() - 0.5) < 0.02


def test_chi_square_uniform_per_factor():
    draws = sample_factors(np.random.default_rng(1), DEFAULT_SPACE, 10_000)
    for f, card in enumerate(DEFAULT_SPACE.cardinalities):
        counts = np.bincount(draws[:, f], minlength=card)
        assert chisquare(counts).pvalue > 0.01


def test_same_seed_same_vector():
    a = sample_factors(np.random.default_rng(42))
    b = sample_factors(np.random.default_rng(42))
    assert a.tolist() == b.tolist()


@given(codes_strategy)
@settings(max_examples=200, deadline=None)
def test_render_deterministic_and_in_range(fv):
    a, b = render(np.array(fv)), render(np.array(fv))
    assert a.tobytes() == b.tobytes()
    assert a.shape == (32, 32, 3)
    assert a.min() >= 0.0 and a.max() <= 1.0


@given(codes_strategy)
@settings(max_examples=200, deadline=None)
def test_background_pixels_exact(fv):
    fv = np.array(fv)
    img = render(fv)
    mask = object_mask(fv)[0]
    assert (img[~mask] == BACKGROUND_COLOURS[fv[6]]).all()
    assert (img[mask] == OBJECT_COLOURS[fv[5]]).all()


@given(codes_strategy, st.integers(0, 3))
@settings(max_examples=200, deadline=None)
def test_background_change_touches_only_background(fv, new_bg):
    fv = np.array(fv)
    other = fv.copy()
    other[6] = new_bg
    diff = (render(fv) != render(other)).any(axis=2)
    mask = object_mask(fv)[0]
    assert not diff[mask].any()
    if new_bg != fv[6]:
        assert diff[~mask].all()


def test_out_of_range_code_rejected():
    with pytest.raises(ContractViolation):
        render(np.array([3, 0, 0, 0, 0, 0, 0]))
    with pytest.raises(ContractViolation):
        render(np.array([0, 0, 0, 0, 0, 0]))


def test_palettes_disjoint():
    for fg in OBJECT_COLOURS:
        for bg in BACKGROUND_COLOURS:
            assert not np.array_equal(fg, bg)


def _orientation_class(shape, orient):
    return orient % (2, 4, 8)[shape]


def test_injective_up_to_orientation_symmetry():
    codes = all_factors()
    # colour codes never affect the mask; take one colour combination
    geom = codes[(codes[:, 5] == 0) & (codes[:, 6] == 0)]
    masks = object_mask(geom).reshape(len(geom), -1)
    classes = {}
    for fv, m in zip(geom, masks):
        key = (fv[0], fv[1], _orientation_class(fv[0], fv[2]), fv[3], fv[4])
        blob = np.packbits(m).tobytes()
        if key in classes:
            assert classes[key] == blob, f"equivalent codes render differently: {fv}"
        else:
            classes[key] = blob
    assert len(set(classes.values())) == len(classes) == 5376
    # colours are recoverable from any image because both regions are non-empty
    counts = masks.sum(axis=1)
    assert counts.min() >= 8 and counts.max() < 32 * 32


def test_minimum_object_size():
    assert object_mask(all_factors()).reshape(-1, 1024).sum(axis=1).min() >= 8


def test_backends_agree_bitwise():
    codes = all_factors()[::7]
    compiled = kernels.render_masks(np.ascontiguousarray(codes))
    pure = _kernels_py.render_masks(codes)
    assert compiled.tobytes() == pure.tobytes()


def test_flat_index_roundtrip():
    codes = all_factors()
    np.testing.assert_array_equal(flat_index(codes), np.arange(DEFAULT_SPACE.size))


def test_ppm_roundtrip(tmp_path):
    img = render_batch(sample_factors(np.random.default_rng(0), n=1))[0]
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    np.testing.assert_allclose(back, np.round(img * 255) / 255)


def test_previews_written(tmp_path):
    paths = write_previews(tmp_path, seed=3, n_grids=2)
    assert [p.name for p in paths] == ["preview_00.ppm", "preview_01.ppm"]
    assert all(p.read_bytes().startswith(b"P6\n") for p in paths)
    again = write_previews(tmp_path / "b", seed=3, n_grids=2)
    assert all(a.read_bytes() == b.read_bytes() for a, b in zip(paths, again))
