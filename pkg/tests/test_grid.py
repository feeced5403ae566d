import numpy as np
import pytest

from ddptycho.errors import DimensionError
from ddptycho.grid import Region, embed, extract, fft2_normalized, ifft2_normalized, inner

from conftest import random_complex


def test_region_shape_and_slices():
    r = Region(2, 5, 1, 9)
    assert r.shape == (3, 8)
    a = np.arange(100).reshape(10, 10)
    assert a[r.slices].shape == (3, 8)
    assert Region.from_corner(2, 1, 3, 8) == r


@pytest.mark.parametrize("bounds", [(3, 3, 0, 1), (0, 1, 4, 2), (-1, 2, 0, 2)])
def test_region_rejects_empty(bounds):
    with pytest.raises(ValueError):
        Region(*bounds)


def test_region_intersect_and_relative():
    a, b = Region(0, 10, 0, 10), Region(5, 15, 8, 20)
    shared = a.intersect(b)
    assert shared == Region(5, 10, 8, 10)
    assert shared.relative_to(b) == Region(0, 5, 0, 2)
    assert a.intersect(Region(10, 12, 0, 3)) is None
    with pytest.raises(ValueError):
        b.relative_to(a)


def test_extract_embed_adjoint(rng):
    region = Region(3, 11, 2, 7)
    field = random_complex(rng, (16, 12))
    patch = random_complex(rng, region.shape)
    lhs = inner(patch, extract(field, region))
    rhs = inner(embed(patch, region, field.shape), field)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_extract_embed_errors():
    with pytest.raises(IndexError):
        extract(np.zeros((4, 4)), Region(0, 5, 0, 2))
    with pytest.raises(IndexError):
        embed(np.zeros((5, 2)), Region(0, 5, 0, 2), (4, 4))
    with pytest.raises(DimensionError):
        embed(np.zeros((2, 2)), Region(0, 3, 0, 2), (4, 4))


def test_fft_unitary(rng):
    x = random_complex(rng, (3, 32, 32))
    X = fft2_normalized(x)
    assert np.linalg.norm(X) == pytest.approx(np.linalg.norm(x), rel=1e-13)
    assert np.max(np.abs(ifft2_normalized(X) - x)) < 1e-13


def test_fft_delta_is_flat():
    d = np.zeros((8, 8))
    d[0, 0] = 1.0
    assert np.allclose(fft2_normalized(d), 1 / 8)
