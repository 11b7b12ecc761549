import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmkv.errors import DomainError, GeometryError
from pmkv.geometry import Ball, Box, HalfSpaces, WholeSpace, contains, domain_from_dict, inward_normal, project

coord = st.floats(-5.0, 5.0, allow_nan=False)
point2 = st.tuples(coord, coord).map(np.array)

DOMAINS = [
    Ball((0.0, 0.0), 1.0),
    Ball((0.5, -1.0), 2.0),
    Box((0.0, 0.0), (1.0, 1.0)),
    Box((-1.0, -2.0), (3.0, 0.5)),
    # triangle x >= 0, y >= 0, x + y <= 1 written as <a, x> <= c
    HalfSpaces(((-1.0, 0.0), (0.0, -1.0), (2 ** -0.5, 2 ** -0.5)), (0.0, 0.0, 2 ** -0.5)),
]


def test_contains_examples():
    ball = Ball((0.0, 0.0), 1.0)
    assert contains(ball, np.array([1.0, 0.0]))
    assert not contains(ball, np.array([1.0001, 0.0]))
    assert contains(WholeSpace(), np.array([1e9, -3.0]))


def test_project_examples():
    p, disp = project(Ball((0.0, 0.0), 1.0), np.array([2.0, 0.0]))
    assert np.allclose(p, [1.0, 0.0]) and disp == pytest.approx(1.0)
    p, disp = project(Box((0.0, 0.0), (1.0, 1.0)), np.array([-0.5, 0.5]))
    assert np.allclose(p, [0.0, 0.5]) and disp == pytest.approx(0.5)
    x = np.array([0.3, 0.4])
    for dom in DOMAINS[:3]:
        p, disp = project(dom, x)
        assert np.array_equal(p, x) and disp == 0.0


def test_inward_normal_examples():
    assert np.allclose(inward_normal(Ball((0.0, 0.0), 1.0), np.array([1.0, 0.0])), [-1.0, 0.0])
    assert np.allclose(inward_normal(Box((0.0, 0.0), (1.0, 1.0)), np.array([0.0, 0.5])), [1.0, 0.0])
    a = np.array([3.0, 4.0]) / 5.0
    hs = HalfSpaces((tuple(a),), (2.0,))
    assert np.allclose(inward_normal(hs, 2.0 * a), -a)


def test_corner_normal_is_normalized_sum():
    n = inward_normal(Box((0.0, 0.0), (1.0, 1.0)), np.array([0.0, 0.0]))
    assert np.allclose(n, [1.0, 1.0] / np.sqrt(2.0))


def test_inward_normal_off_boundary_raises():
    with pytest.raises(DomainError):
        inward_normal(Ball((0.0, 0.0), 1.0), np.array([0.5, 0.0]))
    with pytest.raises(DomainError):
        inward_normal(Box((0.0, 0.0), (1.0, 1.0)), np.array([0.5, 0.5]))
    with pytest.raises(DomainError):
        inward_normal(WholeSpace(), np.array([0.0, 0.0]))


def test_domain_descriptors():
    assert isinstance(domain_from_dict(None), WholeSpace)
    for dom in DOMAINS:
        assert domain_from_dict(dom.to_dict()) == dom
    with pytest.raises(GeometryError):
        domain_from_dict({"kind": "torus"})
    with pytest.raises(GeometryError):
        Ball((0.0,), -1.0)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    x = rng.normal(scale=3.0, size=(50, 2))
    for dom in DOMAINS:
        pb, db = project(dom, x)
        for i in range(len(x)):
            p, d = project(dom, x[i])
            assert np.allclose(p, pb[i], atol=1e-12) and d == pytest.approx(db[i], abs=1e-12)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: type(d).__name__)
def test_nonexpansive_on_random_pairs(dom):
    rng = np.random.default_rng(11)
    x = rng.normal(scale=4.0, size=(10_000, 2))
    y = rng.normal(scale=4.0, size=(10_000, 2))
    px, _ = project(dom, x)
    py, _ = project(dom, y)
    lhs = np.linalg.norm(px - py, axis=1)
    rhs = np.linalg.norm(x - y, axis=1)
    assert np.all(lhs <= rhs + 1e-12)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: type(d).__name__)
@settings(max_examples=150, deadline=None)
@given(x=point2, y=point2)
def test_projection_properties(dom, x, y):
    px, disp = project(dom, x)
    assert contains(dom, px)
    assert disp == pytest.approx(np.linalg.norm(x - px), abs=1e-12)
    # idempotence
    ppx, d2 = project(dom, px)
    assert np.array_equal(ppx, px) and d2 == 0.0
    # variational inequality against a point of the domain
    yd, _ = project(dom, y)
    assert float(np.dot(x - px, yd - px)) <= 1e-9
    # nonexpansive
    assert np.linalg.norm(px - yd) <= np.linalg.norm(x - y) + 1e-12


@pytest.mark.parametrize("dom", DOMAINS[:4], ids=lambda d: type(d).__name__)
@settings(max_examples=100, deadline=None)
@given(x=point2)
def test_inward_normal_convexity_inequality(dom, x):
    # <x - y, n(x)> <= 0 for every y in the closed domain, at boundary points x
    px, disp = project(dom, x)
    if disp == 0.0:
        return
    n = inward_normal(dom, px)
    assert np.linalg.norm(n) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    y, _ = project(dom, rng.normal(scale=3.0, size=(200, 2)))
    assert np.all((px - y) @ n <= 1e-9)
