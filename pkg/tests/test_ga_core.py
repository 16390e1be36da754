import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rel
from gatr_wss.ga import algebra
from gatr_wss.ga.algebra import (GRADES, blade, embed_plane, embed_point, embed_scalar,
                                 extract_plane, extract_point, extract_scalar, geometric_product,
                                 grade_project)
from gatr_wss.ga.layers import (LINEAR_BASIS, EquiLinear, GeometricAttention, GeometricMLP,
                                equivariant_layernorm, equivariant_linear, geometric_bilinear,
                                geometric_nonlinearity, invariant_inner_product)
from gatr_wss.ga.layers import geometric_product as fast_product
from gatr_wss.ga.transforms import EuclideanTransform, apply_transform
from gatr_wss.io import load_multivectors, save_multivectors

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
seeds = st.integers(0, 2**31 - 1)


def random_mv(rng, *shape):
    return torch.as_tensor(rng.standard_normal((*shape, 16)))


# --- product ---------------------------------------------------------------

def test_metric_signature():
    one = embed_scalar(1.0)
    assert torch.equal(geometric_product(blade("e1"), blade("e1")), one)
    assert torch.equal(geometric_product(blade("e0"), blade("e0")), torch.zeros(16, dtype=torch.float64))
    assert torch.equal(geometric_product(blade("e1"), blade("e2")), blade("e12"))
    assert torch.equal(geometric_product(blade("e2"), blade("e1")), -blade("e12"))
    for e in ("e2", "e3"):
        assert torch.equal(geometric_product(blade(e), blade(e)), one)


def test_product_laws_on_random_triples(rng):
    a, b, c = (random_mv(rng, 1000) for _ in range(3))
    ab_c = geometric_product(geometric_product(a, b), c)
    a_bc = geometric_product(a, geometric_product(b, c))
    assert (ab_c - a_bc).abs().max() < 1e-10 * ab_c.abs().max()
    lhs = geometric_product(a, b + c)
    assert (lhs - geometric_product(a, b) - geometric_product(a, c)).abs().max() < 1e-10 * lhs.abs().max()
    lhs = geometric_product(a + b, c)
    assert (lhs - geometric_product(a, c) - geometric_product(b, c)).abs().max() < 1e-10 * lhs.abs().max()


def test_layer_product_matches_reference(rng):
    a, b = random_mv(rng, 7, 3), random_mv(rng, 7, 3)
    assert (fast_product(a, b) - geometric_product(a, b)).abs().max() < 1e-12


def test_grade_closure():
    for i in range(16):
        for j in range(16):
            out = geometric_product(algebra.basis_vector(i), algebra.basis_vector(j))
            gi, gj = GRADES[i], GRADES[j]
            support = GRADES[out.numpy() != 0]
            assert np.all((support >= abs(gi - gj)) & (support <= gi + gj))


# --- embeddings ---------------------------------------------------------------

def test_embed_scalar_and_origin():
    s = embed_scalar(2.5)
    assert s[0] == 2.5 and torch.count_nonzero(s[1:]) == 0
    o = embed_point(torch.zeros(3, dtype=torch.float64))
    assert o[14] == 1.0 and torch.count_nonzero(o) == 1
    p = embed_plane(torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64), 0.0)
    assert p[4] == 1.0 and torch.count_nonzero(p) == 1


def test_embed_rejects_bad_input():
    with pytest.raises(ValueError):
        embed_point(torch.tensor([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        embed_plane(torch.zeros(3))


@given(vec3)
def test_point_round_trip(x):
    back = extract_point(embed_point(torch.as_tensor(x)))
    assert np.allclose(back.numpy(), x, atol=1e-12, rtol=0)


@given(vec3.filter(lambda v: np.linalg.norm(v) > 1e-3), finite)
def test_plane_round_trip(n, d):
    n = n / np.linalg.norm(n)
    normal, offset = extract_plane(embed_plane(torch.as_tensor(n), d))
    assert np.allclose(normal.numpy(), n, atol=1e-12) and abs(float(offset) - d) < 1e-12


@given(finite)
def test_scalar_round_trip(s):
    assert float(extract_scalar(embed_scalar(torch.tensor(s, dtype=torch.float64)))) == s


def test_embed_point_commutes_with_transform(rng):
    for _ in range(100):
        g = EuclideanTransform.random(rng, 10.0)
        x = rng.standard_normal(3) * 5
        moved = apply_transform(g, embed_point(torch.as_tensor(x)))
        # point trivectors pick up det(R) under reflections; the represented point is the same
        expected = g.parity * embed_point(torch.as_tensor(g.apply_points(x)))
        assert (moved - expected).abs().max() < 1e-10
        assert np.allclose(extract_point(moved).numpy(), g.apply_points(x), atol=1e-10)


def test_rotation_maps_plane():
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    g = EuclideanTransform(rz, np.zeros(3))
    src = embed_plane(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), 0.0)
    dst = embed_plane(torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64), 0.0)
    assert (apply_transform(g, src) - dst).abs().max() < 1e-12


def test_action_equals_versor_sandwich(rng):
    for _ in range(10):
        g = EuclideanTransform.random(rng, 3.0)
        v = torch.as_tensor(g.versor())
        v_inv = algebra.reverse(v) / float(geometric_product(v, algebra.reverse(v))[0])
        x = random_mv(rng)
        parity = torch.as_tensor((-1.0) ** (GRADES * (g.parity < 0)))
        sandwich = geometric_product(geometric_product(v, x * parity), v_inv)
        assert rel(apply_transform(g, x), sandwich) < 1e-10


# --- transforms -------------------------------------------------------------------

def test_identity_and_composition(rng):
    x = random_mv(rng, 5, 2)
    assert torch.equal(apply_transform(EuclideanTransform.identity(), x), x)
    for _ in range(20):
        g1 = EuclideanTransform.random(rng, 50.0)
        g2 = EuclideanTransform.random(rng, 50.0)
        two = apply_transform(g2, apply_transform(g1, x))
        one = apply_transform(g2.compose(g1), x)
        assert (two - one).abs().max() < 1e-10 * max(1.0, float(one.abs().max()))


def test_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        EuclideanTransform(np.diag([1.0, 2.0, 1.0]), np.zeros(3))


@given(seeds)
def test_inner_product_invariant(seed):
    rng = np.random.default_rng(seed)
    g = EuclideanTransform.random(rng, 1000.0)
    a, b = random_mv(rng, 4), random_mv(rng, 4)
    before = invariant_inner_product(a, b)
    after = invariant_inner_product(apply_transform(g, a), apply_transform(g, b))
    assert torch.allclose(before, after, rtol=1e-8, atol=1e-8)


def test_inner_product_ignores_e0():
    assert float(invariant_inner_product(blade("e0"), blade("e0"))) == 0.0


# --- layers -----------------------------------------------------------------------

def test_linear_identity_and_zero(rng):
    x = random_mv(rng, 6, 3)
    w = torch.zeros(3, 3, 9, dtype=torch.float64)
    for g in range(5):
        w[:, :, g] = torch.eye(3)
    assert (equivariant_linear(x, w) - x).abs().max() == 0
    assert torch.count_nonzero(equivariant_linear(x, torch.zeros(3, 4, 9, dtype=torch.float64))) == 0
    with pytest.raises(ValueError):
        equivariant_linear(x, torch.zeros(2, 4, 9, dtype=torch.float64))


def test_linear_basis_commutes_with_every_action(rng):
    for _ in range(10):
        m = EuclideanTransform.random(rng, 10.0).action_matrix()
        for b in LINEAR_BASIS:
            assert np.abs(b @ m - m @ b).max() < 1e-10


def _violation(fn, x, g, tol_scale=1.0):
    out = fn(x)
    moved = fn(apply_transform(g, x))
    return rel(moved, apply_transform(g, out))


@given(seeds)
def test_primitive_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = EuclideanTransform.random(rng, 1000.0)
    x, y = random_mv(rng, 5, 3), random_mv(rng, 5, 3)
    w = torch.as_tensor(rng.standard_normal((3, 2, 9)))
    wl, wr, wo = (torch.as_tensor(rng.standard_normal((3, 3, 9))) for _ in range(3))
    assert _violation(lambda t: equivariant_linear(t, w), x, g) < 1e-8
    assert _violation(equivariant_layernorm, x, g) < 1e-8
    assert _violation(geometric_nonlinearity, x, g) < 1e-8
    gx, gy = apply_transform(g, x), apply_transform(g, y)
    out = geometric_bilinear(x, y, wl, wr, wo)
    assert rel(geometric_bilinear(gx, gy, wl, wr, wo), apply_transform(g, out)) < 1e-8


def test_module_equivariance(rng):
    torch.manual_seed(0)
    mlp = GeometricMLP(3).double()
    att = GeometricAttention(3, 2).double()
    lin = EquiLinear(3, 4).double()
    x = random_mv(rng, 7, 3)
    for k in range(10):
        g = EuclideanTransform.random(rng, 1000.0, reflection=bool(k % 2))
        with torch.no_grad():
            assert _violation(mlp, x, g) < 1e-8
            assert _violation(lambda t: att(t, t), x, g) < 1e-8
            assert _violation(lin, x, g) < 1e-8


def test_layernorm_scale():
    rng = np.random.default_rng(3)
    x = random_mv(rng, 10, 4) * 7.0
    out = equivariant_layernorm(x, eps=0.0)
    msq = invariant_inner_product(out, out).mean(-1)
    assert (msq - 1).abs().max() < 1e-10
    zero = equivariant_layernorm(torch.zeros(2, 3, 16, dtype=torch.float64))
    assert torch.isfinite(zero).all() and torch.count_nonzero(zero) == 0


def test_gate_zero():
    x = torch.randn(4, 16, dtype=torch.float64)
    x[:, 0] = 0.0
    assert float(F.gelu(torch.tensor(0.0))) == 0.0
    assert torch.count_nonzero(geometric_nonlinearity(x)) == 0


def test_attention_single_point(rng):
    torch.manual_seed(1)
    att = GeometricAttention(2, 2).double()
    x = random_mv(rng, 1, 2)
    with torch.no_grad():
        out = att(x, x)
        qn = att.norm(x)
        expected = att.out(att.v(qn))  # softmax over one key is 1
    assert rel(out, expected) < 1e-12


def test_grade_project_partition(rng):
    x = random_mv(rng, 3)
    total = sum(grade_project(x, g) for g in range(5))
    assert torch.equal(total, x)


def test_multivector_file_round_trip(tmp_path, rng):
    x = rng.standard_normal((5, 8, 16))
    save_multivectors(tmp_path / "x.gwss", x, "f64")
    assert np.array_equal(load_multivectors(tmp_path / "x.gwss"), x)
    save_multivectors(tmp_path / "y.gwss", x, "f32")
    assert np.allclose(load_multivectors(tmp_path / "y.gwss"), x, rtol=1e-6)


def test_attention_temperature():
    # logits divide by sqrt(8c): two keys with equal values give uniform weights regardless
    q = torch.zeros(1, 1, 1, 16, dtype=torch.float64)
    q[..., 0] = 1.0
    k = torch.zeros(1, 2, 1, 16, dtype=torch.float64)
    k[0, 0, 0, 0] = math.sqrt(8.0) * math.log(3.0)
    v = torch.zeros(1, 2, 1, 16, dtype=torch.float64)
    v[0, 0, 0, 0], v[0, 1, 0, 0] = 1.0, 0.0
    from gatr_wss.ga.layers import geometric_attention

    out = geometric_attention(q, k, v)
    assert abs(float(out[0, 0, 0, 0]) - 0.75) < 1e-12
