import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_descriptors
from gatr_wss.descriptors import (CHANNELS, DescriptorSet, FeatureStats, InflowWaveform,
                                  build_embedding, compute_descriptors, scale_waveform, v_max)
from gatr_wss.ga.transforms import EuclideanTransform, apply_transform
from gatr_wss.mesh import cylinder_mesh
from gatr_wss.synth.oracle import template_waveform


def constant(q, n=11):
    return InflowWaveform(np.linspace(0, 1, n), np.full(n, float(q)))


def test_v_max_disc():
    # 80 ml/s through a 1 cm radius disc (100 pi mm^2)
    assert v_max(constant(80.0), 100 * math.pi) == pytest.approx(160 / math.pi, rel=1e-12)
    assert constant(60.0).q_max == 60.0
    with pytest.raises(ValueError):
        v_max(constant(80.0), 0.0)


@given(st.floats(0.01, 100.0))
def test_v_max_linear_in_flow(c):
    wf = template_waveform()
    scaled = InflowWaveform(wf.times, wf.flow * c)
    assert v_max(scaled, 300.0) == pytest.approx(c * v_max(wf, 300.0), rel=1e-12)


def test_scale_waveform():
    wf = scale_waveform(template_waveform(), 80.0)
    assert wf.q_max == pytest.approx(80.0)
    up = scale_waveform(wf, 120.0)
    assert np.allclose(up.flow, 1.5 * wf.flow, rtol=1e-12)
    same = scale_waveform(wf, wf.q_max)
    assert np.array_equal(same.flow, wf.flow)
    with pytest.raises(ValueError):
        scale_waveform(wf, 0.0)


def test_waveform_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        InflowWaveform([0.0, 0.5], [1.0, 2.0])
    with pytest.raises(ValueError):
        InflowWaveform([0.0, 1.0, 0.5], [1.0, 2.0, 3.0])
    wf = template_waveform()
    wf.save_csv(tmp_path / "w.csv")
    back = InflowWaveform.load_csv(tmp_path / "w.csv")
    assert np.array_equal(back.flow, wf.flow) and np.array_equal(back.times, wf.times)


def test_embedding_layout(rng):
    d = random_descriptors(rng, 5)
    d = replace(d, geo_inlet=np.zeros(5), geo_outlet=np.zeros(5), kappa1=np.zeros(5),
                kappa2=np.zeros(5), v_max=0.0)
    x = build_embedding(d)
    assert x.shape == (5, len(CHANNELS), 16) == (5, 8, 16)
    allowed = {0: {11, 12, 13, 14}, 1: {2, 3, 4}, 2: {2, 3, 4}}
    for ch in range(8):
        nz = set(torch.nonzero(x[:, ch].abs().sum(0)).ravel().tolist())
        assert nz <= allowed.get(ch, {0})


def test_embedding_single_vertex(rng):
    assert build_embedding(random_descriptors(rng, 1)).shape == (1, 8, 16)


def test_embedding_injective(rng):
    d = random_descriptors(rng)
    base = build_embedding(d)
    for name in ("normals", "flow_prior", "geo_inlet", "geo_outlet", "kappa1", "kappa2"):
        arr = getattr(d, name)
        other = build_embedding(replace(d, **{name: -arr if arr.ndim == 2 else arr + 1.0}))
        assert not torch.equal(other, base), name
    assert not torch.equal(build_embedding(replace(d, v_max=0.0)), base)
    assert not torch.equal(build_embedding(replace(d, coords=d.coords[::-1].copy())), base)


def test_embedding_equivariance(rng):
    d = random_descriptors(rng)
    stats = FeatureStats.fit([d])
    for k in range(10):
        g = EuclideanTransform.random(rng, 1000.0, reflection=bool(k % 2))
        moved = replace(d, coords=g.apply_points(d.coords), normals=g.apply_vectors(d.normals),
                        flow_prior=g.apply_vectors(d.flow_prior))
        # coordinates are centred per sample, so the translation drops out
        rot = EuclideanTransform(g.rotation, np.zeros(3))
        a = build_embedding(moved, stats)
        b = apply_transform(rot, build_embedding(d, stats))
        # point trivectors carry det(R) under reflections; the represented point is unchanged
        b[:, 0] *= g.parity
        assert (a - b).abs().max() < 1e-9
        assert torch.equal(a[:, 3:], build_embedding(d, stats)[:, 3:])


def test_descriptors_on_cylinder_and_io(tmp_path):
    m = cylinder_mesh(10.0, 60.0, 24, 20)
    d = compute_descriptors(m, constant(80.0))
    assert d.n == m.n_vertices
    assert np.allclose(np.linalg.norm(d.flow_prior, axis=1), 1.0)
    assert d.geo_inlet.min() == 0.0 and d.geo_outlet.min() == 0.0
    assert d.v_max == pytest.approx(160.0 / m.inlet_area * 100.0)
    g = EuclideanTransform.random(np.random.default_rng(0), 50.0)
    assert compute_descriptors(m.transformed(g), constant(80.0)).v_max == d.v_max
    d.save(tmp_path / "d.gwss", "f64")
    back = DescriptorSet.load(tmp_path / "d.gwss")
    assert np.array_equal(back.kappa1, d.kappa1) and back.v_max == d.v_max


def test_stats_round_trip(rng):
    stats = FeatureStats.fit([random_descriptors(rng), random_descriptors(rng, 7, 30.0)])
    assert FeatureStats.from_dict(stats.to_dict()) == stats
    assert stats.std["v_max"] == pytest.approx(21.0)
