import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seaintent.errors import InvalidArgument, InvalidState
from seaintent.prototypes import (Autoencoder, Normalizer, PrototypeSet, assign_labels, decouple, extract_prototypes,
                                  kmeans, reconstruction_loss, train_autoencoder)
from seaintent.synthetic import SynthConfig, generate


def test_normalizer_maps_bbox_to_unit_square():
    n = Normalizer.from_bbox(122.0, 30.0, 122.4, 30.2)
    np.testing.assert_allclose(n.to_norm([[122.0, 30.0], [122.4, 30.2]]), [[-1, -1], [1, 1]])
    x = np.array([[122.13, 30.07]])
    np.testing.assert_allclose(n.to_deg(n.to_norm(x)), x, rtol=0, atol=1e-12)


def test_decouple_examples():
    h = decouple(np.full((1, 5, 2), 5.0))
    np.testing.assert_array_equal(h.p0, [[5.0, 5.0]])
    np.testing.assert_array_equal(h.p_rel, np.zeros((1, 5, 2)))
    line = 1.0 + 0.01 * np.arange(6)[:, None] * np.ones(2)
    h = decouple(line[None])
    np.testing.assert_allclose(h.p_rel[0], 0.01 * np.arange(6)[:, None] * np.ones(2), atol=1e-6)
    with pytest.raises(InvalidArgument):
        decouple([np.zeros((3, 2)), np.zeros((4, 2))])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8), st.just(2)),
              elements=st.one_of(st.just(0.0), st.floats(1e-4, 2), st.floats(-2, -1e-4))))
def test_decouple_recompose_exact_in_float32(x):
    # exact whenever coordinates span less than 2**29 in magnitude, as normalised tracks do
    h = decouple(x)
    np.testing.assert_array_equal(h.recompose().astype(np.float32), x.astype(np.float32))


def test_encoder_output_width():
    ae = Autoencoder(L=18, d=64, hidden=(32,))
    lat = ae.latents(decouple(np.random.default_rng(0).normal(size=(7, 18, 2))))
    assert lat.shape == (7, 66)
    assert ae.E_h(np.zeros((7, 36), dtype=np.float32)).shape == (7, 64)


def test_zero_init_loss_is_shape_second_moment():
    x = np.random.default_rng(1).normal(size=(5, 6, 2))
    h = decouple(x)
    ae = Autoencoder(L=6, d=4, hidden=(8,), zero=True)
    loss = float(reconstruction_loss(ae, h).data)
    assert loss == pytest.approx(np.mean(h.p_rel ** 2), rel=1e-6)


def test_autoencoder_overfits_repeated_trajectory():
    t = np.linspace(0, 1, 18)
    one = np.column_stack([0.3 * t - 0.2, 0.1 * t ** 2 + 0.05])
    h = decouple(np.repeat(one[None], 20, axis=0))
    ae = Autoencoder(L=18, d=8, hidden=(32, 32), seed=0)
    hist = train_autoencoder(h, ae, epochs=500, lr=1e-3, batch_size=20)
    assert hist[-1] < 0.01 * hist[0]


def test_kmeans_examples():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    km = kmeans(pts, 3, seed=0)
    assert km.inertia == 0.0 and sorted(km.labels.tolist()) == [0, 1, 2]
    rng = np.random.default_rng(0)
    blobs = np.concatenate([rng.normal(0, 0.1, (40, 3)), rng.normal(10, 0.1, (30, 3))])
    truth = np.array([0] * 40 + [1] * 30)
    km = kmeans(blobs, 2, seed=3)
    assert np.array_equal(km.labels, truth) or np.array_equal(km.labels, 1 - truth)
    with pytest.raises(InvalidArgument):
        kmeans(pts, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_kmeans_inertia_monotone_and_deterministic(seed, C):
    x = np.random.default_rng(seed).normal(size=(30, 4))
    km = kmeans(x, C, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(km.inertia_history, km.inertia_history[1:]))
    again = kmeans(x, C, seed=seed)
    np.testing.assert_array_equal(km.labels, again.labels)
    assert set(km.labels.tolist()) <= set(range(C))


def test_assign_labels_requires_fit():
    ae = Autoencoder(L=4, d=2, hidden=(4,))
    with pytest.raises(InvalidState):
        assign_labels(ae, None, np.zeros((1, 4, 2)))


def _trained_prototypes():
    cfg = SynthConfig(n_scenarios=40, noise_deg=0.0, seed=3)
    corpus = generate(cfg)
    coords = np.concatenate([s.coords() for s in corpus.scenarios])
    norm = Normalizer.fit(coords)
    h = decouple(coords, norm)
    ae = Autoencoder(L=cfg.L, d=16, hidden=(64, 64), seed=0)
    train_autoencoder(h, ae, epochs=150, lr=1e-3, batch_size=32)
    protos, km = extract_prototypes(ae, ae.latents(h), 6, seed=0)
    return ae, protos, km, coords, norm


def test_prototype_set_shapes_and_label_consistency():
    ae, protos, km, coords, norm = _trained_prototypes()
    assert protos.prototypes.shape == (6, 18, 2) and protos.centroids.shape == (6, 18)
    labels = assign_labels(ae, protos, coords, norm)
    assert labels.min() >= 0 and labels.max() < 6
    # a training trajectory gets its training-time label
    np.testing.assert_array_equal(assign_labels(ae, protos, coords[:5], norm), labels[:5])
    # decoded prototypes re-encode to their own cluster
    again = protos.assign(ae.latents(decouple(protos.prototypes)))
    np.testing.assert_array_equal(again, np.arange(6))
