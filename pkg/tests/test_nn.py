import json

import numpy as np
import pytest

from seaintent import autograd as ag
from seaintent.errors import InvalidArgument
from seaintent.nn import (BLOB_NAME, MANIFEST_NAME, AdamState, Mlp, MlpSpec, adam_step, load_checkpoint,
                          lr_schedule, save_checkpoint)


def test_lr_schedule_defaults():
    assert lr_schedule(0) == 1e-4
    assert lr_schedule(159) == 1e-4
    assert lr_schedule(200) == pytest.approx(5e-5)
    assert lr_schedule(400) == pytest.approx(2.5e-5)
    with pytest.raises(InvalidArgument):
        lr_schedule(-1)


def test_mlp_spec_and_shapes():
    with pytest.raises(InvalidArgument):
        MlpSpec((4,))
    net = Mlp((12, 16, 8), "E", np.random.default_rng(0))
    assert net(ag.Tensor(np.zeros((2, 3, 12)))).shape == (2, 3, 8)
    assert [p.name for p in net.parameters()] == ["E.0.weight", "E.0.bias", "E.1.weight", "E.1.bias"]
    with pytest.raises(InvalidArgument):
        net(ag.Tensor(np.zeros((2, 11))))


def test_glorot_uniform_bounds():
    net = Mlp((30, 50), "x", np.random.default_rng(0))
    bound = np.sqrt(6 / 80)
    w = net.weights[0].data
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound


def test_adam_zero_gradient_leaves_params():
    p = ag.Tensor(np.arange(4.0), requires_grad=True, name="p")
    before = p.data.copy()
    adam_step(AdamState(lr=0.1), [p], [np.zeros(4, dtype=np.float32)])
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_closed_form():
    g = np.array([0.5, -2.0, 1e-3, 3.0], dtype=np.float32)
    p = ag.Tensor(np.zeros(4), requires_grad=True, name="p")
    adam_step(AdamState(lr=0.1), [p], [g])
    # bias-corrected first step: -lr * g / (|g| + eps)
    np.testing.assert_allclose(p.data, -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-5)


def test_adam_decreases_quadratic():
    p = ag.Tensor(np.array([3.0]), requires_grad=True, name="p")
    state = AdamState(lr=0.05)
    losses = []
    for _ in range(200):
        p.zero_grad()
        loss = ag.sum_(ag.square(p - 1.0))
        ag.backward(loss)
        adam_step(state, [p])
        losses.append(float(loss.data))
    # monotone after a short warmup
    assert all(b <= a + 1e-7 for a, b in zip(losses[5:60], losses[6:61]))
    assert losses[-1] < 1e-2 * losses[0]


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        net = Mlp((3, 5, 2), "n", rng)
        x = ag.Tensor(rng.normal(size=(4, 3)))
        state = AdamState(lr=0.01)
        for _ in range(5):
            for q in net.parameters():
                q.zero_grad()
            ag.backward(ag.sum_(ag.square(net(x))))
            adam_step(state, net.parameters())
        return [q.data.copy() for q in net.parameters()]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"b.weight": rng.normal(size=(3, 4)).astype(np.float32), "a": rng.normal(size=(5,)).astype(np.float32),
              "scalar": np.float32(2.5).reshape(())}
    save_checkpoint(tmp_path / "c1", arrays, {"note": "x"})
    loaded, meta = load_checkpoint(tmp_path / "c1")
    assert meta == {"note": "x"}
    for k, v in arrays.items():
        np.testing.assert_array_equal(loaded[k], v)
        assert loaded[k].dtype == np.float32
    save_checkpoint(tmp_path / "c2", loaded, meta)
    for name in (MANIFEST_NAME, BLOB_NAME):
        assert (tmp_path / "c1" / name).read_bytes() == (tmp_path / "c2" / name).read_bytes()
    manifest = json.loads((tmp_path / "c1" / MANIFEST_NAME).read_text())
    assert [e["name"] for e in manifest["params"]] == ["a", "b.weight", "scalar"]
    assert [e["offset"] for e in manifest["params"]] == [0, 20, 68]
    blob = (tmp_path / "c1" / BLOB_NAME).read_bytes()
    np.testing.assert_array_equal(np.frombuffer(blob[20:68], dtype="<f4").reshape(3, 4), arrays["b.weight"])
