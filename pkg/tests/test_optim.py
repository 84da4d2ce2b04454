import math
import json

import numpy as np
import pytest

from omnisal import optim
from omnisal.checkpoint import load_checkpoint, save_checkpoint
from omnisal.tensor import Tensor


def scalar_adamw(p, grads, lr, b1=0.9, b2=0.999, wd=1e-2, eps=1e-8):
    """Straight-line scalar reference."""
    m = v = 0.0
    out = []
    for k, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**k)
        vh = v / (1 - b2**k)
        p = p - lr * wd * p - lr * mh / (math.sqrt(vh) + eps)
        out.append(p)
    return out


def test_defaults():
    st = optim.AdamWState()
    assert (st.lr, st.betas, st.weight_decay) == (1e-5, (0.9, 0.999), 1e-2)


def test_matches_scalar_reference():
    grads = [0.3, -1.2, 0.5, 2.0, -0.1]
    ref = scalar_adamw(1.5, grads, lr=1e-2)
    st = optim.AdamWState(lr=1e-2)
    p = {"w": np.array([1.5])}
    for g, r in zip(grads, ref):
        p = optim.adamw_step(p, {"w": np.array([g])}, st)
        assert p["w"][0] == pytest.approx(r, rel=1e-14)
    assert st.step == 5


def test_zero_grad_zero_decay_unchanged():
    st = optim.AdamWState(weight_decay=0.0)
    p = {"w": np.array([0.7, -2.0])}
    out = optim.adamw_step(p, {"w": np.zeros(2)}, st)
    np.testing.assert_array_equal(out["w"], p["w"])


def test_missing_gradient_left_alone_and_shape_check():
    st = optim.AdamWState()
    p = {"a": np.ones(2), "b": np.ones(3)}
    out = optim.adamw_step(p, {"a": np.ones(2)}, st)
    assert out["b"] is p["b"]
    with pytest.raises(ValueError):
        optim.adamw_step(p, {"a": np.ones(3)}, st)


def test_quadratic_converges():
    x = Tensor(np.array([3.0]), requires_grad=True)
    opt = optim.AdamW({"x": x}, lr=0.05, weight_decay=0.0)
    for _ in range(1000):
        opt.zero_grad()
        loss = ((x - 1.0) * (x - 1.0)).sum()
        loss.backward()
        opt.step()
    assert abs(x.data[0] - 1.0) < 1e-2


def test_cosine_schedule():
    assert optim.cosine_lr(0, 100) == pytest.approx(1e-5)
    assert optim.cosine_lr(100, 100) == pytest.approx(2e-6)
    assert optim.cosine_lr(50, 100) == pytest.approx((1e-5 + 2e-6) / 2)
    vals = [optim.cosine_lr(s, 100) for s in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    for bad in (-1, 101):
        with pytest.raises(ValueError):
            optim.cosine_lr(bad, 100)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.w": Tensor(rng.standard_normal((3, 4))), "b": Tensor(np.arange(5.0))}
    save_checkpoint(tmp_path / "ck", params, {"note": "x"})
    manifest = json.loads((tmp_path / "ck.json").read_text())
    assert {t["name"] for t in manifest["tensors"]} == {"a.w", "b"}
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert meta["note"] == "x"
    for k, v in params.items():
        assert loaded[k].tobytes() == v.data.tobytes()
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck", expected={"b": (4,)})
