import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image

from mammocnn.saliency import SaliencyMap, input_gradient, render_panel, saliency_map


class Constant(nn.Module):
    def forward(self, x):
        return torch.zeros(x.shape[0], 2)


class Linear(nn.Module):
    def __init__(self, side, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.w = nn.Parameter(torch.randn(2, 3 * side * side, generator=g))

    def forward(self, x):
        return x.flatten(1) @ self.w.T


def test_constant_net_gives_zero_map():
    m = saliency_map(Constant(), np.random.rand(8, 8).astype(np.float32), class_index=1)
    assert m.values.shape == (8, 8) and not m.values.any()
    assert not m.rendered().any()


def test_linear_net_map_is_max_abs_weight():
    side = 6
    net = Linear(side)
    m = saliency_map(net, np.random.rand(side, side).astype(np.float32), class_index=0)
    want = net.w[0].detach().abs().view(3, side, side).max(0).values.numpy()
    np.testing.assert_allclose(m.values, want, rtol=1e-6)


def test_predicted_class_used_by_default():
    net = Linear(4)
    px = np.random.rand(4, 4).astype(np.float32)
    with torch.no_grad():
        logits = net(torch.as_tensor(px).expand(3, -1, -1).unsqueeze(0))[0]
    assert saliency_map(net, px).class_index == int(logits[1] >= logits[0])


def test_non_module_rejected():
    with pytest.raises(TypeError):
        saliency_map(lambda x: x, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        input_gradient(Linear(4), np.zeros((4, 4)), 2)


def _maps(n, side=16):
    rng = np.random.default_rng(0)
    pats = [rng.random((side, side)) for _ in range(n)]
    return pats, [SaliencyMap(p, 1, 0.0, 1.0) for p in pats]


def test_panel_five_columns(tmp_path):
    pats, maps = _maps(5)
    out = render_panel(pats, maps, tmp_path / "p5.png", titles=list("abcde"))
    w5 = Image.open(out).size[0]
    pats, maps = _maps(1)
    w1 = Image.open(render_panel(pats, maps, tmp_path / "p1.png")).size[0]
    assert w5 == 5 * w1


def test_panel_errors(tmp_path):
    with pytest.raises(ValueError):
        render_panel([], [], tmp_path / "x.png")
    pats, maps = _maps(2)
    with pytest.raises(ValueError):
        render_panel(pats, maps[:1], tmp_path / "x.png")
