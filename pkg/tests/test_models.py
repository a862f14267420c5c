import numpy as np
import pytest
import torch
import torchvision

from mammocnn.models import (
    ALEXNET, BASELINE, GOOGLENET, PRETRAINED_IMAGENET, XAVIER_SCRATCH, LRMultiplierScheme, ModelConfig, ModelError,
    adapt_backbone, as_input, build_baseline, build_network, init_weights, load_layer_map, loss_heads,
    model_summary, multiplier_scheme, param_groups, shape_trace, trainable_parameter_count,
)


def conv(k, cin, cout, bias=True):
    return k * k * cin * cout + (cout if bias else 0)


def fc(i, o):
    return i * o + o


def test_baseline_param_count_closed_form():
    # bias-free 3x3 convs, BN gamma+beta, then FC 50176-128-64-2
    want = (conv(3, 3, 32, False) + 2 * 32 + conv(3, 32, 32, False) + 2 * 32 + conv(3, 32, 64, False) + 2 * 64
            + fc(28 * 28 * 64, 128) + fc(128, 64) + fc(64, 2))
    assert trainable_parameter_count(build_baseline()) == want == 6_459_810


def test_alexnet_param_count_closed_form():
    want = (conv(11, 3, 64) + conv(5, 64, 192) + conv(3, 192, 384) + conv(3, 384, 256) + conv(3, 256, 256)
            + fc(256 * 6 * 6, 4096) + fc(4096, 4096) + fc(4096, 2))
    assert trainable_parameter_count(adapt_backbone(ALEXNET)) == want


def test_baseline_forward_contract():
    net = build_baseline().eval()
    logits, probs = net.scores(torch.rand(4, 3, 224, 224))
    assert logits.shape == (4, 2)
    torch.testing.assert_close(probs.sum(1), torch.ones(4), atol=1e-5, rtol=0)


def test_baseline_shape_trace():
    t = shape_trace(build_baseline())
    assert [t[b][1] for b in ("block1", "block2", "block3")] == [112, 56, 28]
    assert t["flatten"] == (50176,)


def test_baseline_other_sides():
    assert shape_trace(build_baseline(48))["flatten"] == (64 * 36,)
    with pytest.raises(ModelError):
        build_baseline(50)


def test_grayscale_input_replicated():
    net = build_baseline(32).eval()
    x = torch.rand(2, 1, 32, 32)
    torch.testing.assert_close(net(x), net(x.expand(-1, 3, -1, -1)))
    assert as_input(np.zeros((2, 8, 8), np.float32)).shape == (2, 3, 8, 8)
    assert as_input(np.zeros((2, 8, 8, 3), np.float32)).shape == (2, 3, 8, 8)


def test_googlenet_single_head_and_forward():
    net = adapt_backbone(GOOGLENET).eval()
    assert loss_heads(net) == ["fc"]
    with torch.no_grad():
        assert net(torch.rand(2, 3, 224, 224)).shape == (2, 2)


def test_alexnet_forward():
    net = adapt_backbone(ALEXNET).eval()
    with torch.no_grad():
        assert net(torch.rand(2, 3, 224, 224)).shape == (2, 2)


def test_param_ratio():
    ratio = trainable_parameter_count(adapt_backbone(ALEXNET)) / trainable_parameter_count(adapt_backbone(GOOGLENET))
    assert 10 <= ratio <= 30


def test_adapt_baseline_is_an_error():
    with pytest.raises(ModelError):
        adapt_backbone(BASELINE)


def test_xavier_variance():
    net = build_network(ModelConfig(BASELINE, init=XAVIER_SCRATCH))
    checked = 0
    for name, p in net.named_parameters():
        if p.ndim < 2 or p.numel() < 10_000:
            continue
        fan_in = p.shape[1] * p[0, 0].numel()
        fan_out = p.shape[0] * p[0, 0].numel()
        want = 2.0 / (fan_in + fan_out)
        assert abs(p.detach().var().item() / want - 1) < 0.2, name
        checked += 1
    assert checked == 2  # block3 conv and fc1


def _reference_state(arch):
    ref = torchvision.models.alexnet(weights=None) if arch == ALEXNET else \
        torchvision.models.googlenet(weights=None, aux_logits=False, init_weights=True)
    return ref.state_dict()


def test_pretrained_alexnet_loads_convs_and_reports_fresh_fc(tmp_path):
    state = _reference_state(ALEXNET)
    torch.save(state, tmp_path / "alex.pt")
    net = build_network(ModelConfig(ALEXNET, init=PRETRAINED_IMAGENET, pretrained_path=str(tmp_path / "alex.pt")))
    assert net.init_report["fresh"] == ["classifier.1", "classifier.4", "classifier.6"]
    assert set(net.init_report["loaded"]) == {f"features.{i}" for i in (0, 3, 6, 8, 10)}
    torch.testing.assert_close(net.body.features[0].weight, state["features.0.weight"])
    assert net.prep.mean.flatten().tolist() == pytest.approx([0.485, 0.456, 0.406])


def test_pretrained_missing_first_conv_named():
    state = _reference_state(ALEXNET)
    del state["features.0.weight"]
    with pytest.raises(ModelError, match=r"missing layers: features\.0"):
        init_weights(adapt_backbone(ALEXNET), PRETRAINED_IMAGENET, state)


def test_pretrained_shape_mismatch_named():
    state = _reference_state(ALEXNET)
    state["features.3.weight"] = torch.zeros(1)
    with pytest.raises(ModelError, match=r"shape mismatch: features\.3"):
        init_weights(adapt_backbone(ALEXNET), PRETRAINED_IMAGENET, state)


def test_pretrained_googlenet_loads_everything_but_fc():
    net = init_weights(adapt_backbone(GOOGLENET), PRETRAINED_IMAGENET, _reference_state(GOOGLENET))
    assert net.init_report["fresh"] == ["fc"]
    assert len(load_layer_map(GOOGLENET)) > 300


def test_googlenet_multipliers():
    net = adapt_backbone(GOOGLENET)
    groups = param_groups(net, 1e-2, multiplier_scheme(GOOGLENET))
    assert {g["multiplier"] for g in groups} == {0.1, 1.0, 10.0}
    by_name = {g["name"]: g for g in groups}
    assert by_name["fc"]["lr"] == pytest.approx(0.1)
    assert by_name["inception5b"]["lr"] == pytest.approx(1e-2)
    assert by_name["conv1"]["lr"] == pytest.approx(1e-3)


def test_alexnet_conv_lr_is_tenth():
    groups = param_groups(adapt_backbone(ALEXNET), 1e-3, multiplier_scheme(ALEXNET))
    for g in groups:
        assert g["lr"] == pytest.approx(1e-4 if g["name"].startswith("conv") else 1e-3)


@pytest.mark.parametrize("arch", [ALEXNET, GOOGLENET, BASELINE])
def test_groups_partition_parameters(arch):
    net = build_baseline() if arch == BASELINE else adapt_backbone(arch)
    scheme = LRMultiplierScheme.uniform() if arch == BASELINE else multiplier_scheme(arch)
    groups = param_groups(net, 1.0, scheme)
    assert sum(p.numel() for g in groups for p in g["params"]) == trainable_parameter_count(net)
    ids = [id(p) for g in groups for p in g["params"]]
    assert len(ids) == len(set(ids))


def test_scheme_errors_and_text():
    with pytest.raises(ModelError):
        multiplier_scheme(BASELINE)
    s = multiplier_scheme(GOOGLENET)
    assert LRMultiplierScheme.from_text(s.to_text()) == s
    with pytest.raises(ModelError, match="matches 0"):
        LRMultiplierScheme((("conv*", 1.0),)).resolve(["fc"])


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(BASELINE, init=PRETRAINED_IMAGENET)
    with pytest.raises(ModelError):
        ModelConfig(ALEXNET, num_classes=3)
    with pytest.raises(ModelError, match="archive"):
        build_network(ModelConfig(ALEXNET, init=PRETRAINED_IMAGENET))


def test_summary_lists_groups():
    text = model_summary(build_baseline(), LRMultiplierScheme.uniform())
    assert "fc1\t1.0\t6422656" in text and "total trainable 6459810" in text
