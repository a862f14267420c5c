import numpy as np
import pytest

from mammocnn.roi import (
    BoundingBox, ContextStrategy, ROIError, expand_fixed, expand_proportional, extract_patch, mask_to_bbox,
    record_patch, resize_bilinear,
)

IMG = (1000, 1000)


def test_mask_to_bbox_examples():
    m = np.zeros((20, 20), bool)
    m[7, 5] = True
    assert mask_to_bbox(m) == BoundingBox(5, 7, 1, 1)
    assert mask_to_bbox(np.ones((80, 100), np.uint8)) == BoundingBox(0, 0, 100, 80)
    m = np.zeros((20, 20), bool)
    m[3, 2] = m[9, 10] = True
    assert mask_to_bbox(m) == BoundingBox(2, 3, 9, 7)


def test_empty_mask_error():
    with pytest.raises(ROIError, match="empty mask"):
        mask_to_bbox(np.zeros((5, 5)))


def test_expand_fixed_examples():
    assert expand_fixed(BoundingBox(100, 200, 50, 60), 50, IMG) == BoundingBox(50, 150, 150, 160)
    assert expand_fixed(BoundingBox(10, 10, 20, 20), 50, IMG) == BoundingBox(0, 0, 80, 80)
    b = BoundingBox(3, 4, 5, 6)
    assert expand_fixed(b, 0, IMG) == b


def test_expand_proportional_examples():
    assert expand_proportional(BoundingBox(100, 200, 50, 60), 2, IMG) == BoundingBox(75, 170, 100, 120)
    b = BoundingBox(3, 4, 5, 6)
    assert expand_proportional(b, 1, IMG) == b
    assert expand_proportional(BoundingBox(0, 0, 100, 100), 2, (150, 150)) == BoundingBox(0, 0, 150, 150)


def test_expanded_box_contains_source_and_stays_inside():
    rng = np.random.default_rng(0)
    for _ in range(300):
        W, H = rng.integers(5, 400, size=2)
        x, y = rng.integers(0, W), rng.integers(0, H)
        b = BoundingBox(int(x), int(y), int(rng.integers(1, W - x + 1)), int(rng.integers(1, H - y + 1)))
        for out in (expand_fixed(b, int(rng.integers(0, 80)), (W, H)),
                    expand_proportional(b, float(rng.uniform(1, 3)), (W, H))):
            assert out.contains(b) and out.inside((W, H))


def test_box_outside_image_rejected():
    with pytest.raises(ROIError):
        expand_fixed(BoundingBox(990, 0, 20, 5), 5, IMG)
    with pytest.raises(ROIError):
        ContextStrategy.large(0.5)


def test_passthrough_224():
    img = np.random.default_rng(1).integers(0, 256, (300, 300)).astype(np.uint8)
    p = extract_patch(img, BoundingBox(10, 20, 224, 224), 224)
    np.testing.assert_array_equal(p.pixels, (img[20:244, 10:234] / 255.0).astype(np.float32))


def test_constant_crop_stays_constant():
    img = np.full((90, 70), 30000, np.uint16)
    for box in (BoundingBox(0, 0, 70, 90), BoundingBox(5, 5, 3, 17)):
        p = extract_patch(img, box, 224)
        np.testing.assert_allclose(p.pixels, 30000 / 65535, rtol=0, atol=1e-7)


def test_bilinear_corner_aligned_by_hand():
    img = np.array([[0, 255], [255, 0]], np.uint8)
    p = extract_patch(img, BoundingBox(0, 0, 2, 2), 4).pixels
    # output pixel (i, j) samples source point (i/3, j/3)
    t = np.arange(4) / 3.0
    ty, tx = np.meshgrid(t, t, indexing="ij")
    want = tx * (1 - ty) + (1 - tx) * ty  # weights of the two 255 corners
    np.testing.assert_allclose(p, want, atol=1e-6)
    assert p[0, 0] == 0 and p[0, 3] == 1 and p[3, 0] == 1 and p[3, 3] == 0


def test_resize_rectangular():
    g = np.arange(12, dtype=np.float64).reshape(3, 4)
    out = resize_bilinear(g, 5, 7)
    assert out.shape == (5, 7)
    assert out[0, 0] == 0 and out[-1, -1] == 11


def test_degenerate_box():
    with pytest.raises(ROIError):
        BoundingBox(0, 0, 0, 5)


def test_record_patch_keeps_preclamp_context_box():
    img = np.zeros((100, 100), np.uint8)
    mask = np.zeros_like(img)
    mask[0:10, 0:10] = 1
    p = record_patch(img, mask, ContextStrategy.small(5), 32, "r1")
    assert p.pixels.shape == (32, 32) and p.source_record == "r1"
    assert p.source_box == BoundingBox(-5, -5, 20, 20)  # before clamping to the image
    with pytest.raises(ROIError):
        record_patch(img, mask[:50], ContextStrategy.small(), 32)


def test_sixteen_bit_scaled_by_format_maximum():
    img = np.full((10, 10), 65535, np.uint16)
    assert extract_patch(img, BoundingBox(0, 0, 10, 10), 10).pixels.max() == 1.0
