import math

import numpy as np
import pytest

from ridgevalley import synth
from ridgevalley.imaging import GrayImage
from ridgevalley.synth import IlluminationParams


def test_uniform_without_minutiae():
    h, gt = synth.generate_ridge_pattern("uniform", 8, (128, 128), seed=1, n_minutiae=0)
    assert gt.minutiae == [] and gt.singularities == []
    assert h.shape == (128, 128)
    assert np.abs(h).max() <= 1.0


def test_core_has_one_core():
    _, gt = synth.generate_ridge_pattern("core", 9, (200, 160), seed=2)
    assert [s.kind for s in gt.singularities] == ["core"]


@pytest.mark.parametrize("kind", synth.KINDS)
def test_deterministic_and_inside(kind):
    a, ga = synth.generate_ridge_pattern(kind, 10, (192, 160), seed=7)
    b, gb = synth.generate_ridge_pattern(kind, 10, (192, 160), seed=7)
    assert np.array_equal(a, b)
    assert ga.to_dict() == gb.to_dict()
    for f in list(ga.minutiae) + list(ga.singularities):
        assert 0 <= f.x <= 191 and 0 <= f.y <= 159
    assert ga.minutiae, "default density should inject minutiae"


@pytest.mark.parametrize("kwargs", [dict(period=5), dict(period=13), dict(dims=(127, 200)),
                                    dict(kind="loop")])
def test_invalid_arguments(kwargs):
    args = dict(kind="uniform", period=9, dims=(128, 128), seed=0) | kwargs
    with pytest.raises(ValueError):
        synth.generate_ridge_pattern(**args)


def test_orientation_function_matches_pattern():
    h, gt = synth.generate_ridge_pattern("uniform", 9, (128, 128), seed=4, n_minutiae=0)
    gy, gx = np.gradient(h)
    # ridges run perpendicular to the intensity gradient
    y, x = 64, 64
    grad_dir = math.atan2(gy[y, x], gx[y, x])
    theta = float(gt.orientation(x, y))
    d = (theta - (grad_dir + math.pi / 2)) % math.pi
    assert min(d, math.pi - d) < math.radians(5)


def test_contact_render_endpoints():
    img = synth.render_contact(np.array([[1.0, -1.0, 0.0]]))
    assert img.plane.tolist() == [[0.0, 255.0, 127.5]]


def _slice_profile(light):
    u = np.arange(64)
    h = np.tile(np.cos(2 * np.pi * u / 16.0), (8, 1))
    return synth.render_contactless(h, light).plane[4]


def test_overhead_light_symmetric_about_crest():
    p = _slice_profile(IlluminationParams(azimuth=0.3, elevation=math.pi / 2, ridge_height=2))
    crest = 32  # cos peaks at multiples of 16
    assert np.allclose(p[crest - 6:crest + 7], p[crest - 6:crest + 7][::-1], atol=1e-9)


def test_opposite_azimuths_mirror():
    a = _slice_profile(IlluminationParams(azimuth=0.0, elevation=math.pi / 5, ridge_height=2))
    b = _slice_profile(IlluminationParams(azimuth=math.pi, elevation=math.pi / 5, ridge_height=2))
    crest = 32
    assert np.allclose(a[crest - 10:crest + 11], b[crest - 10:crest + 11][::-1], atol=1e-9)
    assert not np.allclose(a, b)


def test_ambient_one_is_constant():
    h, _ = synth.generate_ridge_pattern("arch", 9, (128, 128), seed=0)
    img = synth.render_contactless(h, IlluminationParams(ambient=1.0))
    assert np.ptp(img.plane) == 0


def test_illumination_validation():
    with pytest.raises(ValueError):
        IlluminationParams(elevation=0)
    with pytest.raises(ValueError):
        IlluminationParams(ambient=1.5)


def _corr(a, b):
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])


def test_polarity_reversal_witness():
    """Two halves lit from opposite sides: the bright line follows the lit flank.

    Against the lit-flank reference (the ridge profile shifted a quarter
    period toward the light) the sign of the correlation flips between the
    halves. Against the contact render itself it stays at zero in both
    halves: a Lambertian render of a symmetric profile is uncorrelated with
    the profile, whichever way it is lit.
    """
    h, gt = synth.generate_ridge_pattern("uniform", 9, (256, 256), seed=11, n_minutiae=0)
    theta = float(gt.orientation(128, 128))
    normal = theta + math.pi / 2
    left = IlluminationParams(azimuth=normal, elevation=math.pi / 4, ridge_height=2)
    right = IlluminationParams(azimuth=normal + math.pi, elevation=math.pi / 4, ridge_height=2)
    img = synth.render_contactless(h, left).plane.copy()
    img[:, 128:] = synth.render_contactless(h, right).plane[:, 128:]
    contact = synth.render_contact(h).plane
    # lit-flank reference: slope of the relief facing the left half's light
    gy, gx = np.gradient(h)
    flank = -(gx * math.cos(normal) + gy * math.sin(normal))
    lh, rh = (slice(None), slice(16, 112)), (slice(None), slice(144, 240))
    c_left, c_right = _corr(img[lh], flank[lh]), _corr(img[rh], flank[rh])
    assert c_left > 0.5 and c_right < -0.5
    assert abs(_corr(img[lh], contact[lh])) < 0.05
    assert abs(_corr(img[rh], contact[rh])) < 0.05


def test_perturb_identity_and_determinism():
    h, _ = synth.generate_ridge_pattern("whorl", 9, (128, 128), seed=5)
    img = synth.render_contact(h)
    assert np.array_equal(synth.perturb_impression(img, 3).plane, img.plane)
    a = synth.perturb_impression(img, 3, 5, 0.2, 4)
    b = synth.perturb_impression(img, 3, 5, 0.2, 4)
    assert np.array_equal(a.plane, b.plane)
    assert not np.array_equal(a.plane, synth.perturb_impression(img, 4, 5, 0.2, 4).plane)


def test_perturb_noise_moments():
    img = GrayImage(np.full((256, 256), 128.0))
    out = synth.perturb_impression(img, seed=9, noise_sigma=10)
    assert abs(out.plane.mean() - 128) < 1.0
    assert abs(out.plane.std() - 10) < 1.5


def test_transform_truth_follows_image():
    h, gt = synth.generate_ridge_pattern("core", 9, (256, 256), seed=6)
    m = synth.impression_transform(2, (256, 256), 8, 0.2)
    moved = synth.transform_truth(gt, m)
    s0, s1 = gt.singularities[0], moved.singularities[0]
    assert s1.x == pytest.approx(m[0, 0] * s0.x + m[0, 1] * s0.y + m[0, 2])
    assert s1.y == pytest.approx(m[1, 0] * s0.x + m[1, 1] * s0.y + m[1, 2])


def test_corpus_layout():
    params = synth.CorpusParams(n_fingers=2, n_impressions=2, dims=(128, 128))
    samples = synth.generate_corpus(params)
    assert [s.sample_id for s in samples] == ["S000_1_1", "S000_1_2", "S001_1_1", "S001_1_2"]
    again = synth.generate_corpus(params)
    assert all(np.array_equal(a.image.pixels, b.image.pixels) for a, b in zip(samples, again))
    assert samples[0].image.pixels.max() <= 255 * params.exposure + 1e-9


def test_render_color_dark():
    img = GrayImage(np.full((4, 4), 255.0))
    c = synth.render_color(img, exposure=0.45)
    assert c.pixels.max() <= 0.45 * 255 + 1e-9
