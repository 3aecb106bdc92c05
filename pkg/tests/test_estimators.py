import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from ridgevalley import fusion_eval, imaging, synth
from ridgevalley.estimators import (CylinderMatcher, GrayscaleConverter, MinutiaeExtractor,
                                    ScoreFusion)


@pytest.fixture(scope="module")
def templates():
    samples = synth.generate_corpus(synth.CorpusParams(n_fingers=2, n_impressions=2, seed=5))
    pipe = make_pipeline(GrayscaleConverter(), MinutiaeExtractor())
    ts = pipe.fit_transform([s.image for s in samples])
    return samples, ts


def test_params_and_clone():
    m = CylinderMatcher(radius=60.0)
    assert m.get_params()["radius"] == 60.0
    c = clone(m).set_params(n_s=6)
    assert c.n_s == 6 and m.n_s == 8


def test_grayscale_converter():
    img = imaging.ColorImage(np.random.default_rng(0).integers(0, 256, (5, 6, 3)).astype(float))
    g, = GrayscaleConverter(method="luma", invert=True).fit_transform([img])
    assert g.provenance.endswith("inverted") or "invert" in g.provenance
    ref = imaging.invert(imaging.to_gray_luma(img))
    assert np.array_equal(g.plane, ref.plane)
    with pytest.raises(ValueError):
        GrayscaleConverter(method="hsv").fit()


def test_extractor_rejects_color():
    img = imaging.ColorImage(np.zeros((32, 32, 3)))
    with pytest.raises(ValueError):
        MinutiaeExtractor().fit().transform([img])


def test_matcher_fit_predict(templates):
    samples, ts = templates
    pairs, y = [], []
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            pairs.append((ts[i], ts[j]))
            y.append(samples[i].subject == samples[j].subject)
    m = CylinderMatcher().fit(pairs, y)
    s = m.decision_function(pairs)
    assert s.shape == (6,) and np.all((s >= 0) & (s <= 1))
    assert m.eer_ == fusion_eval.compute_eer(fusion_eval.compute_roc((s, np.array(y))))
    pred = m.predict(pairs)
    assert pred.dtype == bool and np.all(pred == (s >= m.threshold_))
    fixed = CylinderMatcher(threshold=0.3).fit(pairs)
    assert fixed.threshold_ == 0.3
    with pytest.raises(ValueError):
        CylinderMatcher().fit(pairs)


def test_score_fusion_matches_core():
    rng = np.random.default_rng(1)
    r, v = rng.random(8), rng.random(8) * 5
    recs = lambda x: tuple(fusion_eval.ScoreRecord(f"p{k}", f"q{k}", k % 2 == 0, float(s))
                           for k, s in enumerate(x))
    rs = fusion_eval.ScoreSet(recs(r), "ridge")
    vs = fusion_eval.ScoreSet(recs(v), "valley")
    est = ScoreFusion(weight=0.3)
    fused = est.fit_transform(np.column_stack([r, v]))
    core = est.score_set(rs, vs)
    got = {(x.probe_id, x.gallery_id): x.score for x in core.records}
    for k in range(8):
        assert abs(got[(f"p{k}", f"q{k}")] - fused[k]) < 1e-12
    with pytest.raises(ValueError):
        ScoreFusion().fit(np.ones((4, 2)))
    with pytest.raises(ValueError):
        ScoreFusion(weight=1.5).fit(np.column_stack([r, v]))
