import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mgfi_tvr import mgfi as mg
from mgfi_tvr.cmfi import init_cmfi_params
from mgfi_tvr.gradcheck import numeric_grad, rel_error
from mgfi_tvr.objective import (
    ObjectiveConfig,
    config_for_modules,
    gallery_scores,
    infonce_loss,
    loss_and_grads,
    similarity_matrix,
)

from conftest import make_items


def brute_infonce(f):
    b = f.shape[0]
    v2t = -sum(math.log(math.exp(f[i, i]) / sum(math.exp(f[i, j]) for j in range(b))) for i in range(b)) / b
    t2v = -sum(math.log(math.exp(f[j, j]) / sum(math.exp(f[i, j]) for i in range(b))) for j in range(b)) / b
    return t2v, v2t


def test_two_by_two_closed_form():
    loss, _ = infonce_loss(np.array([[10.0, 0.0], [0.0, 10.0]]))
    assert loss.total == pytest.approx(2 * math.log1p(math.exp(-10)), rel=1e-10)


def test_matches_brute_force(rng):
    f = rng.normal(size=(5, 5)) * 2
    loss, _ = infonce_loss(f)
    t2v, v2t = brute_infonce(f)
    assert abs(loss.t2v - t2v) < 1e-12 and abs(loss.v2t - v2t) < 1e-12


def test_directions_are_row_and_column_terms():
    f = np.array([[5.0, 0.0], [5.0, 0.0]])
    loss, _ = infonce_loss(f)
    # every video prefers caption 0, caption 1 cannot tell the videos apart
    assert loss.v2t > loss.t2v
    t2v, v2t = brute_infonce(f)
    assert abs(loss.t2v - t2v) < 1e-12 and abs(loss.v2t - v2t) < 1e-12


def test_single_item_loss_is_zero():
    assert infonce_loss(np.array([[3.7]]))[0].total == 0.0


@pytest.mark.parametrize("b", [2, 4, 8, 32])
def test_uniform_matrix(b):
    assert abs(infonce_loss(np.full((b, b), 0.3))[0].total - 2 * math.log(b)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-30, 30)), st.floats(-500, 500))
def test_shift_invariance(f, shift):
    assert abs(infonce_loss(f + shift)[0].total - infonce_loss(f)[0].total) < 1e-10


def test_gradient_closed_form_and_fd(rng):
    f = rng.normal(size=(4, 4)) * 3
    _, g = infonce_loss(f)
    assert rel_error(g, numeric_grad(lambda: infonce_loss(f)[0].total, f)) < 1e-7
    e = np.exp(f)
    closed = (e / e.sum(1, keepdims=True) - np.eye(4)) / 4 + (e / e.sum(0, keepdims=True) - np.eye(4)) / 4
    np.testing.assert_allclose(g, closed, atol=1e-12)
    assert abs(g.sum()) < 1e-12


def test_non_square_rejected():
    with pytest.raises(ValueError):
        infonce_loss(np.zeros((2, 3)))


def test_module_toggles():
    assert config_for_modules([]).video_mode == "base"
    assert config_for_modules(["s-f"]).video_mode == "sentence"
    assert config_for_modules(["w-f"]).video_mode == "word"
    cfg = config_for_modules(["s-f", "w-f", "a-s"])
    assert cfg.video_mode == "both" and cfg.use_audio
    assert not config_for_modules(["s-f"]).use_audio
    with pytest.raises(ValueError):
        config_for_modules(["x-y"])


def test_fused_matrix_composition(rng, small_items):
    p = mg.init_mgfi_params(8, seed=1)
    q = init_cmfi_params(8)
    cfg = ObjectiveConfig(temperature=7.0, audio_weight=0.5)
    sm = similarity_matrix(small_items, p, q, cfg)
    np.testing.assert_allclose(sm.fused, 7.0 * (sm.vt + 0.5 * sm.at), atol=1e-12)
    assert np.all(sm.at[~sm.audio_present] == 0)
    assert sm.vt[2, 4] == pytest.approx(mg.video_text_similarity(small_items[4].text, small_items[2].video, p), abs=1e-12)


def test_drop_term_policy_marks_absent_rows_but_fuses_identically(small_items):
    p = mg.init_mgfi_params(8, seed=1)
    q = init_cmfi_params(8)
    zero = similarity_matrix(small_items, p, q, ObjectiveConfig(absent_audio="zero"))
    drop = similarity_matrix(small_items, p, q, ObjectiveConfig(absent_audio="drop-term"))
    assert np.all(np.isnan(drop.at[~drop.audio_present]))
    np.testing.assert_array_equal(zero.fused, drop.fused)


def test_base_mode_ignores_params(small_items):
    sm = similarity_matrix(small_items, None, None, config_for_modules([]))
    assert sm.vt.shape == (6, 6)


def test_worker_count_does_not_change_scores(rng):
    items = make_items(rng, 23, 6)
    p = mg.init_mgfi_params(6, seed=2)
    a = similarity_matrix(items, p, init_cmfi_params(6), ObjectiveConfig(workers=1, chunk_size=4))
    b = similarity_matrix(items, p, init_cmfi_params(6), ObjectiveConfig(workers=3, chunk_size=5))
    assert np.max(np.abs(a.fused - b.fused)) < 1e-9


def test_gallery_scores_match_matrix_column(small_items):
    p = mg.init_mgfi_params(8, seed=1)
    q = init_cmfi_params(8)
    cfg = ObjectiveConfig(chunk_size=4)
    sm = similarity_matrix(small_items, p, q, cfg)
    np.testing.assert_allclose(gallery_scores(small_items[3], small_items, p, q, cfg), sm.fused[:, 3], atol=1e-10)


def test_loss_and_grads_groups(small_items):
    p = mg.init_mgfi_params(8, seed=1)
    q = init_cmfi_params(8)
    cfg = ObjectiveConfig(use_audio=False)
    _, _, grads = loss_and_grads(small_items, p, q, cfg, train_cmfi=False)
    assert set(grads) == set(p.state_dict())
    _, _, grads = loss_and_grads(small_items, p, q, ObjectiveConfig(), train_mgfi=False, learn_temperature=True)
    assert set(grads) == set(q.state_dict()) | {"temperature"}


def test_loss_matches_similarity_matrix(small_items):
    p = mg.init_mgfi_params(8, seed=1)
    q = init_cmfi_params(8)
    cfg = ObjectiveConfig(temperature=5.0)
    loss, sm, _ = loss_and_grads(small_items, p, q, cfg)
    assert loss.total == pytest.approx(infonce_loss(similarity_matrix(small_items, p, q, cfg))[0].total, abs=1e-12)


def test_invalid_config():
    with pytest.raises(ValueError):
        ObjectiveConfig(video_mode="frames")
    with pytest.raises(ValueError):
        ObjectiveConfig(absent_audio="ignore")
    with pytest.raises(ValueError):
        ObjectiveConfig(workers=0)
