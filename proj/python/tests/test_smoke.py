import json
import math

import numpy as np
import pytest

adamix = pytest.importorskip("adamix")


def test_age_schedule_endpoints():
    assert adamix.age_lambda(0, 100) == pytest.approx(math.exp(-5.0), abs=1e-12)
    assert adamix.age_lambda(50, 100) == pytest.approx(math.exp(-1.25), abs=1e-12)
    assert adamix.age_lambda(100, 100) == pytest.approx(1.0, abs=1e-12)


def test_self_paced_state():
    s = adamix.self_paced_state(0.25, 1.0, 16)
    assert s["mask"] == 1
    assert s["weight"] == pytest.approx(0.75)
    assert s["n"] == 12
    assert adamix.self_paced_state(2.0, 0.5, 16)["n"] == 0
    assert adamix.solve_mask(0.5, 0.5) == 0


def test_generate_sample_is_deterministic():
    img, lbl, split = adamix.generate_sample(3)
    img2, lbl2, _ = adamix.generate_sample(3)
    assert img.shape == (64, 64) and img.dtype == np.float32
    assert lbl.dtype == np.uint8
    assert split == "train_labeled"
    assert np.array_equal(img, img2) and np.array_equal(lbl, lbl2)
    assert set(np.unique(lbl)) <= {0, 1, 2}


def test_metrics():
    a = np.zeros((8, 8), np.uint8)
    b = np.zeros((8, 8), np.uint8)
    a[2:6, 2:6] = 1
    b[2:6, 2:4] = 1
    d, j = adamix.overlap(a, b)
    assert d == pytest.approx(2 * 8 / 24)
    assert j == pytest.approx(8 / 16)
    assert adamix.surface_distances(a, np.zeros_like(a)) is None
    hd, asd = adamix.surface_distances(a, a)
    assert hd == 0.0 and asd == 0.0
    r = adamix.evaluate_sample(a, a)
    assert r["dsc"] == 1.0


def test_mix_provenance():
    rng = np.random.default_rng(0)
    oi = np.arange(64, dtype=np.float32).reshape(8, 8)
    ai = oi + 1000
    lbl = rng.integers(0, 3, (8, 8)).astype(np.uint8)
    oc = rng.random((8, 8)).astype(np.float32)
    ac = rng.random((8, 8)).astype(np.float32)
    for strategy in ["cutmix", "umix", "iumix"]:
        img, _, conf, plan = adamix.mix_plan(strategy, oi, lbl, oc, ai, lbl, ac, 2, 4)
        assert plan["n"] == 2
        assert np.count_nonzero(img >= 1000) == 2 * 16
        assert np.all((conf == oc) | np.isin(conf, ac))
    img, _, _, plan = adamix.mix_plan("adamix", oi, lbl, oc, ai, lbl, ac, 4, 4, proxy_loss=5.0, lam=0.5)
    assert plan["n"] == 0
    assert np.array_equal(img, oi)
    with pytest.raises(ValueError):
        adamix.mix("mixup", oi, lbl, oc, ai, lbl, ac, 1, 4)


def test_train_and_evaluate(tmp_path):
    cfg = adamix.default_config()
    cfg["dataset"].update(n_train=8, n_val=2, n_test=2, labeled_fraction=0.25, image_size=32)
    cfg["model"]["base_width"] = 4
    cfg["schedule"].update(epochs=1, labeled_batch=2, unlabeled_batch=2)
    summary = adamix.train(cfg, tmp_path / "run")
    assert 0.0 <= summary["dsc"] <= 1.0
    saved = json.loads((tmp_path / "run" / "config.json").read_text())
    assert saved["paradigm"]["strategy"] == "adamix"
    again = adamix.evaluate_run(tmp_path / "run")
    assert again["dsc"] == pytest.approx(summary["dsc"], abs=1e-12)
    with pytest.raises(ValueError):
        adamix.train({"schema_version": 0}, tmp_path / "bad")
