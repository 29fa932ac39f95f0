import json

import numpy as np
import pytest

import meltpool as mp


def test_overlay_round_trip():
    _, mask, _ = mp.generate_scene(64, 3)
    assert mask.dtype == np.uint8
    overlay = mp.encode_overlay(mask)
    assert overlay.shape == (64, 64, 3)
    assert np.array_equal(mp.decode_overlay(overlay), mask)


def test_png_round_trip(tmp_path):
    image, mask, truth = mp.generate_scene(64, 4)
    mp.write_png(tmp_path / "img.png", image)
    assert np.array_equal(mp.read_png(tmp_path / "img.png"), image)
    mp.write_mask_png(tmp_path / "mask.png", mask)
    assert np.array_equal(mp.read_mask_png(tmp_path / "mask.png"), mask)
    assert json.loads(truth)["spec"]["seed"] == 4
    with pytest.raises(mp.IoError):
        mp.read_png(tmp_path / "missing.png")


def test_ssim_identity_and_shape_mismatch():
    image, _, _ = mp.generate_scene(64, 5)
    assert mp.ssim(image, image) == pytest.approx(1.0, abs=1e-12)
    assert mp.ssim(image, 255.0 - image) < 0.5
    with pytest.raises(mp.InvalidInput):
        mp.ssim(image, image[:32])


def test_half_ellipse_recovery():
    t = np.linspace(0.0, np.pi, 200)
    arc = np.stack([100 + 40 * np.cos(t), 50 + 20 * np.sin(t)], axis=1)
    fit = mp.fit_half_ellipse(arc)
    assert fit["a"] == pytest.approx(40.0, rel=1e-6)
    assert fit["b"] == pytest.approx(20.0, rel=1e-6)


def test_split_and_merge_points():
    dumbbell = np.zeros((20, 40), dtype=np.uint8)
    dumbbell[3:17, 2:16] = 1
    dumbbell[3:17, 24:38] = 1
    dumbbell[8:12, 16:24] = 1
    assert mp.count_regions(dumbbell) == 1
    split = mp.apply_corrections(dumbbell, [{"kind": "split", "x": 19, "y": 9}])
    assert mp.count_regions(split) == 2

    pair = np.zeros((20, 30), dtype=np.uint8)
    pair[2:18, 2:13] = 1
    pair[2:18, 14:27] = 1
    merged = mp.apply_corrections(pair, [{"kind": "merge", "x": 13, "y": 9}])
    assert mp.count_regions(merged) == 1
    with pytest.raises(ValueError):
        mp.apply_corrections(pair, [{"kind": "erase", "x": 1, "y": 1}])


def test_statistics_over_scene_masks():
    masks = [mp.generate_scene(256, s)[1] for s in range(3)]
    stats = mp.statistics(masks)
    assert len(stats["pools"]) > 0
    assert stats["pools"][0]["id"] == 0


def test_workflow_loop(tmp_path):
    wf = mp.Workflow.create(
        tmp_path / "ws",
        {"tile_size": 32, "base_filters": 4, "discriminator_blocks": 2, "train_steps": 2,
         "checkpoint_interval": 2, "validation_fraction": 0.2, "seed": 1},
    )
    tiles = []
    for s in range(2):
        tiles += wf.add_image(mp.generate_scene(64, s)[0], "synthetic")
    wf.seed_tiles(tiles[:6], approve=True)
    first = json.loads(wf.bootstrap())
    assert first["train_set_size"] == 5

    batch = wf.unseen_tiles()
    with pytest.raises(mp.ReviewPending):
        wf.advance_iteration(batch)
    first_reply = wf.ingest_corrections(batch[0], [], "r1", approve=True)
    assert json.loads(first_reply)["status"] == "approved"
    assert wf.ingest_corrections(batch[0], [], "r1", approve=True) == first_reply
    done = json.loads(wf.resume_iteration(auto_approve=True))
    assert done["state"] == "complete"
    assert done["after"] == done["before"] + 2

    reopened = mp.Workflow(tmp_path / "ws")
    assert reopened.manifest() == wf.manifest()
    with pytest.raises(mp.InvalidInput):
        wf.advance_iteration([])
