import filecmp

import numpy as np
import pytest
from scipy import ndimage

from boxseg import synthdata
from boxseg.fileio import instance_mask, load_manifest
from boxseg.geometry import Box, bbox_of_mask


@pytest.fixture(scope="module")
def weak_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("weak")
    synthdata.generate("weak", 12, 3, out, size=48)
    return out


@pytest.fixture(scope="module")
def salient_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sal")
    synthdata.generate("salient", 10, 3, out, size=40)
    return out


class TestGenerate:
    def test_byte_identical(self, tmp_path):
        synthdata.generate("weak", 10, 7, tmp_path / "a", size=40)
        synthdata.generate("weak", 10, 7, tmp_path / "b", size=40)
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        for sub in ("images", "eval"):
            c = filecmp.dircmp(tmp_path / "a" / sub, tmp_path / "b" / sub)
            assert not c.diff_files and not c.left_only

    def test_seed_changes_output(self, tmp_path):
        synthdata.generate("salient", 2, 1, tmp_path / "a", size=40)
        synthdata.generate("salient", 2, 2, tmp_path / "b", size=40)
        assert (tmp_path / "a/images/s00000.ppm").read_bytes() != (tmp_path / "b/images/s00000.ppm").read_bytes()

    def test_salient_single_instance(self, salient_dir):
        doc = load_manifest(salient_dir / "manifest.json")
        assert len(doc["images"]) == 10
        assert all(len(img["instances"]) == 1 for img in doc["images"])

    def test_weak_instance_count(self, weak_dir):
        doc = load_manifest(weak_dir / "manifest.json")
        assert all(1 <= len(img["instances"]) <= 3 for img in doc["images"])

    def test_weak_masks_withheld(self, weak_dir):
        doc = load_manifest(weak_dir / "manifest.json")
        assert not any("mask_file" in i for img in doc["images"] for i in img["instances"])
        ev = load_manifest(weak_dir / "eval" / "manifest.json")
        assert all("mask_file" in i for img in ev["images"] for i in img["instances"])

    @pytest.mark.parametrize("which", ["salient", "weak"])
    def test_boxes_match_masks(self, which, salient_dir, weak_dir):
        path = salient_dir / "manifest.json" if which == "salient" else weak_dir / "eval" / "manifest.json"
        doc = load_manifest(path)
        for img in doc["images"]:
            for inst in img["instances"]:
                m = instance_mask(doc, inst)
                assert bbox_of_mask(m) == Box.from_list(inst["box"])

    def test_masks_connected(self, weak_dir):
        doc = load_manifest(weak_dir / "eval" / "manifest.json")
        for img in doc["images"]:
            for inst in img["instances"]:
                _, n = ndimage.label(instance_mask(doc, inst), structure=np.ones((3, 3)))
                assert n == 1

    def test_bad_split(self, tmp_path):
        with pytest.raises(ValueError):
            synthdata.generate("other", 1, 0, tmp_path)

    def test_bad_count(self, tmp_path):
        with pytest.raises(ValueError):
            synthdata.generate("weak", 0, 0, tmp_path)


class TestScenes:
    def test_visible_masks_disjoint(self):
        for i in range(20):
            scene, img, masks = synthdata.make_scene("weak", i, 0, 48)
            total = np.sum(masks, axis=0)
            assert total.max() <= 1
            assert img.shape == (3, 48, 48) and 0 <= img.min() and img.max() <= 1

    def test_salient_object_is_large(self):
        areas = [synthdata.make_scene("salient", i, 0, 64)[2][0].mean() for i in range(20)]
        assert min(areas) > 0.1
