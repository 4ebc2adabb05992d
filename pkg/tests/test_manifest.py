import numpy as np
import pytest

from oreo.datagen import SynthSpec, generate_dataset
from oreo.errors import DataError
from oreo.fileio import read_pgm, write_pgm
from oreo.manifest import export_dataset, load_manifest


def write_tiny_manifest(tmp_path, rows, k=5, header=None):
    lines = [header or ("path,identity,set_id," + ",".join(f"attr_{i}" for i in range(k)))]
    for i, (attrs, set_id) in enumerate(rows):
        name = f"t{i}.pgm"
        write_pgm(tmp_path / name, np.full((16, 16), 40 + i, dtype=np.uint8))
        lines.append(f"{name},{i},{set_id}," + ",".join(str(a) for a in attrs))
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_loads_rows_with_attribute_vectors(tmp_path):
    path = write_tiny_manifest(
        tmp_path,
        [([0, 1, 0, 0, 0], ""), ([0, 0, 0, 0, 0], "setA"), ([1, 0, 0, 0, 1], "")],
    )
    ds = load_manifest(path)
    assert len(ds) == 3
    assert ds.n_attributes == 5
    assert all(len(s.attributes) == 5 for s in ds.samples)
    assert ds.samples[1].set_id == "setA"
    assert ds.samples[0].set_id is None


def test_all_zero_attributes_means_not_occluded(tmp_path):
    path = write_tiny_manifest(tmp_path, [([0, 0, 0, 0, 0], "")])
    ds = load_manifest(path)
    assert ds.samples[0].occluded == 0


def test_occluded_follows_configured_subset(tmp_path):
    path = write_tiny_manifest(tmp_path, [([0, 1, 0, 0, 0], "")])
    assert load_manifest(path).samples[0].occluded == 1
    assert load_manifest(path, occlusion_subset=(0, 2)).samples[0].occluded == 0


def test_round_trip_preserves_pixels_and_labels(tmp_path):
    ds = generate_dataset(
        SynthSpec(
            n_identities=50,
            images_per_identity=10,
            occluded_fraction=0.4,
            image_size=32,
            seed=11,
        )
    )
    manifest = export_dataset(ds, tmp_path / "out")
    back = load_manifest(manifest)
    assert len(back) == len(ds)
    assert back.attr_names == tuple(f"attr_{i}" for i in range(5))
    for original, loaded in zip(ds.samples, back.samples):
        assert np.array_equal(original.pixels, loaded.pixels)
        assert loaded.identity == original.identity
        assert np.array_equal(loaded.attributes, original.attributes)
        assert loaded.occluded == original.occluded


def test_png_round_trip(tmp_path):
    ds = generate_dataset(
        SynthSpec(n_identities=2, images_per_identity=2, image_size=16, seed=2)
    )
    manifest = export_dataset(ds, tmp_path / "png", image_format="png")
    back = load_manifest(manifest)
    for original, loaded in zip(ds.samples, back.samples):
        assert np.array_equal(original.pixels, loaded.pixels)


def test_missing_image_reports_row_and_path(tmp_path):
    path = write_tiny_manifest(tmp_path, [([0, 0, 0, 0, 0], "")])
    (tmp_path / "t0.pgm").unlink()
    with pytest.raises(DataError, match="t0.pgm"):
        load_manifest(path)


def test_attribute_count_mismatch_is_fatal(tmp_path):
    path = write_tiny_manifest(tmp_path, [([0, 0, 0], "")], k=3)
    # header declares 3 attributes; row with 5 must fail
    bad = path.read_text().splitlines()
    bad[1] = bad[1] + ",0,1"
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(DataError, match="expected 6 fields"):
        load_manifest(path)


def test_bad_header_is_fatal(tmp_path):
    path = write_tiny_manifest(
        tmp_path, [([0, 0], "")], k=2, header="path,identity,set_id,foo,bar"
    )
    with pytest.raises(DataError):
        load_manifest(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nope.csv")


def test_pgm_round_trip(tmp_path):
    raster = np.arange(256, dtype=np.uint8).reshape(16, 16)
    write_pgm(tmp_path / "x.pgm", raster)
    assert np.array_equal(read_pgm(tmp_path / "x.pgm"), raster)
