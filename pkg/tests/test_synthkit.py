import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busmorph.dataset import ClassLabel
from busmorph.errors import SpecOutOfCanvas
from busmorph.imgproc import load_mask
from busmorph.morphometry import analyze
from busmorph.synthkit import (
    ShapeSpec,
    analytic_area,
    analytic_concave_count,
    boundary,
    oracle_corner_scan,
    oracle_hull,
    oracle_pixel_area,
    render,
    synth_corpus,
)


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.png")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# --- render -------------------------------------------------------------------


def test_disk_r50_pixel_count():
    m = render(ShapeSpec("disk", radius=50, canvas=(128, 128)))
    assert abs(m.count / (math.pi * 2500) - 1) < 0.02


def test_flat_star_is_its_disk():
    assert render(ShapeSpec("star", radius=40, lobes=5, depth=0.0)) == render(ShapeSpec("disk", radius=40))


def test_axis_aligned_rect_is_exact():
    assert render(ShapeSpec("rect", axes=(40, 10))).count == 400


def test_out_of_canvas_raises():
    with pytest.raises(SpecOutOfCanvas):
        render(ShapeSpec("disk", radius=63, canvas=(128, 128)))


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        ShapeSpec("star", lobes=2)
    with pytest.raises(ValueError):
        ShapeSpec("star", depth=1.5)
    with pytest.raises(ValueError):
        ShapeSpec("blob")


def test_render_is_deterministic_and_jitter_is_seeded():
    a = ShapeSpec("ellipse", axes=(30, 12), rotation=20, seed=5)
    assert render(a) == render(a)
    assert render(a) != render(ShapeSpec("ellipse", axes=(30, 12), rotation=20, seed=6))


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["disk", "ellipse", "rect", "star", "plus"]),
    st.floats(0, 90),
    st.integers(0, 2**31),
)
def test_pixel_count_tracks_analytic_area(kind, rot, seed):
    spec = ShapeSpec(kind, radius=40, axes=(30, 18), lobes=5, depth=0.3, arm=22, rotation=rot, seed=seed)
    m = render(spec)
    assert oracle_pixel_area(m) == m.count
    assert abs(m.count / analytic_area(spec) - 1) < 0.03


# --- oracles ------------------------------------------------------------------


def test_plus_corner_scan():
    assert oracle_corner_scan(boundary(ShapeSpec("plus", radius=40, arm=20))) == (8, 4)


def test_corner_scan_ignores_orientation():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert oracle_corner_scan(sq) == oracle_corner_scan(sq[::-1]) == (4, 0)


def test_hull_oracle_square_with_edge_points():
    pts = [(0, 0), (1, 0), (2, 0), (2, 2), (0, 2), (1, 1)]
    assert oracle_hull(pts) == {(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)}


def test_analytic_concave_counts():
    assert analytic_concave_count(ShapeSpec("star", lobes=7)) == 7
    assert analytic_concave_count(ShapeSpec("star", lobes=7, depth=0)) == 0
    assert analytic_concave_count(ShapeSpec("rosette", lobes=4)) == 4
    assert analytic_concave_count(ShapeSpec("plus")) == 4
    assert analytic_concave_count(ShapeSpec("disk")) == 0


# --- corpus -------------------------------------------------------------------


def test_corpus_layout(tmp_path):
    idx, labels = synth_corpus(tmp_path, per_class=10, seed=0)
    assert len(idx.samples) == 30
    assert idx.counts_per_class == {c: 10 for c in ClassLabel}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["benign", "malignant", "normal"]
    assert all(len(s.mask_paths) == 1 for s in idx.samples)
    assert set(labels.values()) == {"normal", "benign", "malignant"}


def test_corpus_is_byte_deterministic(tmp_path):
    synth_corpus(tmp_path / "a", 4, seed=9)
    synth_corpus(tmp_path / "b", 4, seed=9)
    synth_corpus(tmp_path / "c", 4, seed=10)
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")


def test_corpus_needs_two_per_class(tmp_path):
    with pytest.raises(ValueError):
        synth_corpus(tmp_path, 1, seed=0)


def test_form_factor_separates_benign_from_malignant(tmp_path):
    idx, labels = synth_corpus(tmp_path, per_class=12, seed=3)
    ff = {"benign": [], "malignant": []}
    for s in idx.samples:
        if labels[s.id] != "normal":
            ff[labels[s.id]].append(analyze(load_mask(s.mask_paths[0])).features.form_factor)
    # a threshold with zero training error exists
    values = sorted(ff["benign"] + ff["malignant"])
    cuts = [(a + b) / 2 for a, b in zip(values, values[1:])]
    assert any(all(v > t for v in ff["benign"]) and all(v < t for v in ff["malignant"]) for t in cuts)


def test_normal_masks_are_empty_or_specks(tmp_path):
    idx, labels = synth_corpus(tmp_path, per_class=8, seed=1)
    for s in idx.samples:
        if labels[s.id] == "normal":
            assert load_mask(s.mask_paths[0]).count <= 2
    assert np.isfinite(analytic_area(ShapeSpec("rosette", lobes=5)))
