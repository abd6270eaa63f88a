import numpy as np
import pytest

from gaze_fusion.data.generate import crop_from_box, generate_dataset, generate_sample, iter_poses
from gaze_fusion.data.specs import DatasetSpec, PerturbationSpec
from gaze_fusion.geometry.gaze import angular_errors_deg
from gaze_fusion.storage.dataset_store import load_dataset, save_dataset

from .conftest import tiny_specs


def test_anchor_labels_equal_true_gaze(tiny_datasets):
    anchor = tiny_datasets[0]
    assert anchor.dataset_id == 0
    np.testing.assert_array_equal(anchor.labels, anchor.true_gaze)


def test_perturbed_labels_differ(tiny_datasets):
    for dataset in tiny_datasets[1:]:
        errors = angular_errors_deg(dataset.labels, dataset.true_gaze)
        assert errors.mean() > 1.0


def test_rotation_perturbation_matches_injected_angle():
    spec = DatasetSpec(
        name="R", dataset_id=1, num_subjects=10, samples_per_subject=100,
        gaze_range=(25.0, 20.0), perturbation=PerturbationSpec(rotation_deg=5.0), seed=11,
    )
    poses = list(iter_poses(spec))
    assert len(poses) == 1000
    errors = angular_errors_deg(np.array([p.label for p in poses]), np.array([p.true_gaze for p in poses]))
    assert 4.0 <= errors.mean() <= 6.0


def test_poses_stay_in_range():
    spec = tiny_specs()[1]
    half = np.radians(spec.gaze_range)
    for pose in iter_poses(spec):
        assert np.all(np.abs(pose.true_gaze) <= half)


def test_samples_are_pure_functions_of_index():
    spec = tiny_specs()[2]
    late = generate_sample(spec, 7)
    dataset = generate_dataset(spec)
    np.testing.assert_array_equal(late[1], dataset.faces[7])
    np.testing.assert_array_equal(late[0].label, dataset.labels[7])


def test_eye_crops_recompute_from_stored_face(tiny_datasets):
    for dataset in tiny_datasets:
        for i in range(len(dataset)):
            left, right = crop_from_box(dataset.faces[i], dataset.eye_boxes[i], dataset.spec.eye_size)
            np.testing.assert_array_equal(left, dataset.left_eyes[i])
            np.testing.assert_array_equal(right, dataset.right_eyes[i])


def test_split_holds_out_last_samples_of_each_subject(tiny_datasets):
    dataset = tiny_datasets[1]
    spec = dataset.spec
    test_rows = dataset.split_indices("test")
    assert len(test_rows) == spec.num_subjects * spec.test_per_subject
    within = test_rows % spec.samples_per_subject
    assert np.all(within >= spec.samples_per_subject - spec.test_per_subject)
    assert set(dataset.subject_ids[test_rows]) == set(range(spec.num_subjects))
    with pytest.raises(ValueError):
        dataset.split_indices("validation")


def test_same_seed_same_content_hash(tmp_path):
    spec = tiny_specs()[3]
    first = save_dataset(generate_dataset(spec), tmp_path / "a")
    second = save_dataset(generate_dataset(spec), tmp_path / "b")
    assert first == second
    assert (tmp_path / "a" / "data.bin").read_bytes() == (tmp_path / "b" / "data.bin").read_bytes()

    other = save_dataset(generate_dataset(spec.model_copy(update={"seed": spec.seed + 100})), tmp_path / "c")
    assert other != first


def test_saved_dataset_loads_bitwise(tmp_path):
    dataset = generate_dataset(tiny_specs()[1])
    save_dataset(dataset, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    assert loaded.spec == dataset.spec
    assert loaded.content_hash == dataset.content_hash
    for field in ("faces", "left_eyes", "right_eyes", "labels", "true_gaze", "head_pose", "eye_boxes", "subject_ids", "is_test"):
        np.testing.assert_array_equal(getattr(loaded, field), getattr(dataset, field))
