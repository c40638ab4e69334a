import numpy as np
import pytest

from structpol.exceptions import CalibrationError
from structpol.geocal import backproject_board_points, board_poses, calibrate_projector, simulate_board_observations


@pytest.fixture(scope="module")
def boards(camera, projector, sequence):
    return simulate_board_observations(camera, projector, sequence, board_poses(5, tilt=np.radians(15.0), seed=1))


def test_board_poses_are_seeded_and_distinct():
    first, again = board_poses(4, seed=3), board_poses(4, seed=3)
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.rotation, b.rotation)
    normals = np.stack([pose.rotation[:, 2] for pose in first])
    assert np.all(normals[:, 2] < 0)
    assert len({tuple(np.round(n, 6)) for n in normals}) == 4


def test_backprojected_points_lie_on_the_board(boards, camera):
    for obs in boards:
        assert obs.correspondence.count > 100
        pairs = backproject_board_points(obs, camera)
        offsets = (pairs.points - obs.pose.translation) @ obs.pose.rotation[:, 2]
        np.testing.assert_allclose(offsets, 0.0, atol=1e-9)


def test_calibration_recovers_the_projector(boards, camera, projector):
    result = calibrate_projector(boards, camera, projector.resolution, translation_y=float(projector.pose.translation[1]))
    assert result.focal == pytest.approx(projector.intrinsics[0, 0], rel=5e-3)
    assert result.intrinsics[0, 2] == pytest.approx(projector.intrinsics[0, 2], abs=0.5)
    assert result.rms < 0.05
    assert result.rms <= result.initial_rms
    np.testing.assert_allclose(result.pose.center, projector.center, atol=5e-3)
    assert len(result.board_extrinsics) == len(boards)


def test_calibration_needs_three_boards(boards, camera, projector):
    with pytest.raises(CalibrationError):
        calibrate_projector(boards[:2], camera, projector.resolution)


def test_repeated_board_pose_is_degenerate(boards, camera, projector):
    with pytest.raises(CalibrationError):
        calibrate_projector([boards[0]] * 3, camera, projector.resolution)


def test_ground_truth_geometry_is_passed_through(boards, camera, projector):
    result = calibrate_projector(boards, camera, projector.resolution, ground_truth=projector)
    np.testing.assert_array_equal(result.intrinsics, projector.intrinsics)
    assert result.rms < 0.05
    assert result.n_points == sum(obs.correspondence.count for obs in boards)
