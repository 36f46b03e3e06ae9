from dataclasses import replace

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from src.align import (
    AlignmentConfig, AlignmentProblem, align_multiscale, evaluate_level, gauss_newton_level,
    is_well_conditioned, residual_row, semantic_residual, solve_normal_equations,
)
from src.config import PROB_FLOOR
from src.errors import ConfigError, DegenerateLevel, DimensionError, SolverFailure
from src.evaluation import pose_error
from src.geom import Pose, compose, exp_map, random_pose_offset, unproject_many
from src.mesh import SemanticMesh
from src.renderer import render
from src.scenegen import default_intrinsics
from src.semantics import LogitsImage, build_pyramid, label_frame_to_pyramid
from src.window import frame_pose_of


def labeled_problem(mesh, k, config, gt_pose, offset):
    """Frame rendered at gt_pose, map rendered at gt_pose composed with offset"""
    frame = render(mesh, k, gt_pose).labels
    pyramid = label_frame_to_pyramid(frame, mesh.table, config.levels_total)
    render_pose = compose(gt_pose, offset)
    view = render(mesh, k, render_pose)
    return AlignmentProblem.build(view, pyramid, k, config), render_pose


def split_plane_mesh():
    """Fronto-parallel plane at z = 5 split into two classes along x = 0"""
    vertices = np.array([
        [-20, -20, 5], [0, -20, 5], [0, 20, 5], [-20, 20, 5],
        [0, -20, 5], [20, -20, 5], [20, 20, 5], [0, 20, 5],
    ], dtype=float)
    triangles = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]])
    return SemanticMesh(vertices, triangles, np.array([1, 1, 2, 2]))


class TestConfig:
    def test_default_levels(self):
        assert AlignmentConfig().used_levels == [5, 4, 3]

    def test_small_levels(self, small_align_config):
        assert small_align_config.used_levels == [3, 2, 1]

    @pytest.mark.parametrize("kwargs", [
        {"prob_floor": 0.6},
        {"prob_floor": 0.0},
        {"levels_used": 7},
        {"iters_per_level": 0},
        {"damping": -1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AlignmentConfig(**kwargs)


class TestSemanticResidual:
    def test_confident_prediction(self):
        assert semantic_residual(np.log(0.9)) == pytest.approx(0.4590, abs=1e-4)

    def test_floored(self):
        assert semantic_residual(np.log(1e-9)) == pytest.approx(5.2565, abs=1e-4)

    def test_certain(self):
        assert semantic_residual(0.0) == 0.0

    def test_vectorized(self):
        r = semantic_residual(np.log([0.9, 0.5]))
        np.testing.assert_allclose(r, np.sqrt(-2 * np.log([0.9, 0.5])))


class TestNormalEquations:
    def test_identity(self):
        x = solve_normal_equations(np.eye(6), np.arange(6.0), 0.0)
        np.testing.assert_allclose(x, np.arange(6.0))

    def test_singular_falls_back(self):
        x = solve_normal_equations(np.zeros((6, 6)), np.zeros(6), 0.0)
        np.testing.assert_allclose(x, 0.0)

    def test_non_finite(self):
        h = np.eye(6)
        h[0, 0] = np.nan
        with pytest.raises(SolverFailure):
            solve_normal_equations(h, np.ones(6), 1e-6)

    def test_conditioning(self):
        assert is_well_conditioned(np.eye(6), 1e-10)
        assert not is_well_conditioned(np.diag([1, 1, 1, 1, 1, 0.0]), 1e-10)
        assert not is_well_conditioned(np.zeros((6, 6)), 1e-10)


class TestProblem:
    def test_pyramid_level_mismatch(self, street_mesh, small_k, street_pose, small_align_config):
        view = render(street_mesh, small_k, street_pose)
        pyramid = label_frame_to_pyramid(view.labels, street_mesh.table, 3)
        with pytest.raises(DimensionError):
            AlignmentProblem.build(view, pyramid, small_k, small_align_config)

    def test_view_size_mismatch(self, street_mesh, small_k, street_pose, small_align_config):
        view = render(street_mesh, small_k, street_pose)
        pyramid = label_frame_to_pyramid(view.labels, street_mesh.table, 4)
        with pytest.raises(DimensionError):
            AlignmentProblem.build(view, pyramid, default_intrinsics(160, 128, 80.0), small_align_config)

    def test_levels_out_of_range(self, street_mesh, small_k, street_pose, small_align_config):
        view = render(street_mesh, small_k, street_pose)
        pyramid = label_frame_to_pyramid(view.labels, street_mesh.table, 4)
        with pytest.raises(ConfigError):
            AlignmentProblem.build(view, pyramid, small_k, small_align_config, levels=[4])

    def test_unused_levels_skipped(self, street_mesh, small_k, street_pose, small_align_config):
        problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose, Pose.identity())
        assert problem.levels[0] is None
        assert all(problem.levels[i] is not None for i in (1, 2, 3))
        assert problem.site_count(2) > problem.site_count(3) > 0
        assert problem.site_count(1) > 0

    def test_sites_separate_two_classes(self, street_mesh, small_k, street_pose, small_align_config):
        problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose, Pose.identity())
        for level in small_align_config.used_levels:
            lvl = problem.levels[level]
            sites = lvl.sites
            assert np.all(sites.classes[:, 0] != sites.classes[:, 1])
            assert np.all(np.isfinite(sites.depth)) and np.all(sites.depth > 0)
            assert np.all(sites.uv >= 0)
            assert np.all(sites.uv[:, 0] < lvl.logits.width - 1)
            assert np.all(sites.uv[:, 1] < lvl.logits.height - 1)
            np.testing.assert_allclose(sites.points, unproject_many(lvl.k, sites.uv, sites.depth))
            assert len(sites.rows()) == sites.row_count

    def test_full_resolution_sites_are_pair_midpoints(self, street_mesh, small_k, street_pose):
        config = AlignmentConfig(levels_total=4, levels_used=4)
        problem, _ = labeled_problem(street_mesh, small_k, config, street_pose, Pose.identity())
        uv = problem.levels[0].sites.uv
        assert len(uv) > 100
        np.testing.assert_array_equal(np.sort(uv % 1.0, axis=1), np.tile([0.0, 0.5], (len(uv), 1)))

    def test_residuals_at_rendered_pose(self, street_mesh, small_k, street_pose):
        config = AlignmentConfig(levels_total=4, levels_used=4)
        problem, _ = labeled_problem(street_mesh, small_k, config, street_pose, Pose.identity())
        res = evaluate_level(problem, 0, Pose.identity(), config)
        assert res.kept.all()
        # both classes of a site score the half-and-half logits of its two pixels
        hi, lo = np.log(0.9), np.log(0.1 / 7)
        mid = 0.5 * (hi + lo)
        p = np.exp(mid) / (2 * np.exp(mid) + 6 * np.exp(lo))
        np.testing.assert_allclose(res.r, np.sqrt(-2 * np.log(p)), rtol=1e-9)


class TestResidualRow:
    @pytest.fixture
    def smooth_problem(self, street_mesh, small_k, street_pose, small_align_config):
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(small_k.height, small_k.width, street_mesh.table.num_classes)) * 10.0
        logits = LogitsImage(gaussian_filter(raw, sigma=(3, 3, 0)))
        pyramid = build_pyramid(logits, small_align_config.levels_total)
        view = render(street_mesh, small_k, street_pose)
        return AlignmentProblem.build(view, pyramid, small_k, small_align_config)

    def test_jacobian_finite_differences(self, smooth_problem, small_align_config):
        level = 2
        rows = smooth_problem.levels[level].sites.rows()
        rel = exp_map([0.05, -0.02, 0.03, 0.002, -0.004, 0.003])
        h = 1e-7
        checked = 0
        for px in rows[::max(len(rows) // 40, 1)]:
            row = residual_row(smooth_problem, level, px, rel, small_align_config)
            if row is None:
                continue
            r, jac = row
            fd = np.zeros(6)
            ok = True
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                plus = residual_row(smooth_problem, level, px, exp_map(e) @ rel, small_align_config)
                minus = residual_row(smooth_problem, level, px, exp_map(-e) @ rel, small_align_config)
                if plus is None or minus is None:
                    ok = False
                    break
                fd[j] = (plus[0] - minus[0]) / (2 * h)
            if not ok:
                continue
            np.testing.assert_allclose(jac, fd, rtol=1e-3, atol=1e-4 * max(np.abs(fd).max(), 1.0))
            checked += 1
        assert checked >= 10

    def test_matches_batched_evaluation(self, smooth_problem, small_align_config):
        level = 3
        rel = exp_map([0.02, 0.0, 0.05, 0.0, 0.003, 0.0])
        res = evaluate_level(smooth_problem, level, rel, small_align_config)
        rows = smooth_problem.levels[level].sites.rows()
        assert res.used + res.dropped == len(rows)
        singles = [residual_row(smooth_problem, level, rows[i], rel, small_align_config)
                   for i in np.flatnonzero(res.kept)]
        np.testing.assert_allclose([r for r, _ in singles], res.r)
        np.testing.assert_allclose(np.array([j for _, j in singles]), res.jac)

    def test_out_of_bounds_is_dropped(self, smooth_problem, small_align_config):
        px = smooth_problem.levels[1].sites.rows()[0]
        assert residual_row(smooth_problem, 1, px, Pose.from_translation([500.0, 0, 0]), small_align_config) is None


class TestCostIdentity:
    def test_squared_residuals_sum_to_negative_log_likelihood(self, rng):
        logprob = np.log(rng.uniform(PROB_FLOOR, 1.0, size=10_000))
        r = semantic_residual(logprob)
        assert np.sum(r * r) == pytest.approx(np.sum(-2.0 * logprob), rel=1e-12, abs=1e-9)


class TestFixedPoint:
    @pytest.mark.parametrize("levels_used,level", [(4, 0), (3, 1)])
    def test_rendered_pose_is_stationary(self, street_mesh, small_k, street_pose, levels_used, level):
        config = AlignmentConfig(levels_total=4, levels_used=levels_used, iters_per_level=1)
        problem, _ = labeled_problem(street_mesh, small_k, config, street_pose, Pose.identity())
        report = gauss_newton_level(problem, level, Pose.identity(), config)
        assert report.used > 100
        assert report.steps[0] < 1e-6

    @pytest.mark.slow
    def test_urban_street_finest_level(self, urban_street):
        mesh, k, trajectory = urban_street
        gt = trajectory[50]
        config = replace(AlignmentConfig(), iters_per_level=1)
        problem, _ = labeled_problem(mesh, k, config, gt, Pose.identity())
        report = gauss_newton_level(problem, config.used_levels[-1], Pose.identity(), config)
        assert report.steps[0] < 1e-6


class TestAlignment:
    def test_empty_map_does_not_converge(self, small_k, street_pose, small_align_config, street_mesh):
        empty = SemanticMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), np.zeros(0, dtype=int))
        frame = render(street_mesh, small_k, street_pose).labels
        pyramid = label_frame_to_pyramid(frame, street_mesh.table, small_align_config.levels_total)
        problem = AlignmentProblem.build(render(empty, small_k, street_pose), pyramid, small_k, small_align_config)
        with pytest.raises(DegenerateLevel):
            gauss_newton_level(problem, 3, Pose.identity(), small_align_config)
        result = align_multiscale(problem, small_align_config)
        assert not result.converged
        np.testing.assert_array_equal(result.rel.matrix(), np.eye(4))
        assert all(r.error for r in result.reports)

    def test_straight_edge_is_not_converged(self, small_k, small_align_config):
        mesh = split_plane_mesh()
        problem, _ = labeled_problem(mesh, small_k, small_align_config, Pose.identity(),
                                     Pose.from_translation([0.1, 0.0, 0.0]))
        result = align_multiscale(problem, small_align_config)
        assert not result.converged
        assert np.all(np.isfinite(result.rel.matrix()))

    def test_stays_at_ground_truth(self, street_mesh, small_k, street_pose, small_align_config):
        problem, render_pose = labeled_problem(
            street_mesh, small_k, small_align_config, street_pose, Pose.identity())
        result = align_multiscale(problem, small_align_config)
        assert result.converged
        err = pose_error(street_pose, frame_pose_of(render_pose, result.rel))
        assert err.trans < 1e-4
        assert err.rot_deg < 1e-3

    def test_deterministic(self, street_mesh, small_k, street_pose, small_align_config):
        offset = random_pose_offset(0.1, 1.0, np.random.default_rng(8))
        problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose, offset)
        a = align_multiscale(problem, small_align_config)
        b = align_multiscale(problem, small_align_config)
        np.testing.assert_array_equal(a.rel.matrix(), b.rel.matrix())

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_recovers_perturbation(self, street_mesh, small_k, street_pose, small_align_config, seed):
        offset = random_pose_offset(0.15, 1.5, np.random.default_rng(seed))
        problem, render_pose = labeled_problem(street_mesh, small_k, small_align_config, street_pose, offset)
        finest = small_align_config.used_levels[-1]
        initial_cost = evaluate_level(problem, finest, Pose.identity(), small_align_config).cost

        result = align_multiscale(problem, small_align_config)
        assert result.converged
        assert result.level_costs[finest] < initial_cost
        err = pose_error(street_pose, frame_pose_of(render_pose, result.rel))
        assert err.trans < 1e-3
        assert err.rot_deg < 0.01

    @pytest.mark.slow
    def test_costs_decrease_within_levels(self, street_mesh, small_k, street_pose, small_align_config):
        runs = monotone = 0
        for seed in range(30):
            offset = random_pose_offset(0.1, 1.0, np.random.default_rng(100 + seed))
            problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose, offset)
            for report in align_multiscale(problem, small_align_config).reports:
                if len(report.costs) < 2:
                    continue
                runs += 1
                c = np.array(report.costs)
                monotone += bool(np.all(c[1:] <= c[:-1] + 1e-9 * np.maximum(c[:-1], 1.0)))
        assert runs >= 60
        assert monotone >= 0.95 * runs

    @pytest.mark.slow
    def test_equivariant_under_map_transform(self, street_mesh, small_k, street_pose, small_align_config):
        offset = random_pose_offset(0.1, 1.0, np.random.default_rng(21))
        transform = Pose(Rotation.from_euler("zyx", [35.0, 2.0, -1.5], degrees=True).as_matrix(), [12.0, -7.0, 0.4])
        moved = street_mesh.transformed(transform)

        problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose, offset)
        moved_problem, _ = labeled_problem(moved, small_k, small_align_config, compose(transform, street_pose), offset)
        a = align_multiscale(problem, small_align_config)
        b = align_multiscale(moved_problem, small_align_config)
        np.testing.assert_allclose(b.rel.matrix(), a.rel.matrix(), atol=1e-6)

    def test_reports_cover_used_levels(self, street_mesh, small_k, street_pose, small_align_config):
        problem, _ = labeled_problem(street_mesh, small_k, small_align_config, street_pose,
                                     Pose.from_translation([0.05, 0.0, 0.0]))
        result = align_multiscale(problem, small_align_config)
        assert [r.level for r in result.reports] == [3, 2, 1]
        assert set(result.level_costs) == {3, 2, 1}
        for level in (3, 2, 1):
            assert result.residuals_used[level] > 0
            total = result.residuals_used[level] + result.residuals_dropped[level]
            assert total == problem.levels[level].sites.row_count


@pytest.mark.slow
class TestUrbanStreet:
    """640x480 urban street, default alignment settings"""

    def test_recovers_half_meter_five_degree_offsets(self, urban_street):
        mesh, k, trajectory = urban_street
        config = AlignmentConfig()
        gt = trajectory[50]
        pyramid = label_frame_to_pyramid(render(mesh, k, gt).labels, mesh.table, config.levels_total)

        recovered = 0
        for seed in range(100):
            render_pose = compose(gt, random_pose_offset(0.5, 5.0, np.random.default_rng(seed)))
            problem = AlignmentProblem.build(render(mesh, k, render_pose), pyramid, k, config)
            result = align_multiscale(problem, config)
            err = pose_error(gt, frame_pose_of(render_pose, result.rel))
            recovered += err.trans < 0.02 and err.rot_deg < 0.1
        assert recovered >= 98
