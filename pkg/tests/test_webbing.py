import math

import numpy as np
import pytest

from lagweb.bvpsolve import solve_bvp_maslov0
from lagweb.errors import DegenerateMetric, OriginNode, SignError
from lagweb.geoflow import GeodesicSpec, geodesic_ivp, thin_trajectory
from lagweb.laggrass import FlatCalabiYau, make_frame
from lagweb.numkernel import IntegratorConfig
from lagweb.webbing import (
    CylinderMesh,
    boundary_containment,
    cylinder_mesh,
    euler_transversality,
    harmonic_residual,
    level_set_chart,
    read_mesh_csv,
    relflux,
    sphere_grid,
    verify_slag,
    webbing_family,
    write_mesh_csv,
)


def diag_frame(*angles):
    n = len(angles)
    return make_frame(FlatCalabiYau(n), np.diag(np.exp(1j * np.array(angles))))


@pytest.fixture(scope="module")
def solved():
    l0 = make_frame(FlatCalabiYau(2), np.eye(2))
    l1 = diag_frame(math.pi / 6, math.pi / 4)
    sol = solve_bvp_maslov0(l0, l1, 1e-10, IntegratorConfig(2000))
    return l0, l1, sol


@pytest.fixture(scope="module")
def symmetric_traj():
    l0 = make_frame(FlatCalabiYau(2), np.eye(2))
    spec = GeodesicSpec.from_frame(l0, [-0.3, -0.3])
    return geodesic_ivp(spec, IntegratorConfig(2000))


class TestLevelSetChart:
    def test_round_circle(self):
        chart = level_set_chart([-1.0, -1.0], -1.0)
        np.testing.assert_array_equal(chart.semi_axes, [1.0, 1.0])

    def test_anisotropic(self):
        chart = level_set_chart([-1.0, -4.0], -1.0)
        np.testing.assert_allclose(chart.semi_axes, [1.0, 0.5])

    def test_level_scaling(self):
        a = [-1.0, -1.0]
        np.testing.assert_array_equal(
            level_set_chart(a, -4.0).semi_axes, 2.0 * level_set_chart(a, -1.0).semi_axes
        )

    def test_sign_errors(self):
        with pytest.raises(SignError):
            level_set_chart([-1.0, 0.5], -1.0)
        with pytest.raises(SignError):
            level_set_chart([-1.0, -1.0], 1.0)


class TestSphereGrid:
    def test_n1_rejected(self):
        with pytest.raises(ValueError):
            sphere_grid(1)

    @pytest.mark.parametrize("n,res", [(2, 32), (3, 16), (4, 256), (5, 128)])
    def test_units_and_tangents(self, n, res):
        grid = sphere_grid(n, res)
        np.testing.assert_allclose(np.linalg.norm(grid.points, axis=1), 1.0, atol=1e-12)
        # tangent directions: unit, orthogonal to the point and to each other
        dots = np.einsum("pmi,pi->pm", grid.tangents, grid.points)
        assert np.max(np.abs(dots)) < 1e-12
        gram = np.einsum("pmi,pki->pmk", grid.tangents, grid.tangents)
        eye = np.broadcast_to(np.eye(n - 1), gram.shape)
        assert np.max(np.abs(gram - eye)) < 1e-12


class TestCylinderMesh:
    def test_symmetric_slices_are_round(self, symmetric_traj):
        mesh = cylinder_mesh(symmetric_traj, -1.0, 64)
        radii = np.linalg.norm(mesh.points, axis=2)
        expected = np.sqrt(symmetric_traj.g[:, 0] / 0.3)
        assert np.max(np.abs(radii - expected[:, np.newaxis])) < 1e-8

    def test_boundary_slices_in_planes(self, solved):
        l0, l1, sol = solved
        mesh = cylinder_mesh(sol.trajectory, -1.0, 64)
        assert mesh.boundary_defect < 1e-8
        assert boundary_containment(mesh, l0, 0) < 1e-8
        assert boundary_containment(mesh, l1, 1) < 1e-8

    def test_dimension_guard(self):
        l0 = make_frame(FlatCalabiYau(1), np.eye(1))
        traj = geodesic_ivp(GeodesicSpec.from_frame(l0, [-0.3]), IntegratorConfig(50))
        with pytest.raises(ValueError):
            cylinder_mesh(traj, -1.0)

    def test_base_slice_tangents_pair_to_zero_with_base_plane(self, solved):
        # tangents of the t = 0 slice lie inside the base plane, which is
        # Lagrangian, so they pair to zero with any basis of it
        l0, _, sol = solved
        mesh = cylinder_mesh(sol.trajectory, -1.0, 32)
        pair = np.einsum("pki,ij->pkj", mesh.sphere_tangents[0].conj(), l0.columns).imag
        assert np.max(np.abs(pair)) < 1e-8


class TestVerifySlag:
    def test_solved_mesh_calibration(self, solved):
        _, _, sol = solved
        report = verify_slag(cylinder_mesh(sol.trajectory, -1.0, 128))
        assert report.max_omega < 1e-8
        assert report.max_re_omega < 1e-7
        assert report.min_im_omega > 0.0

    def test_offset_trajectory_stays_pointwise_calibrated(self, solved):
        # shifting theta moves the phase in the rotation factor and in the
        # time-tangent bracket together, so the frame determinant stays
        # proportional to i / cos(phase): the calibration residual cannot see
        # state-consistent corruptions (their boundary planes move instead)
        _, _, sol = solved
        traj = sol.trajectory
        crooked = type(traj)(spec=traj.spec, times=traj.times, g=traj.g,
                             theta=traj.theta + 0.01)
        mesh = cylinder_mesh(crooked, -1.0, 64)
        assert verify_slag(mesh).max_re_omega < 1e-10
        assert boundary_containment(mesh, solved[1], 1) > 1e-3

    def test_tampered_tangents_detected(self, solved):
        # rotating the time tangents against the points breaks the pointwise
        # identity and the calibration residual sees it at first order
        _, _, sol = solved
        mesh = cylinder_mesh(sol.trajectory, -1.0, 64)
        tampered = CylinderMesh(
            trajectory=mesh.trajectory, chart=mesh.chart, sphere=mesh.sphere,
            points=mesh.points, sphere_tangents=mesh.sphere_tangents,
            time_tangents=mesh.time_tangents * np.exp(0.01j),
            boundary_defect=mesh.boundary_defect,
        )
        assert verify_slag(tampered).max_re_omega > 1e-3

    def test_symmetric_mesh_calibration(self, symmetric_traj):
        report = verify_slag(cylinder_mesh(symmetric_traj, -1.0, 64))
        assert report.max_omega < 1e-8
        assert report.max_re_omega < 1e-7
        assert report.min_im_omega > 0.0


class TestEulerTransversality:
    def test_solved_mesh_is_transverse(self, solved):
        _, _, sol = solved
        assert euler_transversality(cylinder_mesh(sol.trajectory, -1.0, 64)) > 0.01

    def test_radial_cone_control(self, symmetric_traj):
        mesh = cylinder_mesh(symmetric_traj, -1.0, 32)
        mid = mesh.points.shape[0] // 2
        tau = np.linspace(0.5, 1.5, 41)
        cone_points = tau[:, None, None] * mesh.points[mid][None, :, :]
        cone_sphere = tau[:, None, None, None] * mesh.sphere_tangents[mid][None, :, :, :]
        cone_time = np.broadcast_to(mesh.points[mid][None, :, :], cone_points.shape).copy()
        cone = CylinderMesh(trajectory=mesh.trajectory, chart=mesh.chart,
                            sphere=mesh.sphere, points=cone_points,
                            sphere_tangents=cone_sphere, time_tangents=cone_time,
                            boundary_defect=0.0)
        assert euler_transversality(cone) < 1e-8

    def test_scale_invariance(self, symmetric_traj):
        fam = webbing_family(symmetric_traj, [-1.0, -4.0], 32)
        angles = [euler_transversality(m) for m in fam]
        assert abs(angles[0] - angles[1]) < 1e-10

    def test_origin_node_rejected(self, symmetric_traj):
        mesh = cylinder_mesh(symmetric_traj, -1.0, 16)
        points = mesh.points.copy()
        points[3, 5] = 0.0
        broken = CylinderMesh(trajectory=mesh.trajectory, chart=mesh.chart,
                              sphere=mesh.sphere, points=points,
                              sphere_tangents=mesh.sphere_tangents,
                              time_tangents=mesh.time_tangents,
                              boundary_defect=mesh.boundary_defect)
        with pytest.raises(OriginNode):
            euler_transversality(broken)


class TestWebbingFamily:
    def test_homogeneity(self, solved):
        _, _, sol = solved
        fam = webbing_family(sol.trajectory, [-1.0, -4.0], 32)
        # outermost (c = -4) equals twice the c = -1 mesh, node for node
        assert np.max(np.abs(fam[0].points - 2.0 * fam[1].points)) < 1e-10

    def test_linear_shrinkage(self, solved):
        _, _, sol = solved
        scales = np.array([1.0, 0.5, 0.25])
        fam = webbing_family(sol.trajectory, -(scales**2), 32)
        sups = np.array([np.abs(m.points).max() for m in fam])
        np.testing.assert_allclose(sups / sups[0], scales, atol=1e-12)

    def test_family_members_stay_calibrated(self, solved):
        _, _, sol = solved
        fam = webbing_family(sol.trajectory, [-1.0, -0.25], 48)
        reports = [verify_slag(m) for m in fam]
        for r in reports:
            assert r.max_omega < 1e-8
            assert r.max_re_omega < 1e-7
            assert r.min_im_omega > 0.0


class TestRelflux:
    def test_unit_interval_value(self, solved):
        _, _, sol = solved
        report = relflux(sol.trajectory, -2.0, -1.0)
        assert abs(report.relflux - 1.0) < 1e-4
        assert np.all(report.spreads < 1e-5)

    def test_empty_interval(self, solved):
        _, _, sol = solved
        assert relflux(sol.trajectory, -1.5, -1.5).relflux == 0.0

    def test_additivity(self, solved):
        _, _, sol = solved
        a = relflux(sol.trajectory, -2.0, -1.5).relflux
        b = relflux(sol.trajectory, -1.5, -1.0).relflux
        c = relflux(sol.trajectory, -2.0, -1.0).relflux
        assert abs(a + b - c) < 2e-4

    def test_symmetric_case(self, symmetric_traj):
        report = relflux(symmetric_traj, -1.25, -0.75, level_count=5)
        assert abs(report.relflux - 0.5) < 1e-4

    def test_boundary_values_are_minus_one(self, solved):
        # the deformation field is Phi / (2c) by degree-2 homogeneity, so the
        # pairing with the time tangent is exactly -1 at every level
        _, _, sol = solved
        report = relflux(sol.trajectory, -3.0, -0.5, level_count=7)
        np.testing.assert_allclose(report.boundary_values, -1.0, atol=1e-7)


class TestHarmonicResidual:
    @staticmethod
    def grid_mesh(spec, m):
        traj = geodesic_ivp(spec, IntegratorConfig(m))
        return cylinder_mesh(traj, -1.0, m)

    def test_symmetric_residual_tiny_and_decaying(self, symmetric_traj):
        spec = symmetric_traj.spec
        r64 = harmonic_residual(self.grid_mesh(spec, 64))
        r128 = harmonic_residual(self.grid_mesh(spec, 128))
        assert r64 < 1e-3
        assert r128 < r64

    def test_stencil_is_exact_on_exact_samples(self, solved):
        # the time coordinate's flux fields are constant on level cylinders
        # (F == 0 from the level-set relation, E/W == const), so the discrete
        # operator is exact and the residual is pure flow-sampling error;
        # near-exact samples push it to roundoff
        _, _, sol = solved
        spec = sol.trajectory.spec
        from lagweb.geoflow import geodesic_ivp as ivp, thin_trajectory as thin

        traj = thin(ivp(spec, IntegratorConfig(64 * 64)), 64)
        assert harmonic_residual(cylinder_mesh(traj, -1.0, 64)) < 1e-12

    def test_generic_residual_decays(self, solved):
        # with matching step counts the sampling error dominates and decays
        # at the integrator's fourth order
        _, _, sol = solved
        spec = sol.trajectory.spec
        r64 = harmonic_residual(self.grid_mesh(spec, 64))
        r128 = harmonic_residual(self.grid_mesh(spec, 128))
        assert r64 < 1e-6
        assert 10.0 < r64 / r128 < 24.0

    def test_quadratic_time_control(self, solved):
        _, _, sol = solved
        spec = sol.trajectory.spec
        for m in (64, 128):
            mesh = self.grid_mesh(spec, m)
            times = mesh.trajectory.times
            u = np.broadcast_to((times**2)[:, np.newaxis], mesh.points.shape[:2])
            assert harmonic_residual(mesh, u) > 0.1

    def test_degenerate_metric_rejected(self, symmetric_traj):
        mesh = cylinder_mesh(symmetric_traj, -1.0, 16)
        broken = CylinderMesh(trajectory=mesh.trajectory, chart=mesh.chart,
                              sphere=mesh.sphere, points=mesh.points,
                              sphere_tangents=mesh.sphere_tangents,
                              time_tangents=np.zeros_like(mesh.time_tangents),
                              boundary_defect=mesh.boundary_defect)
        with pytest.raises(DegenerateMetric):
            harmonic_residual(broken)


class TestMeshCsv:
    def test_round_trip(self, solved, tmp_path):
        _, _, sol = solved
        mesh = cylinder_mesh(thin_trajectory(sol.trajectory, 100), -1.0, 16)
        path = tmp_path / "mesh.csv"
        write_mesh_csv(mesh, path)
        params, times, points = read_mesh_csv(path)
        np.testing.assert_array_equal(params, mesh.sphere.params)
        np.testing.assert_array_equal(times, mesh.trajectory.times)
        np.testing.assert_array_equal(points, mesh.points)
