import json

import numpy as np
import pytest

from qlabc.errors import MonotonicityWarning, OutOfDomain, OutsideImage, SchemaMismatch
from qlabc.models.base import SimulatorSpec, UniformBoxPrior
from qlabc.numerics import RandomStream, richardson_jacobian
from qlabc.surrogate import (
    PilotDesign,
    check_image_coverage,
    default_points_per_dim,
    fit_surrogate,
    load_pilot_csv,
    load_surrogate,
    run_pilot,
    save_pilot_csv,
    save_surrogate,
    surrogate_to_dict,
)


class SyntheticModel:
    """Deterministic or noisy synthetic map for surrogate tests."""

    name = "synthetic"

    def __init__(self, fn, box, noise=0.0):
        box = np.asarray(box, dtype=np.float64)
        p = box.shape[0]
        self.fn = fn
        self.noise = noise
        self.spec = SimulatorSpec(self.name, p, p, box, 1, "uniform")
        self.prior = UniformBoxPrior(box)

    def simulate(self, theta, rng):
        value = np.asarray(self.fn(np.asarray(theta)), dtype=np.float64)
        if self.noise:
            value = value + self.noise * rng.standard_normal(value.size)
        return value, None


def linear_model_1d():
    return SyntheticModel(lambda t: np.array([2.0 * t[0] + 1.0]), [[-1.0, 1.0]])


def identity_model_2d():
    return SyntheticModel(lambda t: t.copy(), [[-1.0, 1.0], [-1.0, 1.0]])


class TestPilotDesign:
    def test_regular_grid_1d(self):
        design = PilotDesign(np.array([[0.0, 1.0]]), 10)
        # five-point pattern scaled up: endpoints included, equal spacing
        axis = design.axes()[0]
        assert axis[0] == 0.0 and axis[-1] == 1.0
        assert np.allclose(np.diff(axis), axis[1] - axis[0])
        small = np.linspace(0, 1, 5)
        assert np.allclose(small, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_lattice_2d_row_major(self):
        design = PilotDesign(np.array([[0.0, 1.0], [0.0, 2.0]]), 10)
        lattice = design.lattice()
        assert lattice.shape == (100, 2)
        # last coordinate varies fastest
        assert np.allclose(lattice[0], [0.0, 0.0])
        assert lattice[1][0] == 0.0 and lattice[1][1] > 0.0
        assert np.allclose(lattice[-1], [1.0, 2.0])

    def test_minimum_points(self):
        with pytest.raises(ValueError):
            PilotDesign(np.array([[0.0, 1.0]]), 9)

    def test_defaults(self):
        assert default_points_per_dim(1) == 1000
        assert default_points_per_dim(2) == 30
        assert default_points_per_dim(3) == 30
        assert default_points_per_dim(4) == 10


class TestRunPilot:
    def test_reproducible(self):
        model = SyntheticModel(lambda t: t.copy(), [[-1, 1], [-1, 1]], noise=0.3)
        design = PilotDesign(model.spec.param_box, 12)
        a = run_pilot(design, model, 5)
        b = run_pilot(design, model, 5)
        assert np.array_equal(a.stats, b.stats)
        c = run_pilot(design, model, 6)
        assert not np.array_equal(a.stats, c.stats)

    def test_gamma_paper_lattice_size(self, gamma_pilot):
        assert gamma_pilot.thetas.shape == (10**4, 2)

    def test_box_outside_model_rejected(self):
        model = linear_model_1d()
        with pytest.raises(ValueError):
            run_pilot(PilotDesign(np.array([[-2.0, 1.0]]), 10), model, 0)

    def test_error_carries_pilot_point(self):
        def boom(t):
            raise RuntimeError("simulator exploded")

        model = SyntheticModel(boom, [[0.0, 1.0]])
        with pytest.raises(RuntimeError, match="pilot node 0"):
            run_pilot(PilotDesign(model.spec.param_box, 10), model, 0)

    def test_pilot_csv_round_trip(self, tmp_path):
        model = SyntheticModel(lambda t: t.copy(), [[-1, 1]], noise=0.1)
        design = PilotDesign(model.spec.param_box, 15)
        data = run_pilot(design, model, 3)
        path = tmp_path / "pilot.csv"
        save_pilot_csv(data, path)
        again = load_pilot_csv(path, design, 3, model.name)
        assert np.array_equal(data.thetas, again.thetas)
        assert np.array_equal(data.stats, again.stats)

    def test_pilot_csv_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaMismatch):
            load_pilot_csv(path, PilotDesign(np.array([[0.0, 1.0]]), 10))


class TestFitSurrogateScalar:
    def test_noiseless_linear(self):
        model = linear_model_1d()
        data = run_pilot(PilotDesign(model.spec.param_box, 50), model, 0)
        sm = fit_surrogate(data, "smooth")
        grid = np.linspace(-1, 1, 101)
        values = np.array([sm.forward(np.array([t]))[0] for t in grid])
        assert np.abs(values - (2 * grid + 1)).max() < 1e-4
        assert abs(sm.jacobian_matrix(np.array([0.3]))[0, 0] - 2.0) < 1e-4
        assert sm.variance_at(np.array([0.0]))[0, 0] < 1e-10

    def test_jacobian_logdet_linear(self):
        model = linear_model_1d()
        sm = fit_surrogate(run_pilot(PilotDesign(model.spec.param_box, 50), model, 0), "constant")
        assert abs(sm.jacobian_logdet(np.array([0.1])) - np.log(2.0)) < 1e-3

    def test_monotonicity_warning_on_parabola(self):
        model = SyntheticModel(lambda t: np.array([(t[0] - 1.0) ** 2]), [[0.0, 2.0]], noise=0.01)
        data = run_pilot(PilotDesign(model.spec.param_box, 200), model, 1)
        with pytest.warns(MonotonicityWarning):
            sm = fit_surrogate(data, "smooth")
        assert sm.fit_report["monotone"] is False
        lo, hi = sm.fit_report["flat_region"]
        assert lo < 1.0 < hi or abs(lo - 1.0) < 0.3 or abs(hi - 1.0) < 0.3

    def test_coalescent_flat_region_low_rates(self, coalescent_surrogate):
        # near-zero derivative for log-rates far below the detectable range
        ld_low = coalescent_surrogate.jacobian_logdet(np.array([-5.5]))
        ld_mid = coalescent_surrogate.jacobian_logdet(np.array([1.0]))
        assert ld_low < -3.0
        assert ld_low < ld_mid - 3.0

    def test_out_of_domain(self, coalescent_surrogate):
        with pytest.raises(OutOfDomain):
            coalescent_surrogate.forward(np.array([9.0]))
        with pytest.raises(OutOfDomain):
            coalescent_surrogate.variance_at(np.array([-7.0]))
        with pytest.raises(OutOfDomain):
            coalescent_surrogate.jacobian_logdet(np.array([3.5]))


class TestInverse:
    def test_linear_inverse(self):
        model = linear_model_1d()
        sm = fit_surrogate(run_pilot(PilotDesign(model.spec.param_box, 50), model, 0), "constant")
        inv = sm.inverse(np.array([2.0]))
        assert abs(inv[0] - 0.5) < 1e-4

    def test_round_trip_at_lattice_points(self, gamma_surrogate):
        lattice = gamma_surrogate.lattice
        rng = np.random.default_rng(0)
        for idx in rng.choice(lattice.shape[0], 20, replace=False):
            target = gamma_surrogate.forward_table[idx]
            inv = gamma_surrogate.inverse(target)
            assert np.abs(gamma_surrogate.forward(inv) - target).max() < 1e-6

    def test_forward_inverse_round_trip_interior(self, coalescent_surrogate):
        sm = coalescent_surrogate
        lo = sm.forward_table[:, 0].min()
        hi = sm.forward_table[:, 0].max()
        for s in np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 25):
            theta = sm.inverse(np.array([s]))
            assert abs(sm.forward(theta)[0] - s) < 1e-6

    def test_outside_image(self, coalescent_surrogate):
        with pytest.raises(OutsideImage):
            coalescent_surrogate.inverse(np.array([50.0]))

    def test_order_preserving_for_monotone(self, coalescent_surrogate):
        sm = coalescent_surrogate
        lo = sm.forward_table[:, 0].min()
        hi = sm.forward_table[:, 0].max()
        targets = np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), 15)
        inverses = np.array([sm.inverse(np.array([s]))[0] for s in targets])
        assert (np.diff(inverses) > 0).all()

    def test_hint_used(self, gamma_surrogate):
        target = gamma_surrogate.forward(np.array([0.5, -0.5]))
        inv = gamma_surrogate.inverse(target, hint=np.array([0.4, -0.4]))
        assert np.abs(gamma_surrogate.forward(inv) - target).max() < 1e-6


class TestMultivariate:
    def test_identity_map_logdet_zero(self):
        model = identity_model_2d()
        data = run_pilot(PilotDesign(model.spec.param_box, 15), model, 0)
        sm = fit_surrogate(data, "constant")
        assert abs(sm.jacobian_logdet(np.array([0.2, -0.3]))) < 1e-2

    def test_constant_variance_matches_noise(self):
        noise = 0.05
        model = SyntheticModel(lambda t: t.copy(), [[-1, 1], [-1, 1]], noise=noise)
        data = run_pilot(PilotDesign(model.spec.param_box, 40), model, 2)
        sm = fit_surrogate(data, "constant")
        sigma = sm.variance_at(np.array([0.0, 0.0]))
        assert np.abs(np.diag(sigma) - noise**2).max() < 0.3 * noise**2
        assert abs(sigma[0, 1]) < noise**2

    def test_smooth_variance_diagonal_positive(self, gamma_surrogate):
        rng = np.random.default_rng(1)
        for _ in range(25):
            theta = rng.uniform(-2, 2, 2)
            sigma = gamma_surrogate.variance_at(theta)
            assert sigma[0, 1] == 0.0 and sigma[1, 0] == 0.0
            assert (np.diag(sigma) > 0).all()

    def test_interpolated_jacobian_matches_direct_richardson(self, gamma_surrogate):
        sm = gamma_surrogate
        rng = np.random.default_rng(2)
        for _ in range(50):
            theta = rng.uniform(-1.8, 1.8, 2)
            J_direct = richardson_jacobian(sm._forward_clipped, theta)
            ld_direct = np.log(abs(np.linalg.det(J_direct)))
            ld_interp = sm.jacobian_logdet(theta)
            assert abs(ld_interp - ld_direct) < 1e-2 * max(1.0, abs(ld_direct))

    def test_gamma_surfaces_near_linear(self, gamma_surrogate):
        # fitted response curvature is small relative to slope
        for surf in gamma_surrogate.forward_surfaces:
            for comp in surf.components:
                grid = np.linspace(-1.9, 1.9, 200)
                vals = comp.value(grid)
                slope = (vals[-1] - vals[0]) / (grid[-1] - grid[0])
                line = vals[0] + slope * (grid - grid[0])
                if abs(slope) > 0.05:  # only informative components
                    assert np.abs(vals - line).max() < 0.25 * abs(slope) * (grid[-1] - grid[0])

    def test_gk_log_variance_not_constant(self):
        from qlabc.models import get_model

        model = get_model("gk", sample_size=200)
        data = run_pilot(PilotDesign(model.spec.param_box, 10), model, 3)
        sm = fit_surrogate(data, "smooth")
        rng = np.random.default_rng(4)
        box = model.spec.param_box
        pts = box[:, 0] + rng.random((200, 4)) * (box[:, 1] - box[:, 0])
        for j in range(4):
            log_var = np.log([sm.variance_at(t)[j, j] for t in pts])
            if log_var.max() - log_var.min() > 1.0:
                return
        raise AssertionError("all fitted log-variance surfaces look constant")


class TestSerialization:
    def test_bit_exact_round_trip(self, gamma_surrogate, tmp_path):
        path = tmp_path / "surrogate.json"
        save_surrogate(gamma_surrogate, path)
        again = load_surrogate(path)
        rng = np.random.default_rng(5)
        for _ in range(100):
            theta = rng.uniform(-2, 2, 2)
            a = gamma_surrogate.forward(theta)
            b = again.forward(theta)
            assert np.array_equal(a, b)
            assert gamma_surrogate.jacobian_logdet(theta) == again.jacobian_logdet(theta)
            assert np.array_equal(gamma_surrogate.variance_at(theta), again.variance_at(theta))

    def test_scalar_round_trip(self, coalescent_surrogate_constant, tmp_path):
        path = tmp_path / "surrogate.json"
        save_surrogate(coalescent_surrogate_constant, path)
        again = load_surrogate(path)
        grid = np.linspace(-5.9, 2.9, 100)
        a = np.array([coalescent_surrogate_constant.forward(np.array([t]))[0] for t in grid])
        b = np.array([again.forward(np.array([t]))[0] for t in grid])
        assert np.array_equal(a, b)

    def test_corrupted_header(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json at all")
        with pytest.raises(SchemaMismatch, match="corrupted"):
            load_surrogate(path)
        path.write_text(json.dumps({"something": 1}))
        with pytest.raises(SchemaMismatch, match="format"):
            load_surrogate(path)

    def test_version_mismatch_reports_both(self, gamma_surrogate, tmp_path):
        payload = surrogate_to_dict(gamma_surrogate)
        payload["schema_version"] = 99
        path = tmp_path / "v99.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaMismatch, match="99"):
            load_surrogate(path)
        with pytest.raises(SchemaMismatch, match="1"):
            load_surrogate(path)


class TestImageCoverage:
    def test_covered(self, coalescent_surrogate):
        assert check_image_coverage(coalescent_surrogate, np.array([2.0])) is True

    def test_not_covered_warns(self, coalescent_surrogate):
        from qlabc.errors import CoverageWarning

        with pytest.warns(CoverageWarning):
            assert check_image_coverage(coalescent_surrogate, np.array([25.0])) is False
