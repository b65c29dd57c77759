"""
Flowfield tests.

Proves:
    Group 1 - the wake generator is deterministic, freestream at M = 0, mirror
              symmetric in α and monotone in M
    Group 2 - the field file format round-trips and rejects malformed files with
              the offending cell or line
    Group 3 - sampling is bilinear inside the box and freestream outside it
"""
import numpy as np
import pytest

from thzlink.exceptions import DomainError, FieldValidationError
from thzlink.schemas.field import FieldGrid, FlightCondition, GridSpec, WakeModelParams
from thzlink.services.flowfield_service import FlowfieldService

QUIET = WakeModelParams(noise_amplitude=0.0)


def make_field(x1_axis, x2_axis, temperature) -> FieldGrid:
    shape = (len(x1_axis), len(x2_axis))
    return FieldGrid(
        x1_axis=np.asarray(x1_axis, dtype=float),
        x2_axis=np.asarray(x2_axis, dtype=float),
        temperature=np.asarray(temperature, dtype=float),
        pressure=np.full(shape, 9.0e4),
        energy=np.full(shape, 0.5),
        dissipation=np.full(shape, 10.0),
        condition=FlightCondition(mach=0.5, attack_deg=0.0),
    )


FIXTURE = """# axis x1: -1 0 1
# axis x2: 0 2 4
# condition M=0.5, alpha_deg=-10
# units SI
0 0 280 90000 0.1 10
0 1 281 90010 0.2 11
0 2 282 90020 0.3 12
1 0 283 90030 0.4 13
1 1 284 90040 0.5 14
1 2 285 90050 0.6 15
2 0 286 90060 0.7 16
2 1 287 90070 0.8 17
2 2 288 90080 0.9 18
"""


# Group 1


def test_zero_mach_is_pure_freestream(coarse_grid):
    params = WakeModelParams()
    field = FlowfieldService.generate_wake_field(0.0, 10.0, coarse_grid, params, seed=3)
    assert np.all(field.temperature == params.t_inf)
    assert np.all(field.pressure == params.p_inf)
    assert np.all(field.energy == field.energy_floor)
    assert np.all(field.dissipation == params.w_inf)


def test_generator_is_deterministic(coarse_grid):
    first = FlowfieldService.generate_wake_field(0.7, -10.0, coarse_grid, seed=11)
    second = FlowfieldService.generate_wake_field(0.7, -10.0, coarse_grid, seed=11)
    other = FlowfieldService.generate_wake_field(0.7, -10.0, coarse_grid, seed=12)
    for name in ("temperature", "pressure", "energy", "dissipation"):
        assert np.array_equal(getattr(first, name), getattr(second, name))
    assert not np.array_equal(first.energy, other.energy)


def test_generated_field_satisfies_invariants(coarse_grid):
    field = FlowfieldService.generate_wake_field(0.7, 10.0, coarse_grid, seed=0)
    assert np.all(field.temperature > 0) and np.all(field.pressure > 0)
    assert np.all(field.energy >= 0) and np.all(field.dissipation > 0)
    assert field.condition == FlightCondition(mach=0.7, attack_deg=10.0)


def test_temperature_mirrors_about_centerline():
    x1 = np.linspace(-90.0, 30.0, 25)
    offsets = np.linspace(-12.0, 12.0, 9)
    X1, D = np.meshgrid(x1, offsets, indexing="ij")
    up = FlowfieldService.wake_centerline(X1, 10.0, QUIET) + D
    down = FlowfieldService.wake_centerline(X1, -10.0, QUIET) - D
    t_plus = FlowfieldService.analytic_fields(X1, up, 0.7, 10.0, QUIET)[0]
    t_minus = FlowfieldService.analytic_fields(X1, down, 0.7, -10.0, QUIET)[0]
    assert np.max(np.abs(t_plus - t_minus)) <= 1e-10


def test_centerline_deflects_with_attack_angle():
    heights = FlowfieldService.wake_centerline([-50.0, 0.0, 20.0], 10.0, QUIET)
    assert heights[0] == pytest.approx(QUIET.tail_height - 0.01 * 10.0 * 50.0)
    assert heights[1] == heights[2] == QUIET.tail_height


def test_max_energy_grows_with_mach(coarse_grid):
    peaks = [
        FlowfieldService.generate_wake_field(m, 5.0, coarse_grid, seed=2).energy.max() for m in (0.3, 0.5, 0.7, 0.9)
    ]
    assert all(b >= a for a, b in zip(peaks, peaks[1:]))


def test_attack_angle_increases_heterogeneity(coarse_grid):
    level = FlowfieldService.generate_wake_field(0.7, 0.0, coarse_grid, seed=4)
    steep = FlowfieldService.generate_wake_field(0.7, 10.0, coarse_grid, seed=4)
    assert np.std(steep.temperature) > np.std(level.temperature)


def test_far_from_plume_is_freestream(coarse_grid):
    field = FlowfieldService.generate_wake_field(0.7, -10.0, coarse_grid, seed=1)
    params = WakeModelParams()
    X1, X2 = np.meshgrid(field.x1_axis, field.x2_axis, indexing="ij")
    downstream = np.maximum(-X1, 0.0)
    width = params.wake_width + (params.wake_growth + params.wake_attack_growth * 10.0) * downstream
    far = np.abs(X2 - FlowfieldService.wake_centerline(X1, -10.0, params)) > 5.0 * width
    assert np.any(far)
    assert np.max(np.abs(field.temperature[far] - params.t_inf) / params.t_inf) <= 1e-3


def test_degenerate_grid_and_negative_mach_are_rejected():
    with pytest.raises(DomainError):
        FlowfieldService.generate_wake_field(0.5, 0.0, GridSpec(x1_min=0.0, x1_max=0.0))
    with pytest.raises(DomainError):
        FlowfieldService.generate_wake_field(-0.1, 0.0)


# Group 2


def test_export_import_round_trip(tmp_path, coarse_grid):
    field = FlowfieldService.generate_wake_field(0.5, -10.0, coarse_grid, seed=9)
    path = tmp_path / "field.txt"
    FlowfieldService.export_field(field, str(path))
    loaded = FlowfieldService.import_field(str(path))
    for name in ("x1_axis", "x2_axis", "temperature", "pressure", "energy", "dissipation"):
        assert np.allclose(getattr(loaded, name), getattr(field, name), rtol=1e-12, atol=0.0)
    assert loaded.condition == field.condition
    assert loaded.p_inf == field.p_inf


def test_hand_written_fixture_matches_literals(tmp_path):
    path = tmp_path / "fixture.txt"
    path.write_text(FIXTURE)
    field = FlowfieldService.import_field(str(path))
    assert field.shape == (3, 3)
    assert np.array_equal(field.x2_axis, [0.0, 2.0, 4.0])
    assert np.array_equal(field.temperature, np.arange(280.0, 289.0).reshape(3, 3))
    assert field.energy[2, 2] == 0.9
    assert field.dissipation[1, 0] == 13.0
    assert field.condition.attack_deg == -10.0


def _import_variant(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    return FlowfieldService.import_field(str(path))


def test_negative_temperature_cites_cell(tmp_path):
    with pytest.raises(FieldValidationError, match=r"cell \(1, 2\) at line 10"):
        _import_variant(tmp_path, FIXTURE.replace("1 2 285 ", "1 2 -285 "))


def test_missing_and_duplicate_cells(tmp_path):
    with pytest.raises(FieldValidationError, match="first missing cell"):
        _import_variant(tmp_path, FIXTURE.replace("2 2 288 90080 0.9 18\n", ""))
    with pytest.raises(FieldValidationError, match="duplicate cell"):
        _import_variant(tmp_path, FIXTURE.replace("2 2 288", "2 1 288"))


def test_malformed_files(tmp_path):
    with pytest.raises(FieldValidationError, match="non-monotone|not strictly increasing"):
        _import_variant(tmp_path, FIXTURE.replace("# axis x1: -1 0 1", "# axis x1: -1 1 0"))
    with pytest.raises(FieldValidationError, match="unsupported units"):
        _import_variant(tmp_path, FIXTURE.replace("# units SI", "# units imperial"))
    with pytest.raises(FieldValidationError, match="columns"):
        _import_variant(tmp_path, FIXTURE.replace("0 0 280 90000 0.1 10", "0 0 280 90000 0.1"))
    with pytest.raises(FieldValidationError, match="Missing"):
        _import_variant(tmp_path, FIXTURE.replace("# condition M=0.5, alpha_deg=-10\n", ""))
    with pytest.raises(FieldValidationError, match="outside"):
        _import_variant(tmp_path, FIXTURE.replace("2 2 288", "3 2 288"))


# Group 3


def test_node_values_and_cell_midpoint():
    field = make_field([0.0, 1.0], [0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]])
    assert FlowfieldService.sample_field(field, 1.0, 0.0)[0] == pytest.approx(3.0, abs=1e-12)
    assert FlowfieldService.sample_field(field, 0.5, 0.5)[0] == pytest.approx(2.5, rel=1e-15)


def test_outside_the_box_is_freestream():
    field = make_field([0.0, 1.0], [0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]])
    T, P, E, W = FlowfieldService.sample_field(field, np.array([-5.0, 0.5]), np.array([0.5, 7.0]))
    assert np.array_equal(T, [field.t_inf, field.t_inf])
    assert np.array_equal(P, [field.p_inf, field.p_inf])
    assert np.array_equal(E, [field.energy_floor, field.energy_floor])
    assert np.array_equal(W, [field.w_inf, field.w_inf])


def test_bilinear_error_is_second_order():
    def analytic(x1, x2):
        return 300.0 + np.sin(x1 / 5.0) * np.cos(x2 / 7.0)

    rng = np.random.default_rng(0)
    x1 = rng.uniform(-20.0, 20.0, 2000)
    x2 = rng.uniform(-10.0, 10.0, 2000)
    errors = []
    for h in (2.0, 1.0):
        a1 = np.arange(-20.0, 20.0 + h / 2, h)
        a2 = np.arange(-10.0, 10.0 + h / 2, h)
        X1, X2 = np.meshgrid(a1, a2, indexing="ij")
        field = make_field(a1, a2, analytic(X1, X2))
        T = FlowfieldService.sample_field(field, x1, x2)[0]
        errors.append(np.max(np.abs(T - analytic(x1, x2))))
    assert errors[0] <= (1.0 / 25.0 + 1.0 / 49.0) * 2.0 ** 2 / 8.0 * 2.0
    assert errors[1] <= 0.4 * errors[0]
