import pytest

from src.config import ConfigError, default_detector_table
from src.scenario import (
    MatrixConfig, ScenarioConfig, Variant, load_matrix, load_scenario, realworld_scenario,
)

SCENARIOS = ["hovering", "moving", "maneuver", "gyro_overt", "gyro_acoustic", "gyro_stealthy", "gps_ramp", "multi"]
MATRICES = ["matrix_gyro", "matrix_buffer", "matrix_ablation", "matrix_wind"]


@pytest.mark.parametrize("name", SCENARIOS)
def test_shipped_scenarios_load(configs_dir, name):
    cfg = load_scenario(configs_dir / f"{name}.ini")
    assert cfg.name == name


@pytest.mark.parametrize("name", MATRICES)
def test_shipped_matrices_load(configs_dir, name):
    matrix = load_matrix(configs_dir / f"{name}.ini")
    assert matrix.seeds == 50
    assert matrix.base.hover_time == 60.0


class TestLoadScenario:
    def test_overt_gyro(self, configs_dir):
        cfg = load_scenario(configs_dir / "gyro_overt.ini", seed=11)
        spec = cfg.attack()
        assert cfg.seed == 11
        assert spec.instances == (0, 1, 2) and spec.deviation == pytest.approx(0.6)
        assert spec.start == 10.0 and spec.trigger == "waypoint"
        assert not cfg.default_detectors

    def test_stealthy_section(self, configs_dir):
        spec = load_scenario(configs_dir / "gyro_stealthy.ini").attack()
        assert spec.category == "stealthy" and spec.instances == (0,)

    def test_gps_alarm_bound(self, configs_dir):
        cfg = load_scenario(configs_dir / "gps_ramp.ini")
        assert cfg.eval.alarm_bound("gps") == 20.0
        assert cfg.eval.alarm_bound("gyro") == 1.0

    def test_multi(self, configs_dir):
        spec = load_scenario(configs_dir / "multi.ini").attack()
        assert [p.sensor for p in spec.parts()] == ["mag", "accel", "gyro"]

    def test_vehicle_file_resolves_relative(self, configs_dir):
        cfg = load_scenario(configs_dir / "hovering.ini")
        assert cfg.vehicle.mass == pytest.approx(0.8)
        assert cfg.wind.sigma == (6.0, 8.0, 0.0)

    def test_inline_vehicle_override(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("[scenario]\nname = heavy\n\n[vehicle]\nmass = 1.2\n")
        cfg = load_scenario(path)
        assert cfg.vehicle.mass == 1.2 and cfg.vehicle.arm_length == pytest.approx(0.165)

    def test_recovery_priorities(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("[scenario]\nname = r\n\n[recovery]\nenabled = false\naltitude = se, baro, gps\n")
        cfg = load_scenario(path)
        assert not cfg.recovery.enabled
        assert cfg.recovery.priorities["altitude"] == ["se", "baro", "gps"]
        assert cfg.recovery.priorities["position"] == ["se", "gps"]

    def test_bad_attack_points_at_line(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("[scenario]\nname = bad\nattack = OA_gyro^5/3(0.6)\n")
        with pytest.raises(ConfigError) as info:
            load_scenario(path)
        assert info.value.lineno == 3

    def test_bad_value_is_config_error(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("[scenario]\nmission = loiter\n")
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_missing_scenario_section(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("[vehicle]\nmass = 1\n")
        with pytest.raises(ConfigError, match=r"\[scenario\]"):
            load_scenario(path)


class TestScenarioConfig:
    def test_maneuver_widens_default_gyro_band(self):
        cfg = ScenarioConfig(mission="maneuver")
        assert cfg.detector_table().params("gyro", "cs-ema").ema_threshold == 0.32
        assert ScenarioConfig().detector_table().params("gyro", "cs-ema").ema_threshold == 0.25

    def test_explicit_table_is_kept(self):
        cfg = ScenarioConfig(mission="maneuver", detectors=default_detector_table(), default_detectors=False)
        assert cfg.detector_table().params("gyro", "cs-ema").ema_threshold == 0.25

    def test_coarse_model(self):
        cfg = ScenarioConfig(model="coarse")
        assert not cfg.model_params().drag and cfg.vehicle.drag

    def test_realworld(self):
        cfg = realworld_scenario(seed=4)
        assert cfg.vehicle.mass == pytest.approx(2.64) and cfg.seed == 4

    def test_available_counts(self):
        assert ScenarioConfig().available()["gyro"] == 3


class TestMatrix:
    def test_gyro_matrix_cases(self, configs_dir):
        matrix = load_matrix(configs_dir / "matrix_gyro.ini")
        assert len(matrix.cases()) == 3 * 7
        assert matrix.seed_list()[:3] == [0, 1, 2]

    def test_scenario_for_case(self, configs_dir):
        matrix = load_matrix(configs_dir / "matrix_buffer.ini")
        no_buffer = next(v for v in matrix.variants if v.name == "no_buffer")
        cfg = matrix.scenario("hovering", "SA_gyro^1/3", no_buffer, 9)
        assert cfg.name == "hovering|SA_gyro^1/3|no_buffer"
        assert cfg.seed == 9 and not cfg.estimator.buffer
        assert cfg.attack().trigger == "waypoint" and cfg.attack().start == 10.0
        assert matrix.scenario("hovering", "none", no_buffer, 9).attack() is None

    def test_variants(self, configs_dir):
        matrix = load_matrix(configs_dir / "matrix_ablation.ini")
        names = [v.name for v in matrix.variants]
        assert names == ["cs_ema", "cusum", "l1tw", "l2tw", "coarse_model", "no_recovery"]
        no_recovery = matrix.variants[-1].apply(matrix.base)
        assert not no_recovery.recovery.enabled

    def test_wind_variant(self):
        cfg = Variant(name="strong", wind_mean=(6.0, 6.0, 0.0)).apply(ScenarioConfig())
        assert cfg.wind.mean == (6.0, 6.0, 0.0)

    def test_duplicate_variant_names(self):
        with pytest.raises(ValueError):
            MatrixConfig(variants=(Variant(name="a"), Variant(name="a")))

    def test_bad_matrix_attack(self, tmp_path):
        path = tmp_path / "m.ini"
        path.write_text("[matrix]\nattacks = none, OA_gyro^4/3(0.6)\n")
        with pytest.raises(ConfigError):
            load_matrix(path)
