import json
from pathlib import Path

import numpy as np
import pytest

from mdmsim import bench
from mdmsim.bench import BenchError, cell_seed, load_config, parse_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def fast_config(**run_overrides):
    """Smallest legal scenario: 1 group, 1 wavelength, 4096 symbols."""
    data = json.loads((CONFIG_DIR / "paper_scenario.json").read_text())
    data["run"].update({"n_symbols": 4096, "wavelengths": [4], "groups": [2],
                        "seed": 123})
    data["run"].update(run_overrides)
    data["dsp"]["cma_epochs"] = 40
    data["dsp"]["cma_polish_epochs"] = 20
    return parse_config(data)


class TestConfigParsing:
    def test_example_configs_parse(self):
        for name in ("paper_scenario.json", "physical_sorter.json"):
            cfg = load_config(CONFIG_DIR / name)
            assert cfg.run.seed == 20260823

    def test_comments_stripped(self):
        cfg = parse_config({
            "_comment": "top", "run": {"seed": 1, "_comment_x": "inner"}})
        assert cfg.run.seed == 1

    def test_missing_run_section(self):
        with pytest.raises(BenchError, match="run"):
            parse_config({"tx": {}})

    def test_unknown_field_diagnostic(self):
        with pytest.raises(BenchError, match=r"fiber: unknown field.*lenght"):
            parse_config({"run": {"seed": 0}, "fiber": {"lenght_km": 50}})

    def test_unknown_section_diagnostic(self):
        with pytest.raises(BenchError, match="fibre"):
            parse_config({"run": {"seed": 0}, "fibre": {}})

    def test_invalid_value_names_path(self):
        with pytest.raises(BenchError, match="xt"):
            parse_config({"run": {"seed": 0}, "xt": {"inter_mg_xt_db": 3.0}})

    def test_seed_required_no_wall_clock(self):
        with pytest.raises(BenchError, match="seed"):
            parse_config({"run": {}})

    def test_osnr_inf_string(self):
        cfg = parse_config({"run": {"seed": 0}, "imp": {"osnr_db": "inf"}})
        assert np.isinf(cfg.imp.osnr_db)

    def test_run_n_symbols_governs_tx(self):
        cfg = parse_config({"run": {"seed": 0, "n_symbols": 8192}})
        assert cfg.tx.n_symbols == 8192

    def test_wavelength_subsets(self):
        cfg = parse_config({"run": {"seed": 0}})
        assert cfg.run.wavelength_indices(cfg.tx.grid, full=False) == (0, 4, 9)
        assert cfg.run.wavelength_indices(cfg.tx.grid, full=True) == tuple(range(10))
        with pytest.raises(BenchError, match="range"):
            parse_config({"run": {"seed": 0, "wavelengths": [40]}}) \
                .run.wavelength_indices(cfg.tx.grid, False)


class TestCellSeed:
    def test_stable_and_distinct(self):
        s = cell_seed(123, 2, 4)
        assert s == cell_seed(123, 2, 4)
        assert s != cell_seed(123, 3, 4)
        assert s != cell_seed(123, 2, 5)
        assert s != cell_seed(124, 2, 4)


class TestSweepValidation:
    def test_empty_values_rejected(self):
        with pytest.raises(BenchError, match="at least one"):
            bench.sweep(fast_config(), "imp.osnr_db", [])

    def test_unresolvable_path_lists_valid(self):
        with pytest.raises(BenchError, match="imp.osnr_db"):
            bench.sweep(fast_config(), "nosuch.field", [1.0])

    def test_non_numeric_field_rejected(self):
        with pytest.raises(BenchError, match="numeric"):
            bench.sweep(fast_config(), "fiber.group_walkoff", [1.0])


@pytest.mark.slow
class TestRunScenario:
    def test_subset_contract_and_outputs(self, tmp_path):
        """wavelengths=[center], groups=[2] -> 1 cell with 4 BER entries."""
        cfg = fast_config()
        report, code = bench.run_scenario(cfg, out_dir=tmp_path)
        assert code in (0, 2)
        assert len(report["cells"]) == 1
        cell = report["cells"][0]
        assert len(cell["channels"]) == 4
        assert set(cell["pair_ber"]) == {"2", "-2"}
        # capacity echoes the paper arithmetic regardless of the subset
        assert report["capacity"]["gross_capacity_bps"] == 2.56e12
        assert report["capacity"]["se_bps_hz"] == 10.24
        for f in ("report.json", "ber_table.csv", "transfer_matrix.csv",
                  "spectra.csv", "transfer_matrix.png", "ber_table.png"):
            assert (tmp_path / f).exists(), f
        assert list(tmp_path.glob("constellation_*.csv"))
        assert list(tmp_path.glob("constellation_*.png"))
        assert list(tmp_path.glob("taps_*.csv"))
        # report.json round-trips as JSON
        back = json.loads((tmp_path / "report.json").read_text())
        assert back["schema_version"] == bench.SCHEMA_VERSION

    def test_seed_override(self, tmp_path):
        cfg = fast_config()
        report, _ = bench.run_scenario(cfg, out_dir=tmp_path, seed_override=9)
        assert report["seed"] == 9

    def test_cli_run(self, tmp_path):
        from click.testing import CliRunner

        from mdmsim.cli import main
        cfg_file = tmp_path / "cfg.json"
        data = json.loads((CONFIG_DIR / "paper_scenario.json").read_text())
        data["run"].update({"n_symbols": 4096, "wavelengths": [4],
                            "groups": [2]})
        data["dsp"]["cma_epochs"] = 40
        data["dsp"]["cma_polish_epochs"] = 20
        data["outputs"] = str(tmp_path / "out")
        cfg_file.write_text(json.dumps(data))
        result = CliRunner().invoke(
            main, ["run", "--config", str(cfg_file)])
        assert result.exit_code in (0, 2), result.output
        assert "FEC threshold" in result.output

    def test_cli_error_exit_1(self, tmp_path):
        from click.testing import CliRunner

        from mdmsim.cli import main
        bad = tmp_path / "bad.json"
        bad.write_text('{"run": {}}')
        result = CliRunner().invoke(main, ["run", "--config", str(bad)])
        assert result.exit_code == 1

    def test_cli_sorter(self, tmp_path):
        from click.testing import CliRunner

        from mdmsim.cli import main
        result = CliRunner().invoke(main, [
            "sorter", "--config", str(CONFIG_DIR / "physical_sorter.json"),
            "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        for f in ("phase_unwrapper.png", "phase_corrector.png",
                  "coupling_matrix.csv", "centroids.csv",
                  "sorter_report.json"):
            assert (tmp_path / f).exists(), f
