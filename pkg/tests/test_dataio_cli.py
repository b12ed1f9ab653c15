"""File-format round trips, manifest hashing, and CLI exit contracts."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from dispro import SimConfig, simulate_dataset
from dispro.cli import main
from dispro.dataio import (
    read_dataset,
    read_draws,
    read_truth,
    write_dataset,
    write_draws,
    write_truth,
)
from dispro.fitting import fit_model
from dispro.sampler import SamplerConfig


@pytest.fixture(scope="module")
def sim_pair(tmp_path_factory):
    cfg = SimConfig(n_patients=15, n_bins=12, bin_width=1 / 12.0, seed=5)
    return simulate_dataset(cfg)


class TestDatasetFormat:
    def test_roundtrip(self, sim_pair, tmp_path):
        data, _ = sim_pair
        path = tmp_path / "dataset.csv"
        write_dataset(data, path)
        back = read_dataset(path)
        assert back.n_patients == data.n_patients
        assert back.bin_width == data.bin_width
        for a, b in zip(data.patients, back.patients):
            assert a.patient_id == b.patient_id
            assert a.group == b.group
            np.testing.assert_array_equal(a.visits, b.visits)
            np.testing.assert_allclose(a.features, b.features, equal_nan=True)

    def test_row_count_is_total_bins(self, sim_pair, tmp_path):
        data, _ = sim_pair
        path = tmp_path / "dataset.csv"
        write_dataset(data, path)
        n_rows = sum(1 for _ in path.open()) - 1
        assert n_rows == sum(p.horizon + 1 for p in data.patients)

    def test_missing_cells_are_empty(self, sim_pair, tmp_path):
        data, _ = sim_pair
        path = tmp_path / "dataset.csv"
        write_dataset(data, path)
        text = path.read_text().splitlines()
        # a non-visit bin line ends with d empty cells
        for line in text[1:]:
            cells = line.split(",")
            if cells[3] == "0":
                assert all(c == "" for c in cells[4:])
                break
        else:
            pytest.fail("no non-visit bin found")

    def test_truth_roundtrip(self, sim_pair, tmp_path):
        _, truth = sim_pair
        path = tmp_path / "truth.json"
        write_truth(truth, path)
        back = read_truth(path)
        assert back.params == truth.params
        assert back.latents == truth.latents


class TestDrawsFormat:
    def test_roundtrip(self, sim_pair, tmp_path):
        data, _ = sim_pair
        draws = fit_model(data, config=SamplerConfig(chains=2, warmup=40,
                                                     draws=30, seed=1))
        path = tmp_path / "draws.csv"
        write_draws(draws, path)
        back = read_draws(path)
        assert back.names == draws.names
        np.testing.assert_allclose(back.values, draws.values, rtol=0,
                                   atol=0)  # repr round-trips floats exactly
        assert back.n_chains == draws.n_chains
        assert back.meta["bin_width"] == draws.meta["bin_width"]

    def test_draws_respect_constraints(self, sim_pair, tmp_path):
        data, _ = sim_pair
        draws = fit_model(data, config=SamplerConfig(chains=2, warmup=40,
                                                     draws=30, seed=1))
        for name in draws.names:
            if name.startswith("noise_var") or "sd" in name:
                assert np.all(draws.column(name) > 0)
        assert np.all(draws.column("loading[0]") > 0)


def write_sim_config(path, **kwargs):
    doc = {"n_patients": 12, "n_bins": 10, "bin_width": 0.1, "seed": 3}
    doc.update(kwargs)
    Path(path).write_text(json.dumps(doc))
    return doc


class TestCli:
    def test_simulate_deterministic(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_sim_config(cfg)
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "a")]) == 0
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "b")]) == 0
        for name in ("dataset.csv", "dataset.csv.meta.json", "truth.json",
                     "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_manifest_hash_tracks_config(self, tmp_path):
        cfg1, cfg2 = tmp_path / "s1.json", tmp_path / "s2.json"
        write_sim_config(cfg1)
        write_sim_config(cfg2, n_patients=13)
        main(["simulate", "--config", str(cfg1), "--out", str(tmp_path / "o1")])
        main(["simulate", "--config", str(cfg2), "--out", str(tmp_path / "o2")])
        main(["simulate", "--config", str(cfg1), "--out", str(tmp_path / "o3")])
        h = [json.loads((tmp_path / f"o{i}" / "manifest.json").read_text())
             ["config_sha256"] for i in (1, 2, 3)]
        assert h[0] != h[1]
        assert h[0] == h[2]

    def test_fit_and_evaluate_pipeline(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_sim_config(cfg, n_patients=14, seed=8)
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        fit_dir = tmp_path / "fit"
        code = main(["fit", "--dataset", str(out / "dataset.csv"),
                     "--out", str(fit_dir), "--chains", "2", "--warmup", "60",
                     "--draws", "60", "--seed", "2", "--allow-nonconverged"])
        assert code == 0
        assert (fit_dir / "draws.csv").exists()
        diag = json.loads((fit_dir / "diagnostics.json").read_text())
        assert "max_global_rhat" in diag

        ev = tmp_path / "ev"
        code = main(["evaluate", "--mode", "disparity", "--fit", str(fit_dir),
                     "--years-per-unit", "8.5", "--out", str(ev)])
        assert code == 0
        assert (ev / "disparity.tsv").exists()
        assert main(["report", "--in", str(ev)]) == 0
        assert (ev / "report.md").exists()

    def test_fit_determinism(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_sim_config(cfg, seed=21)
        out = tmp_path / "sim"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        for tag in ("f1", "f2"):
            assert main(["fit", "--dataset", str(out / "dataset.csv"),
                         "--out", str(tmp_path / tag), "--chains", "2",
                         "--warmup", "50", "--draws", "40", "--seed", "7",
                         "--allow-nonconverged"]) == 0
        assert (tmp_path / "f1" / "draws.csv").read_bytes() == \
            (tmp_path / "f2" / "draws.csv").read_bytes()

    def test_nondisparity_variant_drops_group_columns(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_sim_config(cfg, seed=2)
        out = tmp_path / "sim"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        fit_dir = tmp_path / "fit_nd"
        assert main(["fit", "--dataset", str(out / "dataset.csv"),
                     "--out", str(fit_dir), "--variant", "no_disparities",
                     "--chains", "2", "--warmup", "40", "--draws", "30",
                     "--seed", "3", "--allow-nonconverged"]) == 0
        header = (fit_dir / "draws.csv").open().readline()
        assert "init_sev_mean[1]" not in header
        assert "visit_offset[1]" not in header
        assert "rate_mean[0]" not in header
        assert ",rate_mean," in header

    def test_usage_error_exit_1(self, tmp_path):
        assert main(["fit", "--dataset"]) == 1
        assert main(["evaluate", "--mode", "disparity",
                     "--out", str(tmp_path / "x")]) == 1

    def test_data_error_exit_2(self, tmp_path):
        assert main(["fit", "--dataset", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path / "y")]) == 2
        assert main(["report", "--in", str(tmp_path)]) == 2

    def test_convergence_exit_3(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_sim_config(cfg, seed=4)
        out = tmp_path / "sim"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        code = main(["fit", "--dataset", str(out / "dataset.csv"),
                     "--out", str(tmp_path / "fit3"), "--chains", "2",
                     "--warmup", "12", "--draws", "12", "--seed", "1",
                     "--rhat-threshold", "1.0001"])
        assert code == 3

    def test_oracle_failure_exit_4(self, tmp_path, monkeypatch):
        import dispro.cli as cli_mod

        monkeypatch.setattr(cli_mod, "verify_theorems",
                            lambda tol: (False, [{"theorem": "rate",
                                                  "shift": 1.0, "noise": 1.0,
                                                  "t": 0.5,
                                                  "e_population": 0.0,
                                                  "e_group": 0.0,
                                                  "expected_sign": 1,
                                                  "holds": False}]))
        code = main(["evaluate", "--mode", "oracles",
                     "--out", str(tmp_path / "oz")])
        assert code == 4

    def test_invalid_config_key_exit_1(self, tmp_path):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"n_patients": 5, "bogus_key": 1}))
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "z")]) == 1

    def test_svg_output_deterministic(self, tmp_path):
        from dispro.svgplot import svg_scatter

        pts = ({"a": ([0.0, 1.0, 2.0], [0.1, 0.9, 2.2])})
        svg_scatter(tmp_path / "p1.svg", pts, title="t", xlabel="x",
                    ylabel="y")
        svg_scatter(tmp_path / "p2.svg", pts, title="t", xlabel="x",
                    ylabel="y")
        b1 = (tmp_path / "p1.svg").read_bytes()
        assert b1 == (tmp_path / "p2.svg").read_bytes()
        assert b1.startswith(b"<svg")
