"""Command-line surface: artifacts, exit codes, resume, overrides."""

import json

import pytest

from robustnas.analysis import all_stats, emit_table, parse_csv
from robustnas.arch import ModelShapeConfig, count_params_breakdown, from_record, parse, serialize, to_record
from robustnas.cli import EXIT_CONFIG, EXIT_INVALID, EXIT_IO, EXIT_OK, main
from robustnas.engine import EngineConfig, individual_to_record, run
from robustnas.fitness import SurrogateConfig, make_surrogate
from robustnas.space import DEFAULT_SPACE, simplest


@pytest.fixture
def arch_file(tmp_path):
    path = tmp_path / "arch.json"
    path.write_text(serialize(simplest(DEFAULT_SPACE)) + "\n")
    return str(path)


def write_config(tmp_path, name="config.json", **overrides):
    config = {
        "engine": {"population": 8, "max_evaluations": 20, "patience": 1000, "seed": 3},
        "run": {"checkpoint_every": 5},
    }
    for section, content in overrides.items():
        config.setdefault(section, {}).update(content)
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=1))
    return str(path)


class TestValidate:
    def test_ok_with_warnings(self, arch_file, capsys):
        assert main(["validate", arch_file]) == EXIT_OK
        out = capsys.readouterr().out
        assert "OK" in out
        assert "warning: inactive nodes" in out

    def test_invalid_exit_and_report(self, tmp_path, capsys):
        record = to_record(simplest(DEFAULT_SPACE))
        record["block"]["edges"] = [[0, 1], [1, 5]]  # too few, and no such space member
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(record))
        assert main(["validate", str(path)]) == EXIT_INVALID
        out = capsys.readouterr().out
        assert "violation: edge count" in out
        assert "INVALID" in out

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.json")]) == EXIT_IO

    def test_malformed_json_is_io_error(self, tmp_path, capsys):
        path = tmp_path / "garbled.json"
        path.write_text("{oops")
        assert main(["validate", str(path)]) == EXIT_IO
        assert "offset" in capsys.readouterr().err


class TestParams:
    def test_breakdown_matches_library(self, arch_file, capsys):
        assert main(["params", arch_file]) == EXIT_OK
        out = capsys.readouterr().out
        want = count_params_breakdown(simplest(DEFAULT_SPACE), ModelShapeConfig())
        for part in ("embedding", "blocks", "classifier", "total"):
            assert f"{want[part]:,}" in out

    def test_shape_flags(self, arch_file, capsys):
        assert main(["params", arch_file, "--vocab", "1000", "--max-pos", "64", "--classes", "5"]) == EXIT_OK
        out = capsys.readouterr().out
        want = count_params_breakdown(
            simplest(DEFAULT_SPACE), ModelShapeConfig(vocab_size=1000, max_positions=64, num_classes=5)
        )
        assert f"{want['total']:,}" in out


class TestMutate:
    def test_deterministic_and_valid(self, arch_file, capsys):
        assert main(["mutate", arch_file, "--seed", "5"]) == EXIT_OK
        first = capsys.readouterr().out
        assert main(["mutate", arch_file, "--seed", "5"]) == EXIT_OK
        second = capsys.readouterr().out
        assert first == second
        payload = json.loads(first)
        assert {"arch", "op", "repairs"} <= set(payload)
        mutated = from_record(payload["arch"])
        assert mutated != simplest(DEFAULT_SPACE)
        assert payload["op"]["kind"] in {
            "change_repeats",
            "change_width",
            "add_edge",
            "remove_edge",
            "mutate_node_attr",
        }

    def test_different_seed_may_differ(self, arch_file, capsys):
        outputs = set()
        for seed in range(6):
            main(["mutate", arch_file, "--seed", str(seed)])
            outputs.add(capsys.readouterr().out)
        assert len(outputs) > 1


class TestAnalyze:
    @pytest.fixture
    def history_file(self, tmp_path):
        ev = make_surrogate(SurrogateConfig())
        cfg = EngineConfig(population=10, max_evaluations=40, patience=1000, seed=9)
        result = run(DEFAULT_SPACE, cfg, ev)
        path = tmp_path / "history.jsonl"
        with path.open("w") as fh:
            for ind in result.history:
                fh.write(json.dumps(individual_to_record(ind), separators=(",", ":")) + "\n")
        return path, list(result.history)

    def test_csv_matches_library(self, history_file, tmp_path, capsys):
        path, history = history_file
        out_csv = tmp_path / "stats.csv"
        assert main(["analyze", str(path), "--out", str(out_csv)]) == EXIT_OK
        text = out_csv.read_text()
        assert parse_csv(text) == parse_csv(emit_table(all_stats(history)))

    def test_failed_rows_skipped_with_note(self, history_file, tmp_path, capsys):
        path, history = history_file
        with path.open("a") as fh:
            fh.write(
                json.dumps(
                    {
                        "member_id": 999,
                        "arch": to_record(simplest(DEFAULT_SPACE)),
                        "scores": None,
                        "fitness": None,
                        "birth_generation": 0,
                        "eval_source": "surrogate",
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
        out_csv = tmp_path / "stats.csv"
        assert main(["analyze", str(path), "--out", str(out_csv)]) == EXIT_OK
        captured = capsys.readouterr()
        assert "skipping 1 failed evaluation" in captured.err

    def test_corrupt_line_reports_position(self, tmp_path, capsys):
        path = tmp_path / "history.jsonl"
        path.write_text('{"member_id": 0}\n')
        assert main(["analyze", str(path), "--out", str(tmp_path / "s.csv")]) == EXIT_IO
        assert "history.jsonl:1:" in capsys.readouterr().err

    def test_empty_history_is_io_error(self, tmp_path, capsys):
        path = tmp_path / "history.jsonl"
        path.write_text("")
        assert main(["analyze", str(path), "--out", str(tmp_path / "s.csv")]) == EXIT_IO

    def test_json_format(self, history_file, tmp_path):
        path, history = history_file
        out_json = tmp_path / "stats.json"
        assert main(["analyze", str(path), "--out", str(out_json), "--format", "json"]) == EXIT_OK
        payload = json.loads(out_json.read_text())
        assert len(payload) == len(all_stats(history))


class TestSearch:
    def test_surrogate_run_writes_artifacts(self, tmp_path, capsys):
        config = write_config(tmp_path)
        out_dir = tmp_path / "run"
        assert main(["search", "--config", config, "--out", str(out_dir), "--surrogate"]) == EXIT_OK

        history = (out_dir / "history.jsonl").read_text().strip().split("\n")
        assert len(history) == 8 + 20
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["result"]["stop_reason"] == "budget"
        assert manifest["result"]["evaluations"] == 20
        assert manifest["engine_digest"]
        checkpoint = json.loads((out_dir / "checkpoint.json").read_text())
        assert checkpoint["evaluations"] == 20

        best = (out_dir / "best_arch.json").read_text()
        parse(best)  # canonical record parses
        assert main(["validate", str(out_dir / "best_arch.json")]) in (EXIT_OK,)

    def test_resume_equals_uninterrupted(self, tmp_path):
        full_cfg = write_config(tmp_path, "full.json", engine={"max_evaluations": 30})
        half_cfg = write_config(tmp_path, "half.json", engine={"max_evaluations": 12})

        full_dir, resumed_dir = tmp_path / "full", tmp_path / "resumed"
        assert main(["search", "--config", full_cfg, "--out", str(full_dir), "--surrogate"]) == EXIT_OK
        assert main(["search", "--config", half_cfg, "--out", str(resumed_dir), "--surrogate"]) == EXIT_OK
        assert (
            main(["search", "--config", full_cfg, "--out", str(resumed_dir), "--resume", "--surrogate"])
            == EXIT_OK
        )

        assert (resumed_dir / "history.jsonl").read_bytes() == (full_dir / "history.jsonl").read_bytes()
        assert (resumed_dir / "best_arch.json").read_bytes() == (full_dir / "best_arch.json").read_bytes()

    def test_seed_flag_overrides_config(self, tmp_path):
        config = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["search", "--config", config, "--out", str(a), "--surrogate", "--seed", "100"]) == EXIT_OK
        assert main(["search", "--config", config, "--out", str(b), "--surrogate", "--seed", "101"]) == EXIT_OK
        assert (a / "history.jsonl").read_bytes() != (b / "history.jsonl").read_bytes()

    def test_unknown_config_key_named(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"engine": {"popluation": 8}}))
        assert main(["search", "--config", str(path), "--out", str(tmp_path / "x"), "--surrogate"]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "popluation" in err
        assert "engine" in err

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["search", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == EXIT_IO

    def test_restricted_space_config(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "space": {
                        "n": 4,
                        "repeats_range": [3, 4],
                        "width_range": [128, 256],
                        "output_widths": [128, 256],
                        "layer_types": ["conv", "glu"],
                        "conv_params": [1, 3],
                        "input_modes": ["add"],
                        "activations": ["none"],
                    },
                    "engine": {"population": 10, "max_evaluations": 15, "patience": 500, "seed": 2},
                    "surrogate": {"noise_amplitude": 0.0},
                }
            )
        )
        out_dir = tmp_path / "run"
        assert main(["search", "--config", str(config_path), "--out", str(out_dir), "--surrogate"]) == EXIT_OK
        best = parse((out_dir / "best_arch.json").read_text())
        assert best.block.n == 4
