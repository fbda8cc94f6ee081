"""End-to-end command-line behaviour through click's test runner."""

import json

import pytest
import yaml
from click.testing import CliRunner

from intentconf.cli import main
from intentconf.preprocess import parse_config

GOOD = (
    "worker:\n  replicas: 2\n  resources:\n    limits:\n"
    "      cpu: 500m\n      memory: 512Mi"
)
HUNGRY = GOOD.replace("512Mi", "64Gi")
PROSE = "I cannot produce a configuration for that."
CHECKS = [{"path": "worker/replicas", "kind": "Compare", "op": ">=", "expected": 2}]


@pytest.fixture
def runner():
    return CliRunner()


def combined(result):
    err = getattr(result, "stderr", "") or ""
    return result.output + err


def write_yaml(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def make_workspace(tmp_path, *, scenarios=None, dataset=None, profile="ip"):
    """Lay out an app config, a provider script, and optional dataset files."""
    write_yaml(
        tmp_path / "mock.yaml",
        {"default": PROSE, "scenarios": scenarios or {}},
    )
    app = {
        "provider": {"kind": "mock", "script": "mock.yaml"},
        "profile": profile,
        "paths": {"output": "out"},
    }
    if dataset is not None:
        for case_id, spec in dataset.items():
            level = spec.get("level", 1)
            system = spec.get("system", "dask")
            write_yaml(
                tmp_path / "dataset" / system / f"level{level}" / f"{case_id}.yaml",
                {
                    "id": case_id,
                    "system": system,
                    "level": level,
                    "prompt": "configure the cluster",
                    "intent": spec.get("intent", "at least two workers"),
                    "assertions": spec.get("assertions", CHECKS),
                },
            )
            if "mock" in spec:
                write_yaml(
                    tmp_path / "dataset" / system / f"level{level}" / f"{case_id}.mock.yaml",
                    spec["mock"],
                )
        app["paths"]["dataset"] = "dataset"
    write_yaml(tmp_path / "checks.yaml", CHECKS)
    return write_yaml(tmp_path / "app.yaml", app)


class TestGenerate:
    def test_repairs_then_writes_config_and_benchmark(self, tmp_path, runner):
        app = make_workspace(
            tmp_path, scenarios={"demo": {"replies": [HUNGRY, GOOD], "latency": 0.5}}
        )
        result = runner.invoke(
            main,
            [
                "-c", str(app), "generate",
                "--system", "dask",
                "--intent", "two workers with half a gig each",
                "--scenario", "demo",
                "--assertions", str(tmp_path / "checks.yaml"),
            ],
        )
        assert result.exit_code == 0, combined(result)
        assert "attempt 1: Deployment failed" in result.output
        assert "insufficient memory" in result.output
        assert "attempt 2: passed" in result.output
        assert "benchmark: 110.000 s" in result.output
        written = parse_config((tmp_path / "out" / "demo.yaml").read_text())
        assert written.root["worker"]["replicas"] == 2
        assert (tmp_path / "out" / "demo.jsonl").exists()

    def test_unresolved_chain_exits_one(self, tmp_path, runner):
        app = make_workspace(tmp_path)
        result = runner.invoke(
            main,
            ["-c", str(app), "generate", "--system", "dask", "--intent", "x",
             "--scenario", "hopeless"],
        )
        assert result.exit_code == 1
        assert "unresolved" in combined(result)

    def test_no_deploy_skips_benchmark(self, tmp_path, runner):
        app = make_workspace(tmp_path, scenarios={"demo": {"replies": [GOOD]}})
        result = runner.invoke(
            main,
            ["-c", str(app), "generate", "--system", "dask", "--intent", "x",
             "--scenario", "demo", "--no-deploy"],
        )
        assert result.exit_code == 0
        assert "benchmark:" not in result.output

    def test_unknown_profile_is_usage_error(self, tmp_path, runner):
        app = make_workspace(tmp_path)
        result = runner.invoke(
            main,
            ["-c", str(app), "generate", "--system", "dask", "--intent", "x",
             "--profile", "zero-shot-plus"],
        )
        assert result.exit_code == 2
        assert "error:" in combined(result)

    def test_shell_backend_requires_explicit_opt_in(self, tmp_path, runner):
        app = make_workspace(tmp_path, scenarios={"demo": {"replies": [GOOD]}})
        result = runner.invoke(
            main,
            ["-c", str(app), "generate", "--system", "dask", "--intent", "x",
             "--scenario", "demo", "--deploy-backend", "shell"],
        )
        assert result.exit_code == 2
        assert "--i-understand-this-applies-to-a-real-cluster" in combined(result)

    def test_config_path_from_environment(self, tmp_path, runner):
        app = make_workspace(tmp_path, scenarios={"demo": {"replies": [GOOD]}})
        result = runner.invoke(
            main,
            ["generate", "--system", "dask", "--intent", "x", "--scenario", "demo",
             "--no-deploy"],
            env={"INTENTCONF_CONFIG": str(app)},
        )
        assert result.exit_code == 0

    def test_missing_config_file(self, tmp_path, runner):
        result = runner.invoke(
            main,
            ["-c", str(tmp_path / "absent.yaml"), "generate", "--system", "d",
             "--intent", "x"],
        )
        assert result.exit_code == 2


class TestValidate:
    def test_passing_config(self, tmp_path, runner):
        make_workspace(tmp_path)
        config = tmp_path / "good.yaml"
        config.write_text(GOOD, encoding="utf-8")
        result = runner.invoke(
            main,
            ["validate", str(config), "--assertions", str(tmp_path / "checks.yaml")],
        )
        assert result.exit_code == 0
        assert "PASS Compare worker/replicas" in result.output
        assert result.output.strip().endswith("passed: good.yaml")

    def test_failing_config(self, tmp_path, runner):
        make_workspace(tmp_path)
        config = tmp_path / "bad.yaml"
        config.write_text("worker:\n  replicas: 1", encoding="utf-8")
        result = runner.invoke(
            main,
            ["validate", str(config), "--assertions", str(tmp_path / "checks.yaml"),
             "--case-id", "bad-case"],
        )
        assert result.exit_code == 1
        assert "FAIL Compare worker/replicas" in result.output
        assert "1 < 2" in result.output
        assert "failed: bad-case" in result.output

    def test_structural_error(self, tmp_path, runner):
        make_workspace(tmp_path)
        config = tmp_path / "broken.yaml"
        config.write_text("a: [unclosed", encoding="utf-8")
        result = runner.invoke(
            main,
            ["validate", str(config), "--assertions", str(tmp_path / "checks.yaml")],
        )
        assert result.exit_code == 1
        assert "structural error:" in result.output

    def test_bad_assertions_file(self, tmp_path, runner):
        checks = tmp_path / "empty.yaml"
        checks.write_text("[]", encoding="utf-8")
        config = tmp_path / "good.yaml"
        config.write_text(GOOD, encoding="utf-8")
        result = runner.invoke(main, ["validate", str(config), "--assertions", str(checks)])
        assert result.exit_code == 2


class TestDeploy:
    def test_simulated_success(self, tmp_path, runner):
        config = tmp_path / "good.yaml"
        config.write_text(GOOD, encoding="utf-8")
        result = runner.invoke(main, ["deploy", str(config), "--system", "dask"])
        assert result.exit_code == 0
        assert "placed replica" in result.output
        assert "deployed" in result.output

    def test_simulated_failure(self, tmp_path, runner):
        config = tmp_path / "hungry.yaml"
        config.write_text(HUNGRY, encoding="utf-8")
        result = runner.invoke(main, ["deploy", str(config), "--system", "dask"])
        assert result.exit_code == 1
        assert "insufficient memory" in combined(result)

    def test_shell_guard(self, tmp_path, runner):
        config = tmp_path / "good.yaml"
        config.write_text(GOOD, encoding="utf-8")
        result = runner.invoke(
            main, ["deploy", str(config), "--system", "dask", "--deploy-backend", "shell"]
        )
        assert result.exit_code == 2


class TestChain:
    def test_replays_case_with_its_mock_script(self, tmp_path, runner):
        app = make_workspace(
            tmp_path,
            dataset={"c1": {"mock": {"replies": [HUNGRY, GOOD]}}},
        )
        result = runner.invoke(main, ["-c", str(app), "chain", "--case", "c1"])
        assert result.exit_code == 0, combined(result)
        assert "attempt 1: Deployment failed" in result.output
        assert (tmp_path / "out" / "c1.jsonl").exists()

    def test_transcripts_are_reproducible(self, tmp_path, runner):
        app = make_workspace(
            tmp_path,
            dataset={"c1": {"mock": {"replies": [HUNGRY, GOOD]}}},
        )
        paths = [tmp_path / "t1.jsonl", tmp_path / "t2.jsonl"]
        for path in paths:
            result = runner.invoke(
                main, ["-c", str(app), "chain", "--case", "c1", "--transcript", str(path)]
            )
            assert result.exit_code == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_unknown_case_is_usage_error(self, tmp_path, runner):
        app = make_workspace(tmp_path, dataset={"c1": {}})
        result = runner.invoke(main, ["-c", str(app), "chain", "--case", "nope"])
        assert result.exit_code == 2
        assert "not found" in combined(result)

    def test_unresolved_case_exits_one(self, tmp_path, runner):
        app = make_workspace(tmp_path, dataset={"c1": {"mock": {"replies": [PROSE]}}})
        result = runner.invoke(main, ["-c", str(app), "chain", "--case", "c1"])
        assert result.exit_code == 1


class TestBench:
    def test_accuracy_table_and_reports(self, tmp_path, runner):
        app = make_workspace(
            tmp_path,
            dataset={
                "b1": {"mock": {"replies": [GOOD]}},
                "b2": {"mock": {"replies": [PROSE]}},
                "b3": {"level": 2, "mock": {"replies": [GOOD]}},
            },
        )
        result = runner.invoke(main, ["-c", str(app), "bench", "--profiles", "ip"])
        assert result.exit_code == 0, combined(result)
        assert "Level" in result.output and "IP" in result.output
        assert (tmp_path / "out" / "accuracy.txt").exists()
        payload = json.loads((tmp_path / "out" / "accuracy.json").read_text())
        rows = {(r["profile"], r["level"]): r["percent"] for r in payload["rows"]}
        assert rows[("ip", 1)] == 50.0
        assert rows[("ip", 2)] == 100.0
        assert "generated_at" in payload["meta"]

    def test_missing_dataset_is_usage_error(self, tmp_path, runner):
        app = make_workspace(tmp_path)
        result = runner.invoke(main, ["-c", str(app), "bench", "--profiles", "ip"])
        assert result.exit_code == 2

    def test_unknown_profile_is_usage_error(self, tmp_path, runner):
        app = make_workspace(tmp_path, dataset={"b1": {}})
        result = runner.invoke(main, ["-c", str(app), "bench", "--profiles", "warp"])
        assert result.exit_code == 2


class TestComplexity:
    def test_summary_lines(self, tmp_path, runner):
        write_yaml(tmp_path / "one.yaml", {"a": 1, "b": {"c": 2}})
        write_yaml(tmp_path / "two.yaml", {"x": 1})
        result = runner.invoke(main, ["complexity", str(tmp_path / "*.yaml")])
        assert result.exit_code == 0
        lines = result.output.splitlines()
        assert lines[0].split() == ["Configs", "2"]
        assert lines[1].split() == ["Max", "Keys", "3"]
        assert lines[2].split() == ["Max", "Depth", "2"]
        assert "2.00 ± 1.00" in lines[3]
        assert "1.50 ± 0.50" in lines[4]

    def test_no_matches(self, tmp_path, runner):
        result = runner.invoke(main, ["complexity", str(tmp_path / "nothing-*.yaml")])
        assert result.exit_code == 2

    def test_unparsable_file(self, tmp_path, runner):
        bad = tmp_path / "bad.yaml"
        bad.write_text("a: [unclosed", encoding="utf-8")
        result = runner.invoke(main, ["complexity", str(bad)])
        assert result.exit_code == 2


class TestReport:
    def seed_transcripts(self, tmp_path, runner):
        app = make_workspace(
            tmp_path,
            scenarios={
                "demo": {"replies": [HUNGRY, GOOD], "latency": 0.5},
                "solo": {"replies": [GOOD], "latency": 0.25},
            },
        )
        for scenario in ("demo", "solo"):
            result = runner.invoke(
                main,
                ["-c", str(app), "generate", "--system", "dask", "--intent", "x",
                 "--scenario", scenario,
                 "--assertions", str(tmp_path / "checks.yaml")],
            )
            assert result.exit_code == 0, combined(result)
        return app

    def test_curve_costs_and_latency(self, tmp_path, runner):
        app = self.seed_transcripts(tmp_path, runner)
        result = runner.invoke(
            main, ["-c", str(app), "report", "--transcripts", str(tmp_path / "out" / "*.jsonl")]
        )
        assert result.exit_code == 0, combined(result)
        assert "chains: 2" in result.output
        assert "resolved by attempt 1: 50.0%" in result.output
        assert "resolved by attempt 2: 100.0%" in result.output
        assert "resolved by attempt 3: 100.0%" in result.output
        assert "latency per attempt" in result.output
        payload = json.loads((tmp_path / "out" / "report.json").read_text())
        assert payload["chains"] == 2
        assert payload["resolution_curve"] == {"1": 50.0, "2": 100.0, "3": 100.0}
        assert payload["cost"][0]["system"] == "dask"
        assert "generated_at" in payload["meta"]

    def test_no_matching_transcripts(self, tmp_path, runner):
        app = make_workspace(tmp_path)
        result = runner.invoke(
            main, ["-c", str(app), "report", "--transcripts", str(tmp_path / "*.jsonl")]
        )
        assert result.exit_code == 2

    def test_rate_guard(self, tmp_path, runner):
        app = self.seed_transcripts(tmp_path, runner)
        result = runner.invoke(
            main,
            ["-c", str(app), "report", "--transcripts", str(tmp_path / "out" / "*.jsonl"),
             "--rate", "0"],
        )
        assert result.exit_code == 2
