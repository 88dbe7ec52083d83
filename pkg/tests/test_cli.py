import configparser
import csv
from pathlib import Path

import pytest

from cfrepair.cli import main
from cfrepair.config import ConfigError, RunConfig


@pytest.fixture()
def small(tmp_path) -> Path:
    assert main(["synth", "two-feature", "--n", "5000", "--seed", "0", "--out", str(tmp_path)]) == 0
    return tmp_path


def with_lines(path: Path, section: str, extra: str) -> Path:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    if not cp.has_section(section):
        cp.add_section(section)
    key, _, value = extra.partition("=")
    cp[section][key.strip()] = value.strip()
    out = path.with_name("edited.ini")
    with open(out, "w") as fh:
        cp.write(fh)
    return out


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if r and not next(iter(r.values())).startswith("#")]


def test_synth_writes_dataset_population_and_config(small):
    assert {p.name for p in small.iterdir()} >= {"two-feature.csv", "two-feature_population.json", "two-feature.ini"}
    cfg = RunConfig.load(small / "two-feature.ini")
    assert cfg.path("data", "path") == small / "two-feature.csv"


def test_full_pipeline_exact(small, capsys):
    ini = small / "two-feature.ini"
    assert main(["audit", "--config", str(ini)]) == 0
    assert main(["descend", "--config", str(ini), "--exact"]) == 0
    assert main(["repair", "--config", str(ini)]) == 0
    assert main(["evaluate", "--config", str(ini), "--draws", "3"]) == 0
    out = small / "two-feature_run"
    audit = read_csv(out / "audit.csv")
    assert len(audit) == 10 and {r["target"] for r in audit} == {"0", "1"}
    summary = {r["key"]: r["value"] for r in read_csv(out / "descent_summary.csv")}
    assert summary["mode"] == "exact" and abs(float(summary["gap_best"])) < 5e-3
    exact = read_csv(out / "eval_exact.csv")[0]
    assert abs(float(exact["gap_after_pushforward"])) < 5e-3
    resolved = configparser.ConfigParser()
    resolved.read(out / "resolved_config.ini")
    assert resolved["eval"]["draws"] == "3"
    assert "gap" in capsys.readouterr().out


def test_sampled_descend_writes_artifacts(small):
    ini = small / "two-feature.ini"
    out = small / "sampled"
    assert main(["descend", "--config", str(ini), "--out", str(out), "--seed", "4"]) == 0
    assert {"weights.csv", "counterfactual.csv", "trace.csv", "descent_summary.csv", "resolved_config.ini"} <= {p.name for p in out.iterdir()}
    assert "seed = 4" in (out / "resolved_config.ini").read_text()
    assert main(["repair", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "preprocessor.csv").is_file() and (out / "plan.csv").is_file()


def test_target_swap(small):
    ini = with_lines(small / "two-feature.ini", "data", "target = 1")
    assert main(["descend", "--config", str(ini), "--exact", "--out", str(small / "swap")]) == 0
    summary = {r["key"]: r["value"] for r in read_csv(small / "swap" / "descent_summary.csv")}
    assert float(summary["gap_initial"]) == pytest.approx(-0.2514, abs=5e-4)


@pytest.mark.parametrize(
    "section,line",
    [("data", "colour = 1"), ("metric", "kind = XYZ"), ("data", "target = 2"), ("descent", "step_eps = fast"), ("data", "label = nope")],
)
def test_config_errors_exit_2(small, section, line, capsys):
    ini = with_lines(small / "two-feature.ini", section, line)
    assert main(["descend", "--config", str(ini), "--exact"]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_and_missing_population(small, tmp_path):
    assert main(["audit", "--config", str(tmp_path / "none.ini")]) == 2
    ini = small / "two-feature.ini"
    text = "\n".join(l for l in ini.read_text().splitlines() if not l.startswith("population"))
    (small / "nopop.ini").write_text(text)
    assert main(["descend", "--config", str(small / "nopop.ini"), "--exact"]) == 2


def test_infeasible_transport_exit_3(small):
    ini = small / "two-feature.ini"
    assert main(["descend", "--config", str(ini), "--exact"]) == 0
    frozen = with_lines(ini, "transport", "immutable = x1, x2")
    assert main(["repair", "--config", str(frozen)]) == 3


def test_hard_fail_exit_4(small):
    ini = small / "two-feature.ini"
    for cmd in (["descend", "--exact"], ["repair"]):
        assert main([cmd[0], "--config", str(ini), *cmd[1:]]) == 0
    strict = with_lines(ini, "descent", "hard_fail = true")
    # source-label evaluation keeps a residual FPR gap above 0.01
    assert main(["evaluate", "--config", str(strict), "--draws", "3"]) == 4


def test_runconfig_rejects_unknown_and_resolves_paths(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(text="[nope]\na = 1\n")
    with pytest.raises(ConfigError, match="malformed"):
        RunConfig.load(text="[data]\nlabel = y\nlabel = z\n")
    cfg = RunConfig.load(text="[data]\npath = x.csv\n")
    assert cfg.path("data", "path").is_absolute()
    assert cfg.stage_seed("descent") != cfg.stage_seed("eval")
    assert cfg.stage_seed("descent") == RunConfig.load(text="").stage_seed("descent")
