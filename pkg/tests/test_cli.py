import pytest

from safearm import cli, sim

SCEN_DIR = "scenarios"


@pytest.fixture(scope="module")
def short_scenario(tmp_path_factory):
    sc = sim.make_random_scenario(3, duration=3.0)
    path = tmp_path_factory.mktemp("scen") / "short.yaml"
    sim.save_scenario(sc, path)
    return str(path)


@pytest.fixture(scope="module")
def violating_scenario(tmp_path_factory):
    sc = sim.make_fig8_scenario()
    sc.duration = 15.0
    path = tmp_path_factory.mktemp("scen") / "fig8.yaml"
    sim.save_scenario(sc, path)
    return str(path)


def test_validate_ok(capsys):
    assert cli.main(["validate", f"{SCEN_DIR}/fig8_neutral.yaml"]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"


def test_validate_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nname: broken\n")
    with pytest.raises(SystemExit) as exc:
        cli.main(["validate", str(bad)])
    assert exc.value.code == cli.EXIT_VALIDATION
    assert "validation error" in capsys.readouterr().err


def test_run_clean_exit(short_scenario, capsys):
    assert cli.main(["run", short_scenario]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "min_distance=" in out and "hash=" in out


def test_run_violation_exit(violating_scenario, capsys):
    code = cli.main(["run", violating_scenario, "--safety", "off"])
    assert code == cli.EXIT_VIOLATION
    assert "violations" in capsys.readouterr().err


def test_run_writes_metrics(short_scenario, tmp_path, capsys):
    out = tmp_path / "metrics"
    assert cli.main(["run", short_scenario, "--out", str(out)]) == cli.EXIT_OK
    assert (out / "telemetry.csv").exists()
    assert (out / "summary.txt").exists()


def test_run_repeat_same_hash(short_scenario, capsys):
    cli.main(["run", short_scenario])
    h1 = capsys.readouterr().out.split("hash=")[1]
    cli.main(["run", short_scenario])
    h2 = capsys.readouterr().out.split("hash=")[1]
    assert h1 == h2


def test_bench_smoke(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert cli.main(["bench", "--count", "3", "--out", str(out)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "cfs:" in text and "baseline:" in text
    assert out.exists()
