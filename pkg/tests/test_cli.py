
from leoho.cli import main


def write_spec(tmp_path, text, name="exp.spec"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


FAST_RANDOM = """
agent = random
eval_episodes = 30
scenario.J = 6
scenario.R = 6
scenario.P = 30
"""

FAST_DHO = """
agent = dho
eval_episodes = 10
train_episodes = 30
scenario.J = 4
scenario.R = 4
scenario.P = 20
scenario.N = 8
training.batch_size = 24
training.hidden = 16,16
"""


def test_run_random_agent(tmp_path, capsys):
    spec = write_spec(tmp_path, FAST_RANDOM)
    out = tmp_path / "out"
    assert main(["run", "--spec", spec, "--out", str(out)]) == 0
    assert (out / "summary.csv").exists()
    assert (out / "trace.csv").exists()
    assert "ho_success_mean" in capsys.readouterr().out


def test_run_rerun_identical(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    assert main(["run", "--spec", spec, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--spec", spec, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (
        tmp_path / "b" / "summary.csv"
    ).read_bytes()


def test_run_trains_learned_agent_and_behavior_roundtrip(tmp_path, capsys):
    spec = write_spec(tmp_path, FAST_DHO)
    out = tmp_path / "out"
    assert main(["run", "--spec", spec, "--out", str(out)]) == 0
    checkpoint = out / "checkpoint.npz"
    assert checkpoint.exists() and (out / "curve.csv").exists()

    code = main(
        [
            "behavior",
            "--spec",
            spec,
            "--checkpoint",
            str(checkpoint),
            "--episodes",
            "20",
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "request_fraction=" in printed and "no_request_fraction=" in printed


def test_eval_requires_checkpoint_for_learned_agent(tmp_path, capsys):
    spec = write_spec(tmp_path, FAST_DHO)
    assert main(["eval", "--spec", spec, "--out", str(tmp_path / "o")]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_eval_with_checkpoint(tmp_path):
    spec = write_spec(tmp_path, FAST_DHO)
    out = tmp_path / "out"
    assert main(["run", "--spec", spec, "--out", str(out)]) == 0
    code = main(
        [
            "eval",
            "--spec",
            spec,
            "--checkpoint",
            str(out / "checkpoint.npz"),
            "--out",
            str(tmp_path / "eval"),
        ]
    )
    assert code == 0
    assert (tmp_path / "eval" / "summary.csv").exists()


def test_bad_spec_exits_2(tmp_path, capsys):
    spec = write_spec(tmp_path, "scenario.bogus = 1\n")
    assert main(["run", "--spec", spec]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_missing_spec_file_exits_3(tmp_path):
    assert main(["run", "--spec", str(tmp_path / "absent.spec")]) == 3


def test_sweep_cli(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep",
            "--spec",
            spec,
            "--parameter",
            "rb_ratio",
            "--values",
            "0.5,1.0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3


def test_sweep_without_parameter_exits_2(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    assert main(["sweep", "--spec", spec, "--out", str(tmp_path / "x")]) == 2


def test_sweep_unknown_parameter_exits_2(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    code = main(
        ["sweep", "--spec", spec, "--parameter", "bogus", "--values", "1", "--out", str(tmp_path / "x")]
    )
    assert code == 2


def test_ablation_cli(tmp_path):
    spec = write_spec(tmp_path, FAST_DHO)
    out = tmp_path / "abl"
    code = main(
        [
            "ablation",
            "--spec",
            spec,
            "--mask",
            "full_local,no_time",
            "--train-episodes",
            "24",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    lines = (out / "ablation_curves.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 24


def test_cli_overrides_apply(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    out = tmp_path / "o"
    code = main(
        [
            "run",
            "--spec",
            spec,
            "--agent",
            "random",
            "--episodes",
            "12",
            "--seed",
            "77",
            "--nu",
            "1/20",
            "--rb-ratio",
            "0.5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[1].split(",")[1] == "collision-averse"  # label column
    assert summary[1].split(",")[4] == "12"  # eval_episodes column


def test_eval_random_agent_needs_no_checkpoint(tmp_path):
    spec = write_spec(tmp_path, FAST_RANDOM)
    assert main(["eval", "--spec", spec, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "summary.csv").exists()


def test_actor_and_vtrace_flags(tmp_path):
    spec = write_spec(tmp_path, FAST_DHO)
    out = tmp_path / "o"
    code = main(
        ["run", "--spec", spec, "--actors", "2", "--vtrace", "off", "--out", str(out)]
    )
    assert code == 0
    assert (out / "checkpoint.npz").exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    spec = write_spec(tmp_path, FAST_RANDOM)
    monkeypatch.setenv("LEOHO_OUTPUT_DIR", str(tmp_path / "env_out"))
    assert main(["run", "--spec", spec]) == 0
    assert (tmp_path / "env_out" / "summary.csv").exists()


def test_case_flag(tmp_path):
    spec = write_spec(tmp_path, "agent = random\neval_episodes = 15\n")
    out = tmp_path / "case"
    assert main(["run", "--spec", spec, "--case", "case2", "--out", str(out)]) == 0
    # Case 2 caps success at 0.6: 3 + 3 blocks for 10 terminals.
    row = (out / "summary.csv").read_text().splitlines()[1].split(",")
    header = (out / "summary.csv").read_text().splitlines()[0].split(",")
    h_mean = float(row[header.index("ho_success_mean")])
    assert h_mean <= 0.6 + 1e-9
