import os

import pytest

from cipherfed.cli import main

CFG_TEXT = """
n = 3
T = 2
model_dim = 2
zeta = 256
L = 6
kappa = 100
sigma = 80
eta = 0.05
B = 8
E = 2
b_t = 36
seed = 7
offset = 4
rewards = true
allow_test_sizes = true
samples = 10
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CFG_TEXT)
    return str(path)


def test_sdiv_prints_matching_oracle(capsys):
    assert main(["sdiv", "--x", "7", "--y", "2", "--L", "2"]) == 0
    out = capsys.readouterr().out
    assert "350 = 350" in out
    assert "# cipherfed sdiv --x 7 --y 2 --L 2" in out  # reproducible line


def test_smul_prints_matching_oracle(capsys):
    assert main(["smul", "--x", "-3", "--y", "4"]) == 0
    assert "-12 = -12" in capsys.readouterr().out


def test_smul_rejects_out_of_range(capsys):
    assert main(["smul", "--x", str(2 ** 40), "--y", "1"]) == 1


def test_avg_round(capsys):
    assert main(["avg", "--n", "3", "--dim", "2", "--kappa", "48"]) == 0
    out = capsys.readouterr().out
    assert "decrypted" in out and "oracle" in out


def test_keygen_writes_material(tmp_path, capsys):
    out_dir = str(tmp_path / "keys")
    assert main(["keygen", "--zeta", "128", "--out", out_dir, "--seed", "5",
                 "--allow-test-sizes"]) == 0
    names = sorted(os.listdir(out_dir))
    assert "public_key.bin" in names and "private_key.bin" in names
    assert sum(name.startswith("share_") for name in names) == 4


def test_keygen_requires_flag_for_small_sizes(capsys):
    assert main(["keygen", "--zeta", "128", "--out", "/tmp/x"]) == 1


def test_run_writes_metrics(config_file, tmp_path, capsys):
    metrics = str(tmp_path / "metrics.jsonl")
    assert main(["run", "--config", config_file, "--metrics-out", metrics]) == 0
    with open(metrics, "rb") as handle:
        lines = handle.read().splitlines()
    assert any(b'"kind": "round"' in line for line in lines)
    assert any(b'"kind": "final"' in line for line in lines)


def test_run_missing_config_exits_one(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.cfg"),
                 "--metrics-out", str(tmp_path / "m.jsonl")])
    assert code == 1
    assert "configuration error" in capsys.readouterr().err


def test_rewards_command(config_file, capsys):
    assert main(["rewards", "--config", config_file]) == 0
    out = capsys.readouterr().out
    assert "mu_decrypted" in out
    assert out.count("\np1\t") == 0  # rows are round\tparticipant\t...
    assert "\tp1\t" in out


def test_rewards_requires_rewards_enabled(tmp_path, capsys):
    path = tmp_path / "plain.cfg"
    path.write_text(CFG_TEXT.replace("rewards = true", "rewards = false"))
    assert main(["rewards", "--config", str(path)]) == 1


def test_bench_small(capsys):
    assert main(["bench", "--zeta", "128", "--iters", "2"]) == 0
    out = capsys.readouterr().out
    assert "powmod" in out and "secure_div" in out
