from spikedistill.cli import main

from conftest import tiny_config


def test_gradcheck_subset_passes(capsys):
    assert main(["gradcheck", "--seeds", "2", "--only", "matmul", "bkd_loss"]) == 0
    assert "2/2 primitives" in capsys.readouterr().out


def test_eval_missing_checkpoint(tmp_path, capsys):
    missing = tmp_path / "gone.ckpt"
    assert main(["eval", "--ckpt", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["eval", "--bogus"]) == 2


def test_no_command_is_usage_error():
    assert main([]) == 2


def test_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nepochs = 0\n")
    assert main(["train-teacher", "--config", str(cfg)]) == 4


def test_train_eval_analyze(tiny_root, tiny_teacher, tmp_path, capsys):
    cfg = tiny_config(tiny_root, tmp_path / "s", run={"epochs": 1})
    path = tmp_path / "student.ini"
    cfg.save(path)
    out = tmp_path / "s"
    assert main(["--threads", "1", "train-student", "--config", str(path), "--teacher", str(tiny_teacher),
                 "--mode", "md", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "best.ckpt"), "--split", "test"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("epoch:1\tsplit:test")
    assert main(["analyze", "--ckpt", str(out / "best.ckpt"), "--ann-flops", "4.12e9"]) == 0
    text = capsys.readouterr().out
    assert "mJ" in text and "energy_mj:18.95" in text and "rate\tlayer:if2" in text


def test_analyze_teacher(tiny_teacher, capsys):
    assert main(["analyze", "--ckpt", str(tiny_teacher)]) == 0
    assert "teacher_ann" in capsys.readouterr().out
