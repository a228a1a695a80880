import pytest

from mpose_export.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_export_command(stub, tmp_path, capsys):
    stub()
    out = tmp_path / "ds"
    code, stdout, _ = run(capsys, "export", "--split", "1",
                          "--detector", "openpose", "--out", str(out))
    assert code == 0
    assert "wrote 22 samples" in stdout
    assert (out / "manifest.json").is_file()
    assert (out / "tensors.bin").is_file()


def test_nonempty_out_needs_force(stub, tmp_path, capsys):
    stub()
    out = tmp_path / "ds"
    assert run(capsys, "export", "--split", "1", "--detector", "openpose",
               "--out", str(out))[0] == 0
    code, _, err = run(capsys, "export", "--split", "1",
                       "--detector", "openpose", "--out", str(out))
    assert code == 1
    assert err.startswith("error:config:")
    code, _, _ = run(capsys, "export", "--split", "1",
                     "--detector", "openpose", "--out", str(out), "--force")
    assert code == 0


def test_unknown_detector_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "export", "--split", "1",
                       "--detector", "lidar", "--out", str(tmp_path / "x"))
    assert code == 2
    assert err.startswith("error:usage:")


def test_missing_package_reports_category(monkeypatch, tmp_path, capsys):
    import sys
    monkeypatch.setitem(sys.modules, "mpose", None)
    code, _, err = run(capsys, "export", "--split", "1",
                       "--detector", "openpose", "--out", str(tmp_path / "x"))
    assert code == 1
    assert err.startswith("error:data:")
    assert "pip install mpose" in err
