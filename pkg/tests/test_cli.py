"""Command-line interface: subcommands, config overlay, exit codes."""

from __future__ import annotations

import numpy as np
import pytest

from so3diffusion import cli, sampleset


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_data_binary_and_text(tmp_path, capsys):
    out = tmp_path / "u.so3"
    assert run("gen-data", "--target", "uniform", "--n", 50, "--seed", 3, "--out", out) == 0
    s = sampleset.load_sample_set(out)
    assert len(s) == 50 and s.label == "uniform" and s.seed == 3
    txt = tmp_path / "u.tsv"
    assert run("gen-data", "--target", "uniform", "--n", 20, "--seed", 3, "--out", txt, "--text") == 0
    t = sampleset.load_sample_set_text(txt)
    assert len(t) == 20


def test_gen_data_determinism(tmp_path):
    a, b = tmp_path / "a.so3", tmp_path / "b.so3"
    run("gen-data", "--target", "four-gaussians", "--n", 32, "--seed", 9, "--out", a)
    run("gen-data", "--target", "four-gaussians", "--n", 32, "--seed", 9, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_unknown_target_exits_2(tmp_path, capsys):
    code = run("gen-data", "--target", "zebra", "--n", 5, "--out", tmp_path / "x.so3")
    assert code == 2
    assert "unknown target" in capsys.readouterr().err


def test_missing_required_exits_2(tmp_path, capsys):
    assert run("gen-data", "--n", "5", "--out", tmp_path / "x.so3") == 2
    assert "--target" in capsys.readouterr().err


def test_config_file_supplies_options(tmp_path):
    cfg = tmp_path / "run.ini"
    out = tmp_path / "c.so3"
    cfg.write_text(f"[run]\ntarget = uniform\nn = 11\nseed = 4\nout = {out}\n")
    assert run("gen-data", "--config", cfg) == 0
    assert len(sampleset.load_sample_set(out)) == 11


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "run.ini"
    out = tmp_path / "c.so3"
    cfg.write_text(f"[run]\ntarget = uniform\nn = 11\nseed = 4\nout = {out}\n")
    assert run("gen-data", "--config", cfg, "--n", 7) == 0
    assert len(sampleset.load_sample_set(out)) == 7


def test_config_bool_and_bad_values(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    out = tmp_path / "c.tsv"
    cfg.write_text(f"[run]\ntarget = uniform\nn = 6\nout = {out}\ntext = true\n")
    assert run("gen-data", "--config", cfg) == 0
    sampleset.load_sample_set_text(out)  # text format honored
    cfg.write_text(f"[run]\ntarget = uniform\nn = 6\nout = {out}\ntext = maybe\n")
    assert run("gen-data", "--config", cfg) == 2
    cfg.write_text("[wrong]\nx = 1\n")
    assert run("gen-data", "--config", cfg) == 2
    assert run("gen-data", "--config", tmp_path / "missing.ini") == 2


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared end-to-end artifacts: data, trained sgm + ddpm, samples."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "fg.so3"
    assert run("gen-data", "--target", "four-gaussians", "--n", 400, "--seed", 1, "--out", data) == 0

    sgm_ck = root / "sgm.ck"
    code = run(
        "train", "--model", "sgm", "--data", data, "--out", sgm_ck,
        "--iterations", 12, "--batch-size", 16, "--hidden", "8,8",
        "--seed", 2, "--log-every", 4, "--loss-out", root / "sgm_loss.tsv",
    )
    assert code == 0

    ddpm_ck = root / "ddpm.ck"
    code = run(
        "train", "--model", "ddpm", "--data", data, "--out", ddpm_ck,
        "--iterations", 10, "--batch-size", 16, "--hidden", "8,8",
        "--n-timesteps", 8, "--seed", 2, "--log-every", 5,
    )
    assert code == 0
    return {"root": root, "data": data, "sgm": sgm_ck, "ddpm": ddpm_ck}


def test_train_writes_loss_curve(workspace):
    lines = (workspace["root"] / "sgm_loss.tsv").read_text().strip().splitlines()
    assert lines[0] == "# step\tloss"
    steps = [int(l.split("\t")[0]) for l in lines[1:]]
    assert steps[0] == 1 and steps[-1] == 12
    for l in lines[1:]:
        float(l.split("\t")[1])


def test_sample_from_both_kinds(workspace, tmp_path):
    for kind, extra in (("sgm", ["--steps", 4]), ("ddpm", [])):
        out = tmp_path / f"{kind}.so3"
        code = run("sample", "--checkpoint", workspace[kind], "--n", 30, "--seed", 5, "--out", out, *extra)
        assert code == 0
        s = sampleset.load_sample_set(out)
        assert len(s) == 30
        R = s.rotations
        assert np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max() < 1e-9


def test_sample_determinism(workspace, tmp_path):
    a, b = tmp_path / "a.so3", tmp_path / "b.so3"
    for p in (a, b):
        run("sample", "--checkpoint", workspace["sgm"], "--n", 10, "--seed", 7, "--steps", 3, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_sample_conditional_context_value(tmp_path, capsys):
    data = tmp_path / "tb.so3"
    assert run("gen-data", "--target", "two-blobs-cond", "--n", 64, "--seed", 1, "--out", data) == 0
    ck = tmp_path / "cond.ck"
    code = run(
        "train", "--model", "sgm", "--data", data, "--out", ck,
        "--iterations", 6, "--batch-size", 16, "--hidden", "8,8", "--seed", 2,
    )
    assert code == 0
    capsys.readouterr()

    out = tmp_path / "cond.so3"
    assert run("sample", "--checkpoint", ck, "--n", 12, "--seed", 5, "--steps", 3, "--out", out) == 2
    assert "--context-value" in capsys.readouterr().err
    code = run(
        "sample", "--checkpoint", ck, "--n", 12, "--seed", 5, "--steps", 3,
        "--out", out, "--context-value", "0.5,0.5",
    )
    assert code == 2 and "width" in capsys.readouterr().err

    code = run(
        "sample", "--checkpoint", ck, "--n", 12, "--seed", 5, "--steps", 3,
        "--out", out, "--context-value", "1",
    )
    assert code == 0
    s = sampleset.load_sample_set(out)
    assert s.contexts is not None and s.contexts.shape == (12, 1)
    assert np.all(s.contexts == 1.0)


def test_train_resume_continues(workspace, tmp_path, capsys):
    ck2 = tmp_path / "resumed.ck"
    code = run(
        "train", "--model", "sgm", "--data", workspace["data"], "--out", ck2,
        "--resume", workspace["sgm"], "--iterations", 5, "--batch-size", 16, "--seed", 3,
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "step=17" in out  # 12 prior + 5 new


def test_resume_width_mismatch_exits_2(workspace, tmp_path, capsys):
    code = run(
        "train", "--model", "sgm", "--data", workspace["data"], "--out", tmp_path / "x.ck",
        "--resume", workspace["sgm"], "--hidden", "16,16",
        "--iterations", 2, "--batch-size", 8, "--seed", 3,
    )
    assert code == 2
    assert "hidden" in capsys.readouterr().err


def test_eval_c2st_output(workspace, tmp_path, capsys):
    a = tmp_path / "a.so3"
    b = tmp_path / "b.so3"
    run("gen-data", "--target", "uniform", "--n", 600, "--seed", 11, "--out", a)
    run("gen-data", "--target", "uniform", "--n", 600, "--seed", 12, "--out", b)
    report = tmp_path / "r.txt"
    code = run("eval-c2st", "--a", a, "--b", b, "--folds", 2, "--seed", 1, "--out", report)
    assert code == 0
    out = capsys.readouterr().out
    assert "c2st accuracy=" in out and "folds=2" in out
    assert "accuracy=" in report.read_text()


def test_eval_c2st_insufficient_exits_3(workspace, tmp_path, capsys):
    a = tmp_path / "a.so3"
    run("gen-data", "--target", "uniform", "--n", 40, "--seed", 11, "--out", a)
    assert run("eval-c2st", "--a", a, "--b", a, "--seed", 1) == 3


def test_eval_ed_on_text_cloud(tmp_path, capsys):
    rng = np.random.default_rng(13)
    cloud = tmp_path / "cloud.txt"
    rows = []
    for _ in range(150):
        p = rng.normal(0, 1, 3)
        ax = rng.normal(0, 1, 3)
        ax /= np.linalg.norm(ax)
        rows.append(" ".join(f"{v:.6f}" for v in (*p, *ax)))
    cloud.write_text("\n".join(rows) + "\n")
    out = tmp_path / "ed.tsv"
    code = run("eval-ed", "--cloud", cloud, "--r-max", 3, "--n-bins", 3, "--jackknife", 4, "--out", out)
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "# r_lo\tr_hi\tomega\terr"
    assert len(lines) == 4
    printed = capsys.readouterr().out
    assert "omega" in printed


def test_eval_ed_explicit_bins(tmp_path):
    rng = np.random.default_rng(14)
    cloud = tmp_path / "cloud.txt"
    rows = []
    for _ in range(80):
        p = rng.normal(0, 1, 3)
        q = rng.normal(0, 1, 4)
        q /= np.linalg.norm(q)
        rows.append(" ".join(f"{v:.6f}" for v in (*p, *q)))
    cloud.write_text("\n".join(rows) + "\n")
    assert run("eval-ed", "--cloud", cloud, "--bins", "0,1,2", "--jackknife", 4) == 0
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 3\n")
    assert run("eval-ed", "--cloud", bad, "--bins", "0,1") == 2


def test_plot_svg(workspace, tmp_path):
    svg = tmp_path / "p.svg"
    code = run("plot", "--data", workspace["data"], "--out", svg, "--title", "demo")
    assert code == 0
    body = svg.read_text()
    assert body.startswith("<?xml") and body.rstrip().endswith("</svg>")
    assert "demo" in body and "<circle" in body


def test_io_error_exits_3(tmp_path):
    assert run("sample", "--checkpoint", tmp_path / "missing.ck", "--n", 3, "--out", tmp_path / "x.so3") == 3
    assert run("plot", "--data", tmp_path / "missing.so3", "--out", tmp_path / "x.svg") == 3
