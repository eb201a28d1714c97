import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from bladca import __version__, cli, dca
from bladca import excitation as ex
from bladca import netmodel as nm
from bladca import solver as so

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

STAGED = """\
view: siso
blocks:
  - {name: b1, group: stage1/b1, kind: static_polynomial, coeffs: [1.0, 0.1, 0.05]}
  - {name: b2, group: stage1/b2, kind: static_polynomial, coeffs: [-0.8, 0.0, 0.1]}
  - {name: b3, group: stage2/b3, kind: static_polynomial, coeffs: [1.2, 0.05]}
maps:
  input: [1, 0, 0]
  feedback:
    - [0, 0, 0]
    - [-1, 0, 0]
    - [0, -1, 0]
  output: [0, 0, 1]
"""

SPEC = "f0_hz: 1\nfmin_hz: 1\nfmax_hz: 12\nkind: full\nrms: 0.4\nseed: 3\n"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
    (tmp_path / "net.yaml").write_text(STAGED)
    (tmp_path / "spec.yaml").write_text(SPEC)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_design_example1(work, capsys):
    assert run("design", CONFIGS / "example1_spec.yaml", "-o", "d.yaml") == 0
    assert "334 excited lines, 166 detection lines" in capsys.readouterr().out
    spec = ex.spec_from_resolved(yaml.safe_load(Path("d.yaml").read_text()))
    assert spec.n_lines + len(spec.detection_bins) == 500


def test_design_is_deterministic(work):
    run("design", "spec.yaml", "-o", "a.yaml")
    run("design", "spec.yaml", "-o", "b.yaml")
    assert Path("a.yaml").read_bytes() == Path("b.yaml").read_bytes()
    man = json.loads(Path("pipeline.json").read_text())
    assert man["version"] == __version__
    hashes = [list(e["outputs"].values())[0] for e in man["stages"]]
    assert hashes[0] == hashes[1]


def test_missing_f0_diagnostic_text(work, capsys):
    Path("bad.yaml").write_text("fmin_hz: 1\nfmax_hz: 3\nrms: 1\n")
    run("design", "bad.yaml", "-o", "x.yaml")
    err = capsys.readouterr().err
    assert "f0_hz" in err and ":1:" in err


def test_zero_realizations_is_a_usage_error(work):
    with pytest.raises(SystemExit) as info:
        run("simulate", "net.yaml", "spec.yaml", "-M", 0, "-o", "rec")
    assert info.value.code == 2


def test_parse_errors_exit_2(work, capsys):
    Path("broken.yaml").write_text(STAGED.replace("static_polynomial, coeffs: [1.2, 0.05]", "static_tan"))
    assert run("simulate", "broken.yaml", "spec.yaml", "-M", 4, "-o", "rec") == 2
    assert "unknown block kind" in capsys.readouterr().err


def test_non_convergence_exits_3(work):
    Path("fb.yaml").write_text(
        "view: siso\nblocks:\n  - {kind: static_polynomial, coeffs: [1, 0, 3]}\n"
        "maps: {input: [1], feedback: [[3]], output: [1]}\n")
    Path("loud.yaml").write_text("f0_hz: 1\nfmax_hz: 5\nrms: 3\n")
    assert run("simulate", "fb.yaml", "loud.yaml", "-M", 1, "-o", "rec", "--max-iter", 20) == 3


def test_budget_non_attainment_exits_4(work, capsys):
    code = run("simulate", "net.yaml", "spec.yaml", "-M", 16, "-o", "rec", "--target-sigma", 1e-9, "--batch", 8)
    assert code == 4
    assert "NOT attained" in capsys.readouterr().out
    assert so.RecordSet.load("rec").M == 16


def test_pipeline_matches_library_run(work):
    assert run("design", "spec.yaml", "-o", "d.yaml") == 0
    assert run("simulate", "net.yaml", "d.yaml", "-M", 12, "-o", "rec") == 0
    assert run("estimate", "rec", "net.yaml", "-o", "est.json") == 0
    assert run("dca", "rec", "net.yaml", "-o", "rep.json", "--estimates", "est.json") == 0
    rep = dca.ContributionReport.load("rep.json")
    net = nm.parse_network(STAGED)
    rs = so.run_experiment(net, ex.load_spec("spec.yaml"), M=12)
    ref = cli.run_dca(rs, net)
    assert np.allclose(rep.direct, ref.direct, rtol=1e-12, atol=0)
    assert np.allclose(rep.correlation, ref.correlation, rtol=1e-12, atol=1e-300)
    assert np.allclose(rep.total, ref.total, rtol=1e-12)


def test_stage_outputs_are_byte_identical_on_rerun(work):
    run("simulate", "net.yaml", "spec.yaml", "-M", 6, "-o", "rec", "--threads", 2)
    run("dca", "rec", "net.yaml", "-o", "rep1.json")
    first = Path("rec/signals.npy").read_bytes()
    shutil.rmtree("rec")
    run("simulate", "net.yaml", "spec.yaml", "-M", 6, "-o", "rec")
    run("dca", "rec", "net.yaml", "-o", "rep2.json")
    assert Path("rec/signals.npy").read_bytes() == first
    assert Path("rep1.json").read_bytes() == Path("rep2.json").read_bytes()


def test_grouping_flags(work, capsys):
    run("simulate", "net.yaml", "spec.yaml", "-M", 8, "-o", "rec")
    run("dca", "rec", "net.yaml", "-o", "rep.json")
    capsys.readouterr()
    assert run("report", "rep.json", "--group-by", "stage", "--format", "csv") == 0
    head = capsys.readouterr().out.splitlines()[0]
    assert head == 'bin,f_hz,total,C[stage1],C[stage2],"C[stage2,stage1]"'
    assert run("report", "rep.json", "--group-by", "stage", "--hierarchy", "stage1:split", "--format", "csv") == 0
    head = capsys.readouterr().out.splitlines()[0]
    assert "C[stage1/b1]" in head and "C[stage1/b2]" in head and "C[stage2]" in head
    full = dca.ContributionReport.load("rep.json")
    run("report", "rep.json", "--group-by", "stage", "--format", "csv", "-o", "s.csv")
    rows = np.loadtxt("s.csv", delimiter=",", skiprows=1)
    assert np.allclose(rows[:, 3:].sum(1), full.total, rtol=1e-9)


def test_percent_view(work, capsys):
    run("simulate", "net.yaml", "spec.yaml", "-M", 8, "-o", "rec")
    capsys.readouterr()
    run("dca", "rec", "net.yaml", "-o", "rep.json", "--format", "txt", "--percent")
    out = capsys.readouterr().out
    assert out.startswith("bin 1") and "%" in out


def test_twoport_tickler_pipeline(work, capsys):
    net, spec, tick = CONFIGS / "twoport_cubic.yaml", CONFIGS / "twoport_spec.yaml", CONFIGS / "tickler.yaml"
    assert run("simulate", net, spec, "-M", 8, "-o", "rec", "--tickler", tick) == 0
    rs = so.RecordSet.load("rec")
    assert set(rs.sources) == {"R", "T1"}
    assert run("estimate", "rec", net, "-o", "est.json") == 0
    assert run("dca", "rec", net, "-o", "rep.json") == 0
    assert run("validate", "rec", net, "-o", "val.json") == 0
    doc = json.loads(Path("val.json").read_text())
    assert len(doc["valid"]) == 20


def test_config_from_environment(work, monkeypatch):
    Path("cfg.yaml").write_text("solver:\n  max_iter: 1\n")
    monkeypatch.setenv(cli.CONFIG_ENV, "cfg.yaml")
    Path("fb.yaml").write_text(
        "view: siso\nblocks:\n  - {kind: static_polynomial, coeffs: [1, 0, 0.1]}\n"
        "maps: {input: [1], feedback: [[0.5]], output: [1]}\n")
    assert run("simulate", "fb.yaml", "spec.yaml", "-M", 1, "-o", "rec") == 3
    assert run("simulate", "fb.yaml", "spec.yaml", "-M", 1, "-o", "rec", "--max-iter", 100) == 0


def test_time_mode_flags(work):
    assert run("simulate", "net.yaml", "spec.yaml", "-M", 2, "-o", "rec", "--mode", "time", "--ts", 1 / 128,
               "--periods", 3) == 0
    assert so.RecordSet.load("rec").grid.warp_ts == 1 / 128
