import json
import subprocess
import sys

import pytest

from leakbench.cli import main
from leakbench.report import load_report, render_svg, svg_values

FAST_FT = {"learning_rate": 0.01, "max_epochs": 6, "validation_every_n_samples": 160, "patience": 3}


def write(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data_dir(tmp_path, capsys):
    cfg = write(tmp_path / "synth.json", {"synth": {"n_groups": 30, "items_per_group": 8, "seed": 4}})
    code, out, _ = run_cli(capsys, "gen", "--config", cfg, "--out", str(tmp_path / "data"))
    assert code == 0 and json.loads(out)["items"] == 240
    return tmp_path / "data"


def matrix_config(tmp_path):
    cells = [
        {"ft_mode": ft, "test_mode": test, "pooling": "avg", "finetune_schedule": FAST_FT}
        for ft, test in (("leaky", "tainted"), ("clean", "independent"))
    ]
    return write(tmp_path / "matrix.json", {"data": "data", "replicates": 2, "base_seed": 3, "protocols": cells})


def test_gen_writes_manifest_features_and_run_manifest(data_dir):
    manifest = json.loads((data_dir / "run_manifest.json").read_text())
    assert set(manifest["files"]) == {"manifest.csv", "features.lbfs"}
    assert manifest["seeds"] == {"seed": 4} and manifest["version"]


def test_split_then_audit_reports_group_leak(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "split.json", {"data": "data", "protocol": "leaky_frame_pool", "seed": 1})
    code, out, _ = run_cli(capsys, "split", "--config", cfg, "--out", str(tmp_path / "splits"))
    assert code == 0
    plan = json.loads(out)["plans"][0]
    code, out, _ = run_cli(capsys, "audit", "--plan", plan, "--data", str(data_dir))
    assert code == 0 and json.loads(out)["verdict"] == "group-leak"


def test_split_kfold_and_audit_with_finetune_plan(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "k.json", {"data": "data", "protocol": "kfold", "k": 3, "replicates": 2})
    code, out, _ = run_cli(capsys, "split", "--config", cfg, "--out", str(tmp_path / "folds"))
    plans = json.loads(out)["plans"]
    assert code == 0 and len(plans) == 6
    ft = write(tmp_path / "ft.json", {"data": "data", "protocol": "clean_frame_sample", "seed": 2})
    run_cli(capsys, "split", "--config", ft, "--out", str(tmp_path / "ft"))
    code, out, _ = run_cli(
        capsys, "audit", "--plan", plans[0], "--data", str(data_dir), "--finetune-plan", str(tmp_path / "ft" / "plan.json")
    )
    assert code == 0 and json.loads(out)["verdict"] == "tainted-test"


def test_run_twice_gives_identical_reports_and_svg_matches(tmp_path, data_dir, capsys):
    cfg = matrix_config(tmp_path)
    for out_dir in ("r1", "r2"):
        code, _, _ = run_cli(capsys, "run", "--config", cfg, "--out", str(tmp_path / out_dir))
        assert code == 0
    first = (tmp_path / "r1" / "eval_report.json").read_bytes()
    assert first == (tmp_path / "r2" / "eval_report.json").read_bytes()

    svg = tmp_path / "chart.svg"
    code, out, _ = run_cli(capsys, "report", "--in", str(tmp_path / "r1"), "--svg", str(svg))
    assert code == 0 and len(out.strip().splitlines()) == 2
    reports = load_report(tmp_path / "r1")
    bars = svg_values(svg.read_text())
    assert len(bars) == 4
    for report in reports:
        for metric in ("plcc", "srocc"):
            bar = next(b for b in bars if b["cell"] == report["protocol"]["label"] and b["metric"] == metric)
            assert bar["mean"] == report["summary"][f"{metric}_mean"]
            assert bar["std"] == report["summary"][f"{metric}_std"]
    for report in reports:
        assert len(report["per_replicate"]) == 2
        for rep in report["per_replicate"]:
            assert {"plcc", "srocc", "audit", "label_access_log_digest"} <= set(rep)


def test_svg_differs_only_in_version_comment():
    reports = [
        {"protocol": {"tag": "a#1", "label": "a"}, "summary": {"plcc_mean": 0.5, "plcc_std": 0.1, "srocc_mean": 0.25, "srocc_std": 0.0}}
    ]
    a = render_svg(reports)
    assert a == render_svg(reports)
    assert "<!-- leakbench" in a


def test_seed_flag_overrides_config(tmp_path, data_dir, capsys):
    cfg = matrix_config(tmp_path)
    run_cli(capsys, "run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "99")
    manifest = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert manifest["seeds"]["base_seed"] == 99


def test_degraded_experiment_via_cli(tmp_path, capsys):
    cfg = write(
        tmp_path / "deg.json",
        {
            "experiment": "degraded-split",
            "replicates": 1,
            "synth": {
                "n_groups": 10, "items_per_group": 25, "structure": "degraded-variants",
                "n_distortions": 5, "n_levels": 5,
            },
        },
    )
    code, out, _ = run_cli(capsys, "run", "--config", cfg, "--out", str(tmp_path / "deg"))
    assert code == 0 and json.loads(out)["cells"] == 2


def test_exit_codes(tmp_path, data_dir, capsys):
    code, _, err = run_cli(capsys, "run", "--config", str(tmp_path / "missing.json"))
    assert code == 2 and err.startswith("error: ConfigError:") and len(err.strip().splitlines()) == 1

    bad = write(tmp_path / "bad.json", {"data": "data", "protocols": [{"ft_mode": "none", "test_mode": "tainted"}]})
    code, _, err = run_cli(capsys, "run", "--config", bad)
    assert code == 4 and err.startswith("error: ProtocolError:")

    code, _, err = run_cli(capsys, "audit", "--plan", str(tmp_path / "nope.json"), "--data", str(data_dir))
    assert code == 3 and err.startswith("error: DataError:")

    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "manifest.csv").write_text("item_id,group_id,seq_index,mos\na,g,0,9.0\n")
    code, _, err = run_cli(capsys, "audit", "--plan", str(tmp_path / "nope.json"), "--data", str(tmp_path / "broken"))
    assert code == 3

    code, _, err = run_cli(capsys, "report", "--in", str(tmp_path / "nowhere"))
    assert code == 3

    unknown = write(tmp_path / "u.json", {"data": "data", "protocol": "magic"})
    code, _, err = run_cli(capsys, "split", "--config", unknown)
    assert code == 2

    code, _, err = run_cli(capsys, "run", "--config", bad, "--jobs", "0")
    assert code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "leakbench", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("leakbench ")
    proc = subprocess.run(
        [sys.executable, "-m", "leakbench", "report", "--in", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 3 and proc.stderr.startswith("error: DataError:")
