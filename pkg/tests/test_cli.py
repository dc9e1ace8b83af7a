import json

import pytest

from crembed.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, EXIT_VIOLATION, main


def _config(tmp_path, **body):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(body))
    return str(path)


def test_certify_writes_verdict_and_schedule(tmp_path):
    out = tmp_path / "out"
    assert main(["certify", "--steps", "200", "--output-dir", str(out)]) == EXIT_PASS
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["admissible"] and verdict["search"]["log_t0"] < 0
    assert (out / "schedule.csv").read_text().startswith("j,")


def test_certify_inadmissible_kappa(tmp_path):
    cfg = _config(tmp_path, schedule={"kappa": 1.3})
    assert main(["certify", "--config", cfg, "--output-dir", str(tmp_path)]) == EXIT_VIOLATION
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert "kappa < 5/4" in verdict["violations"]


def test_certify_large_t0_fails(tmp_path):
    cfg = _config(tmp_path, schedule={"t0": 0.9}, J=50)
    assert main(["certify", "--config", cfg, "--output-dir", str(tmp_path)]) == EXIT_FAIL
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert not verdict["certified"]
    assert {"j": 0, "condition": "a_j < 1/2"} in verdict["failures"]


def test_usage_errors(tmp_path):
    assert main(["certify", "--config", str(tmp_path / "missing.json"), "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["verify-lemma", "99.9", "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["dilation-study", "--rhos", "2", "--output-dir", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.parametrize("lemma", ["6.1", "11.3"])
def test_verify_lemma_fast_ids(tmp_path, lemma):
    assert main(["verify-lemma", lemma, "--output-dir", str(tmp_path)]) == EXIT_PASS
    tag = lemma.replace(".", "_")
    assert json.loads((tmp_path / f"verify_{tag}.json").read_text())["passed"]


def test_verify_lemma_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["verify-lemma", "4.1", "--seed", "3", "--output-dir", str(d)]) == EXIT_PASS
    assert (a / "verify_4_1.csv").read_bytes() == (b / "verify_4_1.csv").read_bytes()


def test_dilation_study(tmp_path):
    assert main(["dilation-study", "--resolution", "17", "--output-dir", str(tmp_path)]) == EXIT_PASS
    slopes = json.loads((tmp_path / "dilation_slopes.json").read_text())
    assert slopes["error"] == pytest.approx(-1.0, abs=0.2)
    assert (tmp_path / "dilation.csv").read_text().count("\n") == 5


def test_generate_structure_roundtrip(tmp_path):
    assert main(["generate-structure", "--structure", "cubic-bump", "--dim", "3", "--output-dir",
                 str(tmp_path)]) == EXIT_PASS
    (path,) = tmp_path.glob("structure_*.json")
    out = tmp_path / "again"
    assert main(["dilation-study", "--structure", str(path), "--resolution", "17", "--output-dir", str(out)]) == 0


def test_iterate_quadric(tmp_path):
    args = ["iterate", "--structure", "quadric", "--dim", "3", "--resolution", "17", "--max-steps", "2",
            "--output-dir", str(tmp_path)]
    assert main(args) == EXIT_PASS
    lines = (tmp_path / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["steps"] == 2 and summary["halted"] is None
