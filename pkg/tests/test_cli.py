import json
import os
import subprocess
import sys

import numpy as np
import pytest

from skelgait import formats as fm
from skelgait.cli import main
from skelgait.config import PipelineConfig
from skelgait.pipeline import correct_frames, sequence_samples, simulate_fixture

SMALL = {"simulation": {"n_frames": 60}}


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("chain")
    (d / "c.json").write_text(json.dumps(SMALL))

    def run(*argv):
        rc = main([argv[0], "--config", str(d / "c.json"), *argv[1:]])
        assert rc == 0, argv
    p = lambda name: str(d / name)  # noqa: E731
    run("simulate", "--output", p("f2.jsonl"), "--clean", p("clean.jsonl"))
    run("project", "--input", p("f2.jsonl"), "--output", p("f3.jsonl"))
    run("correct", "--input", p("f3.jsonl"), "--output", p("cor.jsonl"), "--report", p("rep.json"))
    run("features", "--input", p("cor.jsonl"), "--output", p("feat.csv"))
    run("cycles", "--input", p("cor.jsonl"), "--output", p("cyc6.csv"))
    run("cycles", "--input", p("cor.jsonl"), "--output", p("cyc3.csv"), "--stat-set", "three")
    run("remove-outliers", "--input", p("feat.csv"), "--output", p("kept.csv"),
        "--mask", p("mask.csv"), "--report", p("rm.json"))
    run("train", "--input", p("feat.csv"), "--output", p("m.json"))
    run("evaluate", "--model", p("m.json"), "--input", p("feat.csv"), "--output", p("ev.json"))
    return d


def _cfg():
    return PipelineConfig.from_dict(SMALL)


class TestChain:
    def test_outputs_exist(self, chain):
        for name in ("f2.jsonl", "clean.jsonl", "f3.jsonl", "cor.jsonl", "feat.csv", "cyc6.csv",
                     "kept.csv", "mask.csv", "m.json", "ev.json", "rep.json", "rm.json"):
            assert (chain / name).stat().st_size > 0

    def test_project_matches_in_process(self, chain):
        recs, _ = fm.read_frames(chain / "f3.jsonl", fm.FRAMES_3D)
        seqs = fm.group_sequences(recs)
        sim = simulate_fixture(_cfg())
        assert len(seqs) == len(sim) == 34
        for s, ref in zip(seqs, sim):
            np.testing.assert_array_equal(s.joints(), ref.observed)

    def test_correct_matches_in_process(self, chain):
        recs, _ = fm.read_frames(chain / "cor.jsonl", fm.FRAMES_3D)
        cfg = _cfg()
        sim = simulate_fixture(cfg)
        for s in fm.group_sequences(recs)[:6]:
            ref = correct_frames(sim[s.sequence].observed, cfg, s.sequence)[0]
            np.testing.assert_array_equal(s.joints(), ref)

    def test_cycles_match_in_process(self, chain):
        recs, _ = fm.read_frames(chain / "cor.jsonl", fm.FRAMES_3D)
        table = fm.parse_feature_table(chain / "cyc6.csv", fm.CYCLES_CSV, 5)
        seq_ids = np.asarray(table.column("sequence"))
        cfg = _cfg()
        for s in fm.group_sequences(recs)[:6]:
            ref = sequence_samples(s.joints(), "none", "vector", "six", cfg).X
            np.testing.assert_array_equal(table.X[seq_ids == s.sequence], ref)

    def test_three_is_subset_of_six(self, chain):
        six = fm.parse_feature_table(chain / "cyc6.csv", fm.CYCLES_CSV, 5)
        three = fm.parse_feature_table(chain / "cyc3.csv", fm.CYCLES_CSV, 5)
        assert six.meta == three.meta
        for name in three.feature_columns:
            np.testing.assert_array_equal(three.X[:, three.feature_columns.index(name)],
                                          six.X[:, six.feature_columns.index(name)])

    def test_mask_agrees_with_kept(self, chain):
        _, rows = fm.read_table(chain / "mask.csv", fm.MASK_CSV)
        kept = fm.parse_feature_table(chain / "kept.csv", fm.FEATURES_CSV, 4)
        assert sum(int(r[-1]) for r in rows) == len(kept.meta)
        rep = json.loads((chain / "rm.json").read_text())
        assert rep["all"]["records"] == len(rows)

    def test_report(self, chain):
        ev = json.loads((chain / "ev.json").read_text())
        assert 0 <= ev["accuracy"] <= 1 and 0 <= ev["macro_f"] <= 1
        assert len(ev["per_class_f"]) >= 2

    @pytest.mark.parametrize("argv,name", [
        (["simulate", "--output", "{d}/again.jsonl"], "f2.jsonl"),
        (["correct", "--input", "{d}/f3.jsonl", "--output", "{d}/again.jsonl"], "cor.jsonl"),
        (["cycles", "--input", "{d}/cor.jsonl", "--output", "{d}/again.csv"], "cyc6.csv"),
        (["train", "--input", "{d}/feat.csv", "--output", "{d}/again.json"], "m.json"),
    ])
    def test_byte_identical_rerun(self, chain, argv, name):
        argv = [a.format(d=chain) for a in argv]
        assert main([argv[0], "--config", str(chain / "c.json"), *argv[1:]]) == 0
        out = argv[argv.index("--output") + 1]
        assert open(out, "rb").read() == (chain / name).read_bytes()

    def test_range_files(self, chain, tmp_path):
        cfg = str(chain / "c.json")
        assert main(["simulate", "--config", cfg, "--output", str(tmp_path / "r2.jsonl"),
                     "--ranges", str(tmp_path / "ranges")]) == 0
        assert main(["project", "--config", cfg, "--input", str(tmp_path / "r2.jsonl"),
                     "--output", str(tmp_path / "r3.jsonl")]) == 0
        a = np.concatenate([s.joints() for s in fm.group_sequences(
            fm.read_frames(tmp_path / "r3.jsonl", fm.FRAMES_3D)[0])])
        b = np.concatenate([s.joints() for s in fm.group_sequences(
            fm.read_frames(chain / "f3.jsonl", fm.FRAMES_3D)[0])])
        same = np.all((a == b) | (np.isnan(a) & np.isnan(b)), axis=-1)
        # only joints sharing a pixel with a nearer joint may differ
        assert same.mean() > 0.95


class TestExitCodes:
    def test_empty_input(self, tmp_path):
        inp = tmp_path / "e.jsonl"
        inp.write_text("")
        assert main(["project", "--input", str(inp), "--output", str(tmp_path / "o.jsonl")]) == 0
        assert (tmp_path / "o.jsonl").read_text().splitlines() == [fm.header(fm.FRAMES_3D)]

    def test_malformed_lines(self, tmp_path, capsys):
        rec = fm.FrameRecord(0, 1, "FB", 0, np.full((13, 2), 5.0), np.full(13, 3.0))
        inp = tmp_path / "f.jsonl"
        inp.write_text("\n".join([fm.header(fm.FRAMES_2D), fm.encode_2d(rec), "not json",
                                  '{"sequence": 0}']) + "\n")
        out = tmp_path / "o.jsonl"
        assert main(["project", "--input", str(inp), "--output", str(out)]) == 1
        err = capsys.readouterr().err
        assert f"{inp}:line 3:" in err and f"{inp}:line 4:" in err
        assert len(out.read_text().splitlines()) == 2

    def test_missing_range_file(self, tmp_path):
        rec = fm.FrameRecord(0, 1, "FB", 0, np.full((13, 2), 5.0), None,
                             {"file": "gone.npz", "index": 0})
        inp = tmp_path / "f.jsonl"
        fm.write_frames(inp, fm.FRAMES_2D, [rec])
        assert main(["project", "--input", str(inp), "--output", str(tmp_path / "o")]) == 3

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"svm": {"degree": 3}}')
        assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 3

    def test_missing_input(self, tmp_path):
        assert main(["correct", "--input", str(tmp_path / "nope"),
                     "--output", str(tmp_path / "o")]) == 1

    def test_usage(self):
        with pytest.raises(SystemExit) as exc:
            main(["features", "--features", "angles", "--input", "a", "--output", "b"])
        assert exc.value.code == 2

    def test_wrong_table_kind(self, tmp_path):
        p = tmp_path / "t.csv"
        fm.write_table(p, fm.FEATURES_CSV, ["sequence", "subject", "pattern", "frame", "q"],
                       [[0, 1, "FB", 0, 1.0]])
        assert main(["remove-outliers", "--input", str(p), "--output", str(tmp_path / "o")]) == 1

    def test_grid_needs_output(self):
        assert main(["evaluate", "--treatment", "none"]) == 3

    def test_grid_rows(self, chain, tmp_path):
        out = tmp_path / "grid.csv"
        assert main(["evaluate", "--config", str(chain / "c.json"), "--treatment", "correct",
                     "--features", "length", "--output", str(out)]) == 0
        cols, rows = fm.read_table(out, fm.GRID_CSV)
        assert cols[:5] == ["treatment", "features", "stats", "accuracy", "macro_f"]
        assert [r[2] for r in rows] == ["frame", "three", "six"]

    def test_console_script(self, tmp_path):
        env = dict(os.environ, SKELGAIT_LOG_LEVEL="INFO")
        inp = tmp_path / "e.jsonl"
        inp.write_text("")
        r = subprocess.run([sys.executable, "-m", "skelgait.cli", "features", "--input", str(inp),
                            "--output", str(tmp_path / "o.csv")], env=env, capture_output=True,
                           text=True)
        assert r.returncode == 0
        assert (tmp_path / "o.csv").read_text().startswith("# skelgait-features v1\n")
