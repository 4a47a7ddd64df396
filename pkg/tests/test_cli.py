import csv
import json
import subprocess
import sys

import pytest

from varconvex.cli import main, validate


def run(tmp_path, *args, **kw):
    out = tmp_path / "out"
    code = main([*args, "--output-dir", str(out)], **kw)
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestEnvelope:
    def test_ladder_csv(self, tmp_path):
        code, out = run(tmp_path, "envelope", "--function", "quadratic1d", "--x", "2",
                        "--lambdas", "0.5,1,2")
        assert code == 0
        rows = read_csv(out / "envelope.csv")
        assert rows[0] == ["lambda", "value"]
        vals = {float(r[0]): float(r[1]) for r in rows[1:]}
        assert vals[1.0] == pytest.approx(1.0, abs=1e-12)
        raw = (out / "envelope.csv").read_bytes()
        assert raw.count(b"\r\n") == 4
        validate(json.loads((out / "envelope.json").read_text()), "envelope")

    def test_unbounded(self, tmp_path):
        code, out = run(tmp_path, "envelope", "--function", "neg_quadratic", "--x", "0",
                        "--lambdas", "2")
        assert code == 2
        rec = json.loads((out / "envelope.json").read_text())
        assert rec["unbounded"] and rec["results"][0]["value"] == "unbounded"

    def test_unknown_function(self, tmp_path, capsys):
        code, out = run(tmp_path, "envelope", "--function", "nope")
        assert code == 1
        assert "unknown function" in capsys.readouterr().err
        assert not out.exists()

    def test_dimension_mismatch(self, tmp_path):
        code, _ = run(tmp_path, "envelope", "--function", "quad2d", "--x", "1")
        assert code == 1

    def test_prox(self, tmp_path):
        code, out = run(tmp_path, "prox", "--function", "abs", "--x", "3", "--lambdas", "1")
        assert code == 0
        rows = read_csv(out / "prox.csv")
        assert rows[0] == ["lambda", "index", "x0"]
        assert float(rows[1][2]) == pytest.approx(2.0, abs=1e-7)

    def test_localized_tilted(self, tmp_path):
        code, out = run(tmp_path, "envelope", "--function", "cubic", "--x", "0", "--xstar", "0",
                        "--lambdas", "0.2", "--localize", "--search-radius", "1")
        assert code == 0


class TestConfig:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"function": "quadratic1d", "point": {"x": [2.0]},
                                   "lambda_ladder": [1.0], "seed": 3}))
        code, out = run(tmp_path, "envelope", "--config", str(cfg), "--x", "4")
        assert code == 0
        rec = json.loads((out / "envelope.json").read_text())
        assert rec["x"] == [4.0]
        assert rec["results"][0]["value"] == pytest.approx(4.0, abs=1e-12)

    def test_invalid_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"function": "abs", "space": {"p": 0.5}}))
        code, _ = run(tmp_path, "envelope", "--config", str(cfg))
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"function": "abs", "colour": "blue"}))
        assert run(tmp_path, "envelope", "--config", str(cfg))[0] == 1

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path, "envelope", "--config", str(tmp_path / "none.json"))[0] == 1

    def test_bad_lambda(self, tmp_path):
        assert run(tmp_path, "envelope", "--function", "abs", "--lambdas", "-1")[0] == 1

    def test_usage_errors_exit_one(self):
        assert main(["bogus"]) == 1
        assert main([]) == 1


class TestCertify:
    def test_wshape(self, tmp_path):
        code, out = run(tmp_path, "certify", "--function", "wshape")
        assert code == 0
        m = json.loads((out / "matrix.json").read_text())
        validate(m, "matrix")
        assert {r["verdict"] for r in m["rows"].values()} == {"Holds"}
        assert "✓" in (out / "matrix.md").read_text()

    def test_cubic(self, tmp_path):
        code, out = run(tmp_path, "certify", "--function", "cubic", "--x", "0", "--xstar", "0")
        assert code == 0
        m = json.loads((out / "matrix.json").read_text())
        assert m["consistent"]
        for row in ("VC-def", "Thm3.4-ii", "envelope-convexity"):
            assert m["rows"][row]["verdict"] == "FailsWithWitness"

    def test_corrupted_sample_exits_three(self, tmp_path):
        def hook(f, w, s):
            a = 0.4 * w.radius_x
            return s.with_entries([[a]], [[-a]], [f.value([a])])

        code, out = run(tmp_path, "certify", "--function", "quadratic1d", sample_hook=hook)
        assert code == 3
        assert json.loads((out / "matrix.json").read_text())["consistent"] is False

    def test_not_a_regular_subgradient(self, tmp_path):
        assert run(tmp_path, "certify", "--function", "abs", "--xstar", "3")[0] == 1

    def test_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        args = ["certify", "--function", "abs", "--seed", "5"]
        assert main([*args, "--output-dir", str(a)]) == 0
        assert main([*args, "--output-dir", str(b)]) == 0
        assert (a / "matrix.json").read_bytes() == (b / "matrix.json").read_bytes()


class TestSpaceCheck:
    def test_hilbert(self, tmp_path):
        code, out = run(tmp_path, "space-check", "--p", "2", "--trials", "500")
        assert code == 0
        g = json.loads((out / "geometry.json").read_text())
        validate(g, "geometry")
        assert g["identities"]["holds"]
        assert all(c["verdict"] == "Holds" for c in g["parallelogram"])
        assert read_csv(out / "moduli.csv")[0] == ["modulus", "argument", "value"]

    def test_lwp(self, tmp_path):
        code, out = run(tmp_path, "space-check", "--p", "1.5", "--c", "0.5", "--trials", "500")
        assert code == 0
        assert json.loads((out / "geometry.json").read_text())["parallelogram"][0]["verdict"] == "Holds"

    def test_lwp_too_large_still_exits_zero(self, tmp_path):
        code, out = run(tmp_path, "space-check", "--p", "1.5", "--c", "2", "--trials", "500")
        assert code == 0
        assert json.loads((out / "geometry.json").read_text())["parallelogram"][0]["verdict"] == "FailsWithWitness"

    def test_invalid_p(self, tmp_path):
        assert run(tmp_path, "space-check", "--p", "0.5")[0] == 1

    def test_one_dimensional_has_no_moduli(self, tmp_path):
        code, out = run(tmp_path, "space-check", "--p", "3", "--dim", "1", "--trials", "200")
        assert code == 0
        assert json.loads((out / "geometry.json").read_text())["report"] is None


class TestEpi:
    def test_constant_manifest(self, tmp_path):
        from varconvex.epi import MANIFEST_DIR
        code, out = run(tmp_path, "epi", str(MANIFEST_DIR / "constant.json"))
        assert code == 0
        validate(json.loads((out / "epi.json").read_text()), "epi")

    def test_oscillating_reports_inner_and_outer(self, tmp_path):
        from varconvex.epi import MANIFEST_DIR
        code, out = run(tmp_path, "epi", str(MANIFEST_DIR / "oscillating_wells.json"))
        assert code == 0
        seq = json.loads((out / "epi.json").read_text())["sequences"][0]
        params = seq["argmin_convergence"]["params"]
        assert len(params["outer_limit"]) == 2 and params["inner_limit"] == []

    def test_missing_manifest(self, tmp_path):
        assert run(tmp_path, "epi", str(tmp_path / "missing.json"))[0] == 1

    def test_failing_manifest_exits_three(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "bad", "generator_id": "uniform_shift", "k_max": 20,
                                   "box": {"lo": [-2], "hi": [2], "points_per_axis": 81},
                                   "params": {}, "tol": 1e-9}))
        assert run(tmp_path, "epi", str(bad))[0] == 3


class TestCatalogList:
    def test_text(self, capsys):
        assert main(["catalog-list"]) == 0
        names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
        assert "wshape" in names and len(names) == 8

    def test_json_written(self, tmp_path, capsys):
        code, out = run(tmp_path, "catalog-list", "--format", "json", "--write")
        assert code == 0
        rec = json.loads(capsys.readouterr().out)
        validate(rec, "catalog")
        assert (out / "catalog.json").read_text() == json.dumps(rec, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def test_console_script_module():
    res = subprocess.run([sys.executable, "-m", "varconvex.cli", "catalog-list"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "quadratic1d" in res.stdout
