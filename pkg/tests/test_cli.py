"""End-to-end CLI coverage: happy paths, output formats, error categories."""

import json
import re
import shutil
import subprocess
from types import SimpleNamespace

import numpy as np
import pytest

import bilayerpq as bq
from bilayerpq.cli import main

RESULT_LINE = re.compile(r"^\d+ \d+ \d\.\d{8}e[+-]\d{2,}$")


def write_cfg(path, **kv):
    path.write_text("".join(f"{k}={v}\n" for k, v in kv.items()))
    return str(path)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A trained and built workspace shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    base = bq.generate_clustered(8, 30, 8, 0.05, seed=11)
    rng = np.random.default_rng(12)
    noise = rng.normal(0.0, 0.01, (12, 8)).astype(np.float32)
    queries = bq.DenseVectorSet(base.data[:12] + noise)
    bq.write_vectors(base, root / "base.fvecs")
    bq.write_vectors(queries, root / "query.fvecs")
    gt = bq.brute_force_knn(base, queries, 5)
    bq.write_vectors(bq.DenseVectorSet(gt.ids.astype(np.float32)), root / "gt.ivecs")

    paths = {
        "learn": root / "base.fvecs",
        "base": root / "base.fvecs",
        "query": root / "query.fvecs",
        "coarse": root / "coarse.bpqc",
        "fine": root / "fine.bpqc",
    }
    params = {"t": 8, "m": 4, "k": 16, "l": 240, "r": 10, "seed": 5}
    cfg_global = write_cfg(
        root / "global.cfg", **paths, index=root / "global.bpqi", **params
    )
    cfg_hbpq = write_cfg(
        root / "hbpq.cfg",
        **paths,
        engine="hbpq",
        bank=root / "bank.bpqc",
        index=root / "hbpq.bpqi",
        **params,
    )
    assert main(["train", "--config", cfg_hbpq]) == 0
    assert main(["build", "--config", cfg_global]) == 0
    assert main(["build", "--config", cfg_hbpq]) == 0
    return SimpleNamespace(
        root=root,
        cfg_global=cfg_global,
        cfg_hbpq=cfg_hbpq,
        base=base,
        queries=queries,
        gt=gt,
        params=params,
    )


class TestTrain:
    def test_is_deterministic(self, ws, tmp_path):
        cfg = write_cfg(
            tmp_path / "t.cfg",
            learn=ws.root / "base.fvecs",
            coarse=tmp_path / "coarse.bpqc",
            fine=tmp_path / "fine.bpqc",
            **ws.params,
        )
        assert main(["train", "--config", cfg]) == 0
        assert (tmp_path / "coarse.bpqc").read_bytes() == (ws.root / "coarse.bpqc").read_bytes()
        assert (tmp_path / "fine.bpqc").read_bytes() == (ws.root / "fine.bpqc").read_bytes()

    def test_reports_artifacts(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "t.cfg",
            learn=ws.root / "base.fvecs",
            coarse=tmp_path / "c.bpqc",
            fine=tmp_path / "f.bpqc",
            bank=tmp_path / "b.bpqc",
            engine="hbpq",
            **ws.params,
        )
        assert main(["train", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "coarse: t=8" in out and "fine: m=4 k=16" in out
        # bank element count: t * k * dim = 8 * 16 * 8
        assert "bank: cells=8 elements=1024 -> " in out

    def test_optimized_pipeline(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "o.cfg",
            learn=ws.root / "base.fvecs",
            base=ws.root / "base.fvecs",
            query=ws.root / "query.fvecs",
            coarse=tmp_path / "c.bpqc",
            fine=tmp_path / "f.bpqc",
            index=tmp_path / "i.bpqi",
            **ws.params,
        )
        assert main(["train", "--config", cfg, "--optimized"]) == 0
        assert main(["build", "--config", cfg]) == 0
        assert main(["search", "--config", cfg, "--r", "3"]) == 0
        capsys.readouterr()
        assert main(["info", "--config", cfg]) == 0
        assert "optimized=true" in capsys.readouterr().out

    def test_t_larger_than_learn_set(self, ws, capsys):
        code = main(["train", "--config", ws.cfg_global, "--t", "10000"])
        assert code == 2
        assert "error[config]: t=10000 exceeds the learn set size 240" in capsys.readouterr().err

    def test_odd_m_rejected(self, ws, capsys):
        assert main(["train", "--config", ws.cfg_global, "--m", "3"]) == 2
        assert "error[config]: m must be even" in capsys.readouterr().err

    def test_missing_learn_file(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "t.cfg",
            learn=tmp_path / "nope.fvecs",
            coarse=tmp_path / "c.bpqc",
            fine=tmp_path / "f.bpqc",
        )
        assert main(["train", "--config", cfg, "--t", "4", "--k", "4"]) == 3
        assert "error[io]: missing learn file" in capsys.readouterr().err

    def test_hbpq_requires_bank_path(self, ws, capsys):
        assert main(["train", "--config", ws.cfg_global, "--engine", "hbpq"]) == 2
        assert "train requires config key(s): bank" in capsys.readouterr().err


class TestBuild:
    def test_is_deterministic(self, ws, tmp_path):
        cfg = write_cfg(
            tmp_path / "b.cfg",
            base=ws.root / "base.fvecs",
            coarse=ws.root / "coarse.bpqc",
            fine=ws.root / "fine.bpqc",
            index=tmp_path / "i.bpqi",
            **ws.params,
        )
        assert main(["build", "--config", cfg]) == 0
        assert (tmp_path / "i.bpqi").read_bytes() == (ws.root / "global.bpqi").read_bytes()

    def test_summary_line(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "b.cfg",
            base=ws.root / "base.fvecs",
            coarse=ws.root / "coarse.bpqc",
            fine=ws.root / "fine.bpqc",
            index=tmp_path / "i.bpqi",
        )
        assert main(["build", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert re.search(r"n=240 populated_cells=\d+ bytes_per_point=8 -> ", out)

    def test_missing_codec(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "b.cfg",
            base=ws.root / "base.fvecs",
            coarse=ws.root / "coarse.bpqc",
            fine=tmp_path / "missing.bpqc",
            index=tmp_path / "i.bpqi",
        )
        assert main(["build", "--config", cfg]) == 3
        assert "error[io]: missing codebook file" in capsys.readouterr().err


class TestSearch:
    def _parse(self, out):
        blocks = {}
        current = None
        for line in out.strip().splitlines():
            if line.startswith("query "):
                current = int(line.split()[1])
                blocks[current] = []
            else:
                assert RESULT_LINE.match(line), line
                rank, pid, dist = line.split()
                blocks[current].append((int(rank), int(pid), float(dist)))
        return blocks

    @pytest.mark.parametrize("engine", ["baseline", "fbpq"])
    def test_output_matches_library(self, ws, capsys, engine):
        assert main(["search", "--config", ws.cfg_global, "--engine", engine]) == 0
        blocks = self._parse(capsys.readouterr().out)
        assert sorted(blocks) == list(range(12))
        index = bq.load_index(ws.root / "global.bpqi")
        tables = bq.build_tables(index)
        for qi, rows in blocks.items():
            q = ws.queries.data[qi]
            if engine == "baseline":
                ids, dists = bq.search_baseline(index, q, 240, 10)
            else:
                ids, dists = bq.search_fbpq(index, tables, q, 240, 10)
            assert [r[0] for r in rows] == list(range(1, len(rows) + 1))
            assert [r[1] for r in rows] == [int(v) for v in ids]
            np.testing.assert_allclose([r[2] for r in rows], dists, rtol=1e-6)

    def test_hbpq_engine(self, ws, capsys):
        assert main(["search", "--config", ws.cfg_hbpq]) == 0
        blocks = self._parse(capsys.readouterr().out)
        index = bq.load_index(ws.root / "hbpq.bpqi")
        ids, _ = bq.search_hbpq(index, ws.queries.data[0], 240, 10)
        assert [r[1] for r in blocks[0]] == [int(v) for v in ids]

    def test_flag_overrides_config(self, ws, capsys):
        assert main(["search", "--config", ws.cfg_global, "--r", "3"]) == 0
        blocks = self._parse(capsys.readouterr().out)
        assert all(len(rows) == 3 for rows in blocks.values())

    def test_limit_caps_queries(self, ws, capsys):
        assert main(["search", "--config", ws.cfg_global, "--limit", "2"]) == 0
        assert sorted(self._parse(capsys.readouterr().out)) == [0, 1]

    def test_budget_below_r(self, ws, capsys):
        assert main(["search", "--config", ws.cfg_global, "--l", "5"]) == 2
        assert "error[usage]: l=5 must be >= r=10" in capsys.readouterr().err

    def test_engine_index_mismatch(self, ws, capsys):
        assert main(["search", "--config", ws.cfg_global, "--engine", "hbpq"]) == 5
        err = capsys.readouterr().err
        assert "error[incompatible]: engine hbpq requires an index built with local codebooks" in err
        assert main(["search", "--config", ws.cfg_hbpq, "--engine", "fbpq"]) == 5
        assert "error[incompatible]" in capsys.readouterr().err

    def test_query_dimension_mismatch(self, ws, tmp_path, capsys):
        bad = bq.DenseVectorSet(np.zeros((2, 4), np.float32))
        bq.write_vectors(bad, tmp_path / "bad.fvecs")
        cfg = write_cfg(
            tmp_path / "s.cfg",
            query=tmp_path / "bad.fvecs",
            index=ws.root / "global.bpqi",
        )
        assert main(["search", "--config", cfg]) == 5
        err = capsys.readouterr().err
        assert "query dimension 4 does not match index dimension 8" in err

    def test_corrupt_index(self, ws, tmp_path, capsys):
        (tmp_path / "i.bpqi").write_bytes(b"this is not an index file")
        cfg = write_cfg(
            tmp_path / "s.cfg", query=ws.root / "query.fvecs", index=tmp_path / "i.bpqi"
        )
        assert main(["search", "--config", cfg]) == 4
        assert "error[format]: bad magic" in capsys.readouterr().err

    def test_missing_index(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "s.cfg", query=ws.root / "query.fvecs", index=tmp_path / "i.bpqi"
        )
        assert main(["search", "--config", cfg]) == 3
        assert "error[io]: missing index file" in capsys.readouterr().err


class TestEval:
    def _run(self, args, capsys):
        assert main(args) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 2
        return out[0], json.loads(out[1])

    def test_text_and_json_lines(self, ws, capsys):
        text, payload = self._run(["eval", "--config", ws.cfg_global], capsys)
        assert re.match(
            r"^engine=baseline l=240 queries=12 R@1=[01]\.\d{4} R@10=[01]\.\d{4} "
            r"R@100=[01]\.\d{4} mean_query_ms=\d+\.\d{3} mean_candidates=240\.0$",
            text,
        )
        assert payload["engine"] == "baseline"
        assert payload["num_queries"] == 12
        assert set(payload["recall"]) == {"1", "10", "100"}
        assert all(0.0 <= v <= 1.0 for v in payload["recall"].values())
        # queries are tiny perturbations of base rows and l covers everything
        assert payload["recall"]["100"] == 1.0

    def test_gt_file_equals_computed_gt(self, ws, tmp_path, capsys):
        _, with_base = self._run(["eval", "--config", ws.cfg_global], capsys)
        cfg = write_cfg(
            tmp_path / "e.cfg",
            query=ws.root / "query.fvecs",
            index=ws.root / "global.bpqi",
            gt=ws.root / "gt.ivecs",
            l=240,
        )
        _, with_gt = self._run(["eval", "--config", cfg], capsys)
        assert with_gt["recall"] == with_base["recall"]

    def test_all_engines(self, ws, capsys):
        for args in (
            ["eval", "--config", ws.cfg_global, "--engine", "fbpq"],
            ["eval", "--config", ws.cfg_hbpq],
        ):
            _, payload = self._run(args, capsys)
            assert payload["recall"]["100"] == 1.0

    def test_requires_gt_or_base(self, ws, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path / "e.cfg",
            query=ws.root / "query.fvecs",
            index=ws.root / "global.bpqi",
        )
        assert main(["eval", "--config", cfg]) == 2
        assert "eval requires a gt file or a base set" in capsys.readouterr().err

    def test_short_gt_rejected(self, ws, tmp_path, capsys):
        short = bq.DenseVectorSet(ws.gt.ids[:3].astype(np.float32))
        bq.write_vectors(short, tmp_path / "short.ivecs")
        cfg = write_cfg(
            tmp_path / "e.cfg",
            query=ws.root / "query.fvecs",
            index=ws.root / "global.bpqi",
            gt=tmp_path / "short.ivecs",
        )
        assert main(["eval", "--config", cfg]) == 5
        assert "ground truth covers 3 queries" in capsys.readouterr().err


class TestInfo:
    def test_global_index(self, ws, capsys):
        assert main(["info", "--config", ws.cfg_global]) == 0
        out = capsys.readouterr().out
        want = [
            "dim=8",
            "num_points=240",
            "num_coarse=8",
            "num_parts=4",
            "codebook_size=16",
            "optimized=false",
            "local_codebooks=false",
            "bytes_per_point=8",
            "fbpq_coarse_norm_elements=16",
            "fbpq_fine_norm_elements=64",
            "fbpq_cross_elements=512",
            "fbpq_table_elements_total=592",
        ]
        assert out.strip().splitlines() == want

    def test_hbpq_index(self, ws, capsys):
        assert main(["info", "--config", ws.cfg_hbpq]) == 0
        out = capsys.readouterr().out
        assert "local_codebooks=true" in out
        assert "bank_elements=1024" in out  # t * k * dim = 8 * 16 * 8


class TestConfigErrors:
    def _expect_config_error(self, tmp_path, capsys, content, fragment):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(content)
        assert main(["info", "--config", str(cfg)]) == 2
        assert fragment in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        self._expect_config_error(tmp_path, capsys, "banana=1\n", "unknown key 'banana'")

    def test_duplicate_key(self, tmp_path, capsys):
        self._expect_config_error(tmp_path, capsys, "t=4\nt=8\n", "duplicate key 't'")

    def test_malformed_line(self, tmp_path, capsys):
        self._expect_config_error(tmp_path, capsys, "just words\n", "expected key=value")

    def test_bad_int(self, tmp_path, capsys):
        self._expect_config_error(tmp_path, capsys, "t=four\n", "expects an integer")

    def test_bad_bool(self, tmp_path, capsys):
        self._expect_config_error(tmp_path, capsys, "optimized=maybe\n", "expects a boolean")

    def test_comments_and_blanks_ignored(self, ws, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"# comment\n\nindex={ws.root / 'global.bpqi'}\n")
        assert main(["info", "--config", str(cfg)]) == 0
        capsys.readouterr()

    def test_bad_engine_in_config(self, tmp_path, capsys):
        self._expect_config_error(
            tmp_path, capsys, "engine=exact\n", "engine must be one of"
        )

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["info", "--config", str(tmp_path / "nope.cfg")]) == 3
        assert "error[io]: cannot read config file" in capsys.readouterr().err

    def test_missing_command(self, capsys):
        assert main([]) == 2
        assert "error[usage]: missing command" in capsys.readouterr().err


class TestConsoleScript:
    def test_entry_point_installed(self, ws):
        exe = shutil.which("bilayerpq")
        assert exe is not None
        proc = subprocess.run(
            [exe, "info", "--config", ws.cfg_global], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "dim=8" in proc.stdout
