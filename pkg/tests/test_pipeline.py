"""Tests for the end-to-end curation pipeline and its configuration."""

from __future__ import annotations

import gzip
import hashlib
import json
from pathlib import Path

import pytest

from conftest import make_doc
from dwc_curator.mix import StagePlan, StageSpec
from dwc_curator.model import ContextRecord
from dwc_curator.pack import read_shards
from dwc_curator.pipeline import (
    PHASE_ORDER,
    ConfigError,
    _resolve_stage_plan,
    config_from_dict,
    load_config,
    run_pipeline,
)
from dwc_curator.synth import SynthConfig, write_corpus

TEMPLATE_WEIGHT_SUM = 4500 + 1500 + 200


def _raw_config(corpus: Path, out_dir: Path, seed: int = 7, workers: int = 1) -> dict:
    return {
        "inputs": [{"path": str(corpus), "format": "jsonl_gz"}],
        "out_dir": str(out_dir),
        "seed": seed,
        "workers": workers,
        "clean": {},
        "filter": {"min_quality": "low"},
        "annotate": {"on_invalid": "flag"},
        "dedup": {"minhash": {"shingle_k": 3}},
        "lm": {"sample_docs": 200},
        "vocab": {"mode": "byte", "num_merges": 64},
        "pack": {"lengths": [64, 128], "ratios": [0.5, 0.5], "bins_per_shard": 16},
        "mix": {},
    }


def _artifact_digests(root: Path) -> dict[str, str]:
    """Checksum every artifact except the report, which carries timings."""
    out: dict[str, str] = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = str(path.relative_to(root))
        if rel == "report.json":
            continue
        out[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def _read_jsonl_gz(path: Path) -> list[dict]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh]


@pytest.fixture(scope="module")
def corpus_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl.gz"
    count, _ = write_corpus(path, SynthConfig(n_docs=120, seed=11, mean_words=60))
    assert count == 120
    return path


@pytest.fixture(scope="module")
def baseline(tmp_path_factory, corpus_path):
    """One full pipeline run shared by the read-only assertions."""
    out_dir = tmp_path_factory.mktemp("baseline")
    config = config_from_dict(_raw_config(corpus_path, out_dir))
    report = run_pipeline(config)
    return out_dir, report


class TestConfigFromDict:
    def _minimal(self, tmp_path: Path) -> dict:
        return {
            "inputs": [{"path": str(tmp_path / "in.jsonl")}],
            "out_dir": str(tmp_path / "out"),
        }

    def test_defaults(self, tmp_path):
        config = config_from_dict(self._minimal(tmp_path))
        assert config.seed == 0
        assert config.workers == 1
        assert config.write_intermediate is True
        assert config.inputs[0].format == "jsonl"
        assert config.filter.min_quality == "low"
        assert config.annotate.on_invalid == "flag"
        assert config.dedup.near_enabled is True
        assert config.lm.order == 2
        assert config.vocab.mode == "byte"
        assert config.vocab.num_merges == 256
        assert config.pack.lengths == (8192,)
        assert config.pack.ratios == (1.0,)
        assert config.pack.order == "size_desc"
        assert config.mix.total_tokens is None
        assert config.mix.explicit_plan is None

    def test_ratios_default_to_uniform(self, tmp_path):
        raw = self._minimal(tmp_path)
        raw["pack"] = {"lengths": [4, 8]}
        config = config_from_dict(raw)
        assert config.pack.ratios == (1.0, 1.0)

    def test_digest_is_canonical_sha256(self, tmp_path):
        raw = self._minimal(tmp_path)
        config = config_from_dict(raw)
        expected = hashlib.sha256(
            json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ).hexdigest()
        assert config.config_digest == expected

    def test_relative_paths_resolve_against_base_dir(self, tmp_path):
        raw = {"inputs": [{"path": "corpus.jsonl"}], "out_dir": "out"}
        config = config_from_dict(raw, base_dir=tmp_path)
        assert config.inputs[0].path == str(tmp_path / "corpus.jsonl")
        assert config.out_dir == tmp_path / "out"

    def test_absolute_paths_pass_through(self, tmp_path):
        raw = self._minimal(tmp_path)
        config = config_from_dict(raw, base_dir=tmp_path / "elsewhere")
        assert config.inputs[0].path == str(tmp_path / "in.jsonl")
        assert config.out_dir == tmp_path / "out"

    def test_explicit_mix_stages_build_a_plan(self, tmp_path):
        raw = self._minimal(tmp_path)
        raw["mix"] = {
            "stages": [
                {
                    "name": "only",
                    "token_budget": 50,
                    "domain_weights": {"general": 1.0},
                    "dwc_mode": "none",
                }
            ]
        }
        config = config_from_dict(raw)
        plan = config.mix.explicit_plan
        assert isinstance(plan, StagePlan)
        assert [s.name for s in plan.stages] == ["only"]
        assert plan.stages[0].token_budget == 50

    def test_mix_total_tokens_parsed(self, tmp_path):
        raw = self._minimal(tmp_path)
        raw["mix"] = {"total_tokens": 6200}
        assert config_from_dict(raw).mix.total_tokens == 6200

    @pytest.mark.parametrize(
        ("mutation", "message"),
        [
            ({"bogus_key": 1}, "unknown configuration keys"),
            ({"inputs": []}, "at least one input is required"),
            ({"workers": 0}, "workers must be at least 1"),
            ({"vocab": {"mode": "bpe"}}, "vocab.mode invalid"),
            ({"vocab": {"num_merges": -1}}, "num_merges must be non-negative"),
            ({"pack": {"lengths": []}}, "pack.lengths must not be empty"),
            ({"pack": {"lengths": [8], "ratios": [1.0, 2.0]}}, "differ in length"),
            ({"pack": {"lengths": [8], "order": "random"}}, "pack.order invalid"),
            ({"pack": {"lengths": [0]}}, "entries must be positive"),
            ({"filter": {"min_quality": "best"}}, "min_quality invalid"),
            ({"filter": {"nope": 1}}, "invalid configuration"),
            ({"annotate": {"on_invalid": "warn"}}, "on_invalid invalid"),
            ({"dedup": {"minhash": {"bands": 3}}}, "must equal num_perm"),
            ({"inputs": [{"path": "x", "format": "csv"}]}, "unknown ingest format"),
        ],
    )
    def test_rejects_bad_values(self, tmp_path, mutation, message):
        raw = {**self._minimal(tmp_path), **mutation}
        with pytest.raises(ConfigError, match=message):
            config_from_dict(raw)

    def test_out_dir_is_required(self, tmp_path):
        raw = {"inputs": [{"path": str(tmp_path / "in.jsonl")}]}
        with pytest.raises(ConfigError, match="out_dir is required"):
            config_from_dict(raw)

    def test_root_must_be_a_mapping(self):
        with pytest.raises(ConfigError, match="root must be an object"):
            config_from_dict("not a mapping")


class TestLoadConfig:
    def test_loads_and_resolves_relative_to_file(self, tmp_path):
        raw = {"inputs": [{"path": "data.jsonl"}], "out_dir": "out", "seed": 3}
        path = tmp_path / "conf.json"
        path.write_text(json.dumps(raw), encoding="utf-8")
        config = load_config(path)
        assert config.seed == 3
        assert config.inputs[0].path == str(tmp_path / "data.jsonl")
        assert config.out_dir == tmp_path / "out"
        assert config.config_digest == config_from_dict(raw).config_digest

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read configuration"):
            load_config(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)


class TestResolveStagePlan:
    def _config(self, tmp_path: Path, mix: dict) -> "PipelineConfig":
        raw = {
            "inputs": [{"path": str(tmp_path / "in.jsonl")}],
            "out_dir": str(tmp_path / "out"),
            "mix": mix,
        }
        return config_from_dict(raw)

    def test_explicit_plan_wins(self, tmp_path):
        stage = StageSpec(
            name="only", token_budget=9, domain_weights={"general": 1.0}, dwc_mode="none"
        )
        config = self._config(
            tmp_path,
            {
                "stages": [
                    {
                        "name": "only",
                        "token_budget": 9,
                        "domain_weights": {"general": 1.0},
                        "dwc_mode": "none",
                    }
                ]
            },
        )
        plan = _resolve_stage_plan(config, [], token_totals={"none": 10_000})
        assert plan.stages == [stage]

    def test_total_tokens_split_by_template_weights(self, tmp_path):
        config = self._config(tmp_path, {"total_tokens": 6200})
        plan = _resolve_stage_plan(config, [], token_totals={"preamble": 1, "none": 1})
        budgets = {s.name: s.token_budget for s in plan.stages}
        assert budgets == {"pretrain": 4500, "anneal": 1500, "long_context": 200}
        modes = {s.name: s.dwc_mode for s in plan.stages}
        assert modes == {
            "pretrain": "preamble",
            "anneal": "preamble",
            "long_context": "none",
        }

    def test_budgets_fall_back_to_per_mode_totals(self, tmp_path):
        config = self._config(tmp_path, {})
        plan = _resolve_stage_plan(
            config, [], token_totals={"preamble": 6200, "none": 3100}
        )
        budgets = {s.name: s.token_budget for s in plan.stages}
        assert budgets == {"pretrain": 4500, "anneal": 1500, "long_context": 100}

    def test_budgets_zero_before_encoding(self, tmp_path):
        config = self._config(tmp_path, {})
        plan = _resolve_stage_plan(config, [], token_totals=None)
        assert all(s.token_budget == 0 for s in plan.stages)
        assert plan.modes() == ["preamble", "none"]

    def test_domains_observed_from_document_contexts(self, tmp_path):
        config = self._config(tmp_path, {})
        docs = [
            make_doc("a", "x", context=ContextRecord(category_primary="Aerospace")),
            make_doc("b", "y", context=ContextRecord(category_primary="Aerospace")),
            make_doc("c", "z"),
        ]
        plan = _resolve_stage_plan(config, docs, token_totals=None)
        for stage in plan.stages:
            assert stage.domain_weights == {"Aerospace": 2.0, "general": 1.0}

    def test_domains_default_to_general_without_docs(self, tmp_path):
        config = self._config(tmp_path, {})
        plan = _resolve_stage_plan(config, [], token_totals=None)
        for stage in plan.stages:
            assert stage.domain_weights == {"general": 1.0}

    def test_explicit_domain_weights_override_observation(self, tmp_path):
        config = self._config(tmp_path, {"domain_weights": {"news": 3.0, "web": 1.0}})
        docs = [make_doc("a", "x")]
        plan = _resolve_stage_plan(config, docs, token_totals=None)
        for stage in plan.stages:
            assert stage.domain_weights == {"news": 3.0, "web": 1.0}


class TestPipelineRun:
    def test_phases_run_in_order(self, baseline):
        _, report = baseline
        assert [p.name for p in report.phases] == list(PHASE_ORDER)
        assert report.failed_phase is None
        assert report.error is None

    def test_document_conservation_per_phase(self, baseline):
        _, report = baseline
        for phase in report.phases:
            assert phase.docs_in == phase.docs_out + phase.dropped

    def test_phase_outputs_chain(self, baseline):
        _, report = baseline
        phases = {p.name: p for p in report.phases}
        order = list(PHASE_ORDER)
        for previous, current in zip(order, order[1:]):
            assert phases[current].docs_in == phases[previous].docs_out

    def test_frozen_counts_for_this_corpus_and_seed(self, baseline):
        _, report = baseline
        phases = {p.name: p for p in report.phases}
        assert phases["ingest"].docs_in == 120
        assert phases["ingest"].docs_out == 120
        assert phases["clean"].dropped == 0
        assert phases["filter"].dropped == 2
        assert phases["annotate"].dropped == 0
        assert phases["dedup"].dropped == 10
        assert phases["mix"].docs_out == 108

    def test_later_phases_drop_nothing(self, baseline):
        _, report = baseline
        phases = {p.name: p for p in report.phases}
        for name in ("vocab", "pack", "mix"):
            assert phases[name].dropped == 0
            assert phases[name].docs_out == phases[name].docs_in

    def test_dropped_ledger_matches_phase_counts(self, baseline):
        out_dir, report = baseline
        expected = sum(
            p.dropped
            for p in report.phases
            if p.name in ("clean", "filter", "annotate", "dedup")
        )
        records = _read_jsonl_gz(out_dir / "intermediate" / "dropped.jsonl.gz")
        assert len(records) == expected == 12
        for record in records:
            assert record["verdicts"]
            assert record["verdicts"][-1]["decision"] == "drop"

    def test_report_file_round_trips(self, baseline):
        out_dir, report = baseline
        on_disk = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
        assert sorted(on_disk) == [
            "artifacts",
            "config_digest",
            "error",
            "failed_phase",
            "phases",
            "scorer_fallbacks",
            "seed",
            "workers",
        ]
        assert on_disk["seed"] == 7
        assert on_disk["workers"] == 1
        assert on_disk["config_digest"] == report.config_digest
        assert on_disk["failed_phase"] is None
        assert [p["name"] for p in on_disk["phases"]] == list(PHASE_ORDER)

    def test_expected_artifacts_exist(self, baseline):
        out_dir, report = baseline
        assert sorted(report.artifacts) == [
            "manifests",
            "merges",
            "shards",
            "stage_plan",
            "tokens",
            "vocab",
        ]
        for rel in (
            "vocab/vocab.txt",
            "vocab/merges.txt",
            "tokens/none/tokens.bin",
            "tokens/none/tokens_index.json",
            "tokens/preamble/tokens.bin",
            "tokens/preamble/tokens_index.json",
            "mix/pretrain.jsonl",
            "mix/anneal.jsonl",
            "mix/long_context.jsonl",
        ):
            assert (out_dir / rel).is_file(), rel
        for mode in ("none", "preamble"):
            for target in (64, 128):
                assert (out_dir / "shards" / mode / f"L{target}" / "shards.json").is_file()
        for index in range(1, 6):
            matches = list((out_dir / "intermediate").glob(f"{index:02d}-*.jsonl.gz"))
            assert len(matches) == 1

    def test_token_stores_cover_the_survivors(self, baseline):
        out_dir, _ = baseline
        survivors = {
            record["id"]
            for record in _read_jsonl_gz(out_dir / "intermediate" / "05-dedup.jsonl.gz")
        }
        assert len(survivors) == 108
        for mode in ("none", "preamble"):
            index = json.loads(
                (out_dir / "tokens" / mode / "tokens_index.json").read_text()
            )
            assert set(index) == survivors

    def test_preamble_streams_are_longer(self, baseline):
        """Serialized context headers add tokens on top of the body text."""
        out_dir, _ = baseline
        totals = {}
        for mode in ("none", "preamble"):
            index = json.loads(
                (out_dir / "tokens" / mode / "tokens_index.json").read_text()
            )
            totals[mode] = sum(length for _, length in index.values())
        assert totals["preamble"] > totals["none"]

    def test_stage_budgets_follow_template_weights(self, baseline):
        out_dir, report = baseline
        totals = {}
        for mode in ("none", "preamble"):
            index = json.loads(
                (out_dir / "tokens" / mode / "tokens_index.json").read_text()
            )
            totals[mode] = sum(length for _, length in index.values())
        weights = {"pretrain": 4500, "anneal": 1500, "long_context": 200}
        modes = {"pretrain": "preamble", "anneal": "preamble", "long_context": "none"}
        for stage in report.artifacts["stage_plan"]["stages"]:
            name = stage["name"]
            expected = int(
                totals[modes[name]] * weights[name] / TEMPLATE_WEIGHT_SUM
            )
            assert stage["token_budget"] == expected

    def test_manifests_meet_budgets_with_known_tokens(self, baseline):
        out_dir, report = baseline
        plan = {
            s["name"]: s for s in report.artifacts["stage_plan"]["stages"]
        }
        for name, rel in report.artifacts["manifests"].items():
            rows = [
                json.loads(line)
                for line in (out_dir / rel).read_text(encoding="utf-8").splitlines()
            ]
            assert rows, name
            mode = plan[name]["dwc_mode"]
            index = json.loads(
                (out_dir / "tokens" / mode / "tokens_index.json").read_text()
            )
            for row in rows:
                assert row["stage"] == name
                assert row["tokens"] == index[row["doc_id"]][1]
            assert sum(r["tokens"] for r in rows) >= plan[name]["token_budget"]

    def test_shards_read_back_and_match_pack_stats(self, baseline):
        out_dir, report = baseline
        pack_extra = next(p for p in report.phases if p.name == "pack").extra
        for mode in ("none", "preamble"):
            for target in (64, 128):
                bins = list(read_shards(out_dir / "shards" / mode / f"L{target}"))
                stats = pack_extra[mode][str(target)]
                assert len(bins) == stats["bins"]
                assert all(b.capacity == target for b in bins)
                assert sum(len(b.ids) for b in bins) == stats["data_tokens"]
                assert sum(b.pad_tokens for b in bins) == stats["pad_tokens"]

    def test_vocab_phase_reports_modes_in_template_order(self, baseline):
        _, report = baseline
        vocab_extra = next(p for p in report.phases if p.name == "vocab").extra
        assert vocab_extra["modes"] == ["preamble", "none"]
        assert vocab_extra["merges"] <= 64
        text = (baseline[0] / "vocab" / "vocab.txt").read_text(encoding="utf-8")
        vocab_lines = text.split("\n")
        if vocab_lines and vocab_lines[-1] == "":
            vocab_lines.pop()
        assert vocab_extra["vocab_size"] == len(vocab_lines) - 1


class TestDeterminism:
    def test_same_seed_reruns_byte_identical(self, tmp_path, corpus_path, baseline):
        out_a, _ = baseline
        out_b = tmp_path / "rerun"
        run_pipeline(config_from_dict(_raw_config(corpus_path, out_b)))
        first = _artifact_digests(out_a)
        second = _artifact_digests(out_b)
        assert first == second
        assert len(first) > 20

    def test_worker_count_does_not_change_artifacts(
        self, tmp_path, corpus_path, baseline
    ):
        out_a, _ = baseline
        out_b = tmp_path / "workers"
        run_pipeline(config_from_dict(_raw_config(corpus_path, out_b, workers=2)))
        assert _artifact_digests(out_a) == _artifact_digests(out_b)

    def test_seed_changes_artifacts(self, tmp_path, corpus_path, baseline):
        out_a, _ = baseline
        out_b = tmp_path / "reseeded"
        run_pipeline(config_from_dict(_raw_config(corpus_path, out_b, seed=8)))
        first = _artifact_digests(out_a)
        second = _artifact_digests(out_b)
        changed = [k for k in first if k in second and first[k] != second[k]]
        assert changed


class TestFailureHandling:
    def test_missing_input_writes_partial_report(self, tmp_path, corpus_path):
        out_dir = tmp_path / "broken"
        raw = _raw_config(corpus_path, out_dir)
        raw["inputs"] = [{"path": str(tmp_path / "nope.jsonl.gz"), "format": "jsonl_gz"}]
        config = config_from_dict(raw)
        with pytest.raises(FileNotFoundError):
            run_pipeline(config)
        on_disk = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
        assert on_disk["failed_phase"] == "ingest"
        assert on_disk["error"].startswith("FileNotFoundError")

    def test_worker_override_must_be_positive(self, tmp_path, corpus_path):
        config = config_from_dict(_raw_config(corpus_path, tmp_path / "out"))
        with pytest.raises(ConfigError, match="workers must be at least 1"):
            run_pipeline(config, workers=0)


class TestIntermediateToggle:
    def test_disabled_intermediates_leave_no_directory(self, tmp_path, corpus_path):
        out_dir = tmp_path / "lean"
        raw = _raw_config(corpus_path, out_dir)
        raw["write_intermediate"] = False
        report = run_pipeline(config_from_dict(raw))
        assert report.failed_phase is None
        assert not (out_dir / "intermediate").exists()
        assert (out_dir / "report.json").is_file()
