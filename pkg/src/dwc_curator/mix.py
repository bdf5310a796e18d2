"""Stage mixing: token budgets per training stage and per-domain sampling.

A stage plan names each training stage, its token budget, its per-domain
weights, and whether documents in that stage carry a context preamble.
Budgets split across domains by largest remainder, so they sum exactly.
Sampling shuffles each domain pool with a seeded generator and takes
documents until the domain budget is met, overshooting by at most one
document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .seeds import derived_rng

DWC_MODES = ("preamble", "none")

# Relative stage weights: a long pretraining phase, a smaller annealing
# phase of higher-quality data, and a short long-context phase without
# preambles.  With a 62M token total these give 45M, 15M, and 2M.
DEFAULT_STAGE_TEMPLATE = (
    {"name": "pretrain", "weight": 4500, "dwc_mode": "preamble"},
    {"name": "anneal", "weight": 1500, "dwc_mode": "preamble"},
    {"name": "long_context", "weight": 200, "dwc_mode": "none"},
)


class MixConfigError(ValueError):
    """Raised when a stage plan is malformed."""


@dataclass(slots=True)
class StageSpec:
    name: str
    token_budget: int
    domain_weights: dict[str, float] = field(default_factory=dict)
    dwc_mode: str = "preamble"

    def validate(self) -> None:
        if not self.name:
            raise MixConfigError("stage name must be non-empty")
        if self.token_budget < 0:
            raise MixConfigError(f"stage {self.name}: negative token budget")
        if self.dwc_mode not in DWC_MODES:
            raise MixConfigError(
                f"stage {self.name}: dwc_mode must be one of {DWC_MODES}"
            )
        for domain, weight in self.domain_weights.items():
            if weight < 0:
                raise MixConfigError(
                    f"stage {self.name}: negative weight for domain {domain!r}"
                )
        if self.domain_weights and sum(self.domain_weights.values()) == 0:
            raise MixConfigError(f"stage {self.name}: all domain weights are zero")


@dataclass(slots=True)
class StagePlan:
    stages: list[StageSpec] = field(default_factory=list)

    def validate(self) -> None:
        seen = set()
        for stage in self.stages:
            stage.validate()
            if stage.name in seen:
                raise MixConfigError(f"duplicate stage name {stage.name!r}")
            seen.add(stage.name)

    def modes(self) -> list[str]:
        out = []
        for stage in self.stages:
            if stage.dwc_mode not in out:
                out.append(stage.dwc_mode)
        return out

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "name": s.name,
                    "token_budget": s.token_budget,
                    "domain_weights": dict(sorted(s.domain_weights.items())),
                    "dwc_mode": s.dwc_mode,
                }
                for s in self.stages
            ]
        }


def stage_plan_from_dict(raw: Mapping) -> StagePlan:
    stages = []
    for item in raw.get("stages", []):
        stages.append(
            StageSpec(
                name=str(item.get("name", "")),
                token_budget=int(item.get("token_budget", 0)),
                domain_weights={
                    str(k): float(v)
                    for k, v in item.get("domain_weights", {}).items()
                },
                dwc_mode=str(item.get("dwc_mode", "preamble")),
            )
        )
    plan = StagePlan(stages=stages)
    plan.validate()
    return plan


def largest_remainder_split(total: int, weights: Mapping[str, float]) -> dict[str, int]:
    """Integer shares proportional to weights, summing exactly to total.

    Each key gets the floor of its exact share; leftover units go to the
    largest fractional parts, ties broken by key order, so the result is
    deterministic.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    positive = {k: w for k, w in weights.items() if w > 0}
    if not positive:
        return {k: 0 for k in weights}
    weight_sum = sum(positive.values())
    shares = {}
    fractions = []
    assigned = 0
    for key in sorted(positive):
        exact = total * positive[key] / weight_sum
        base = math.floor(exact)
        shares[key] = base
        assigned += base
        fractions.append((-(exact - base), key))
    fractions.sort()
    for _, key in fractions[: total - assigned]:
        shares[key] += 1
    for key in weights:
        shares.setdefault(key, 0)
    return shares


def build_stage_plan(
    total_tokens: int,
    template: Sequence[Mapping] = DEFAULT_STAGE_TEMPLATE,
    domain_weights: Mapping[str, float] | None = None,
) -> StagePlan:
    """Instantiate a stage plan from relative weights and a token total.

    Stage budgets come from a largest-remainder split of ``total_tokens``
    over the template weights.  Every stage receives the same domain
    weights (default: a single catch-all domain).
    """
    weights = {str(item["name"]): float(item["weight"]) for item in template}
    budgets = largest_remainder_split(total_tokens, weights)
    domains = dict(domain_weights) if domain_weights else {"general": 1.0}
    stages = [
        StageSpec(
            name=str(item["name"]),
            token_budget=budgets[str(item["name"])],
            domain_weights=dict(domains),
            dwc_mode=str(item.get("dwc_mode", "preamble")),
        )
        for item in template
    ]
    plan = StagePlan(stages=stages)
    plan.validate()
    return plan


# ---------------------------------------------------------------------------
# Sampling.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ManifestRow:
    doc_id: str
    stage: str
    domain: str
    tokens: int

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "stage": self.stage,
            "domain": self.domain,
            "tokens": self.tokens,
        }


@dataclass(slots=True)
class DomainFill:
    budget: int = 0
    taken_tokens: int = 0
    taken_docs: int = 0
    pool_docs: int = 0

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "taken_tokens": self.taken_tokens,
            "taken_docs": self.taken_docs,
            "pool_docs": self.pool_docs,
        }


def sample_stage(
    stage: StageSpec,
    pool: Sequence[tuple[str, str, int]],
    seed: int = 0,
) -> tuple[list[ManifestRow], dict[str, DomainFill]]:
    """Draw documents for one stage from (doc_id, domain, tokens) rows.

    The stage budget splits over domains by largest remainder.  Each
    domain pool is shuffled with a seed derived from the stage and domain
    names, then documents are taken until the running token total reaches
    the domain budget, so overshoot is bounded by one document.  Domains
    whose pool runs dry simply stop early; the fill report records both
    cases.
    """
    budgets = largest_remainder_split(stage.token_budget, stage.domain_weights)
    by_domain: dict[str, list[tuple[str, str, int]]] = {}
    for row in pool:
        by_domain.setdefault(row[1], []).append(row)
    rows: list[ManifestRow] = []
    fills: dict[str, DomainFill] = {}
    for domain in sorted(budgets):
        budget = budgets[domain]
        members = by_domain.get(domain, [])
        fill = fills[domain] = DomainFill(budget=budget, pool_docs=len(members))
        if budget <= 0 or not members:
            continue
        rng = derived_rng(seed, f"mix:{stage.name}:{domain}")
        order = list(members)
        rng.shuffle(order)
        for doc_id, _, tokens in order:
            if fill.taken_tokens >= budget:
                break
            rows.append(
                ManifestRow(doc_id=doc_id, stage=stage.name, domain=domain, tokens=tokens)
            )
            fill.taken_tokens += tokens
            fill.taken_docs += 1
    return rows, fills


def write_manifest(path: Path, rows: Iterable[ManifestRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_manifest(path: Path) -> list[ManifestRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        raw = json.loads(line)
        rows.append(
            ManifestRow(
                doc_id=str(raw["doc_id"]),
                stage=str(raw["stage"]),
                domain=str(raw["domain"]),
                tokens=int(raw["tokens"]),
            )
        )
    return rows
