# SPDX-License-Identifier: Apache-2.0
"""Python access to the recheck self-correction core.

Structured values (claims, outputs, traces, configs) are plain dicts in the same
JSON layout the command-line tool writes.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Sequence

from . import _recheck as _core
from ._recheck import BackendError, ValidationError

__all__ = [
    "BackendError",
    "ValidationError",
    "attention_dispersion",
    "bayes_update",
    "check_convergence",
    "classify_verdict",
    "crop_at",
    "default_config",
    "detect_probability",
    "extract_claims",
    "find_underexplored",
    "hedge_ratio",
    "integrate_verifications",
    "make_pope_cases",
    "pope_metrics",
    "response_token_uncertainty",
    "run_scripted",
    "run_synth_benchmark",
    "score_response",
    "semantic_consistency",
    "token_entropy",
    "unified_score",
]


def _dump(value: Any) -> str:
    return json.dumps(value)


def _config(cfg: dict | None) -> str:
    return "" if cfg is None else _dump(cfg)


def default_config() -> dict:
    return json.loads(_core.default_config())


def token_entropy(step: dict) -> float:
    return _core.token_entropy(_dump(step))


def response_token_uncertainty(steps: Sequence[dict], vocab_bound: float = 32.0) -> float:
    return _core.response_token_uncertainty(_dump(list(steps)), vocab_bound)


def attention_dispersion(attention: dict, claim: dict) -> float:
    return _core.attention_dispersion(_dump(attention), _dump(claim))


def semantic_consistency(r0: str, samples: Iterable[str], dim: int = 4096) -> float:
    return _core.semantic_consistency(r0, list(samples), dim)


def hedge_ratio(text: str) -> float:
    return _core.hedge_ratio(text)


def unified_score(components: Sequence[float], alpha: Sequence[float] = (0.30, 0.25, 0.25, 0.20)) -> float:
    return _core.unified_score(list(components), list(alpha))


def extract_claims(output: dict, question: str = "") -> list[dict]:
    return json.loads(_core.extract_claims(_dump(output), question))


def score_response(output: dict, claims: Sequence[dict], samples: Sequence[str], cfg: dict | None = None) -> dict:
    return json.loads(_core.score_response(_dump(output), _dump(list(claims)), list(samples), _config(cfg)))


def find_underexplored(saliency: dict, tau_rel: float, image_w: int, image_h: int,
                       eight_connected: bool = False) -> list[dict]:
    return json.loads(_core.find_underexplored(_dump(saliency), tau_rel, image_w, image_h, eight_connected))


def crop_at(center_x: float, center_y: float, scale: float, image_w: int, image_h: int) -> dict:
    return json.loads(_core.crop_at(center_x, center_y, scale, image_w, image_h))


def classify_verdict(claim: dict, answer: str) -> tuple[str, float]:
    return _core.classify_verdict(_dump(claim), answer)


def integrate_verifications(text: str, items: Sequence[dict], confidence_floor: float = 0.5) -> tuple[str, list[dict]]:
    new_text, edits, _ = _core.integrate_verifications(text, _dump(list(items)), confidence_floor)
    return new_text, json.loads(edits)


def check_convergence(u_t: float, u_prev: float | None = None, cfg: dict | None = None) -> str:
    return _core.check_convergence(u_t, u_prev, _config(cfg))


def bayes_update(prior: float, likelihood_h: float, likelihood_not_h: float) -> float:
    return _core.bayes_update(prior, likelihood_h, likelihood_not_h)


def detect_probability(area: float, scale: float, theta_small: float = 2000.0, base_rate: float = 0.6,
                       slope: float = 1.0) -> float:
    return _core.detect_probability(area, scale, theta_small, base_rate, slope)


def make_pope_cases(seed: int, n: int, split: str = "adversarial") -> list[dict]:
    return json.loads(_core.make_pope_cases(seed, n, split))


def pope_metrics(results: Iterable[tuple[bool, bool]]) -> dict:
    return json.loads(_core.pope_metrics([(bool(p), bool(t)) for p, t in results]))


def run_scripted(fixture: str, image_path: str, question: str, cfg: dict | None = None) -> dict:
    return json.loads(_core.run_scripted(fixture, image_path, question, _config(cfg)))


def run_synth_benchmark(seed: int = 42, n: int = 200, split: str = "adversarial", pipeline: str = "corrected",
                        cfg: dict | None = None, parallel: int = 1) -> dict:
    return json.loads(_core.run_synth_benchmark(seed, n, split, pipeline, _config(cfg), parallel))
