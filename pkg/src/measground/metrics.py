"""BLEU, ROUGE-L, a judge-client contract, and per-dimension reports.

The BLEU variant is pinned: BLEU-4 with modified n-gram precisions,
add-one smoothing when a higher-order precision has zero matches, and
brevity penalty min(1, exp(1 - r/c)) against the reference closest in
length. Tokenization lowercases, splits on whitespace/punctuation, and
treats CJK code points as single tokens.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from . import formats
from .benchmark import BenchmarkExample, CapabilityDimension
from .errors import JudgeUnavailable, MalformedVerdict, ManifestMismatch

log = logging.getLogger(__name__)

_CJK_RANGES = (
    (0x3040, 0x30FF),    # kana
    (0x3400, 0x4DBF),    # CJK extension A
    (0x4E00, 0x9FFF),    # CJK unified
    (0xF900, 0xFAFF),    # CJK compatibility
)


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """Lowercase; alphanumeric runs are tokens; CJK code points stand alone."""
    tokens: list[str] = []
    current = []
    for ch in text.lower():
        if _is_cjk(ch):
            if current:
                tokens.append("".join(current))
                current = []
            tokens.append(ch)
        elif ch.isalnum():
            current.append(ch)
        else:
            if current:
                tokens.append("".join(current))
                current = []
    if current:
        tokens.append("".join(current))
    return tokens


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: list[str], references: list[list[str]]) -> float:
    """Sentence BLEU-4 of a token list against one or more references."""
    if not references or any(not r for r in references):
        raise ManifestMismatch("BLEU requires non-empty references")
    if not candidate:
        return 0.0
    c_len = len(candidate)
    r_len = min((len(r) for r in references), key=lambda n: (abs(n - c_len), n))

    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        matched = 0
        if cand_counts:
            max_ref = Counter()
            for ref in references:
                for gram, count in _ngrams(ref, n).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            matched = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if matched == 0:
            if n == 1:
                return 0.0
            precision = (matched + 1.0) / (total + 1.0)  # add-one smoothing
        else:
            precision = matched / total
        log_sum += math.log(precision)
    brevity = min(1.0, math.exp(1.0 - r_len / c_len))
    return brevity * math.exp(log_sum / 4.0)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> float:
    """LCS-based F-measure with beta = 1."""
    if not reference:
        raise ManifestMismatch("ROUGE-L requires a non-empty reference")
    if not candidate:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


# --- judge clients ------------------------------------------------------------------

def _normalized(text: str) -> str:
    return " ".join(text.lower().split())


class ExactMatchJudge:
    """Offline fallback: correct iff prediction equals reference up to
    case and whitespace."""

    def verdict(self, question: str, reference: str, prediction: str) -> bool:
        return _normalized(reference) == _normalized(prediction)


class TranscriptJudge:
    """Scripted verdicts from a JSONL transcript keyed by
    (question, reference, prediction); unknown triples fall back to exact
    matching so partial transcripts stay usable."""

    def __init__(self, transcript_path: Path):
        self._verdicts: dict[tuple[str, str, str], bool] = {}
        for row in formats.read_jsonl(transcript_path):
            verdict = row.get("verdict")
            if verdict not in ("correct", "incorrect"):
                raise MalformedVerdict(f"transcript verdict must be correct/incorrect, got {verdict!r}")
            key = (str(row["question"]), str(row["reference"]), str(row["prediction"]))
            self._verdicts[key] = verdict == "correct"
        self._fallback = ExactMatchJudge()

    def verdict(self, question: str, reference: str, prediction: str) -> bool:
        key = (question, reference, prediction)
        if key in self._verdicts:
            return self._verdicts[key]
        return self._fallback.verdict(question, reference, prediction)


class HttpJudgeClient:
    """POSTs {question, reference, prediction}; expects {"verdict": "correct"|"incorrect"}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def verdict(self, question: str, reference: str, prediction: str) -> bool:
        import requests

        payload = {"question": question, "reference": reference, "prediction": prediction}
        try:
            response = requests.post(self.endpoint, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise JudgeUnavailable(f"{self.endpoint}: {exc}") from exc
        if response.status_code != 200:
            raise JudgeUnavailable(f"{self.endpoint}: HTTP {response.status_code}")
        try:
            body = response.json()
        except ValueError as exc:
            raise MalformedVerdict(f"{self.endpoint}: non-JSON response") from exc
        verdict = body.get("verdict") if isinstance(body, dict) else None
        if verdict not in ("correct", "incorrect"):
            raise MalformedVerdict(f"{self.endpoint}: verdict must be correct/incorrect, got {verdict!r}")
        return verdict == "correct"


def judge(question: str, reference: str, prediction: str, client, max_retries: int = 3) -> bool:
    """Client verdict with retries on transient unavailability."""
    retries = 0
    while True:
        try:
            return bool(client.verdict(question, reference, prediction))
        except JudgeUnavailable:
            if retries >= max_retries:
                raise
            retries += 1
            log.info("judge retry %d", retries)


# --- evaluation ----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricTriple:
    bleu: float
    rouge_l: float
    judge_accuracy: float  # fraction; rendered as percent

    def to_dict(self) -> dict:
        return {"bleu": self.bleu, "rouge_l": self.rouge_l, "judge_accuracy": self.judge_accuracy}


@dataclass(frozen=True)
class MetricReport:
    overall: MetricTriple
    per_dimension: dict[CapabilityDimension, MetricTriple]
    counts: dict[CapabilityDimension, int]
    total: int
    missing_predictions: int

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_dimension": {
                dim.value: triple.to_dict() for dim, triple in sorted(
                    self.per_dimension.items(), key=lambda kv: kv[0].value
                )
            },
            "counts": {dim.value: n for dim, n in sorted(self.counts.items(), key=lambda kv: kv[0].value)},
            "total": self.total,
            "missing_predictions": self.missing_predictions,
        }


def evaluate_run(
    predictions: dict[tuple[str, str], str],
    manifest: list[BenchmarkExample],
    judge_client=None,
) -> MetricReport:
    """Score predictions against a benchmark manifest.

    ``predictions`` maps (capture_id, question) to the predicted answer.
    Missing predictions are scored as empty strings (wrong) and counted;
    predictions that match no manifest example raise ManifestMismatch.
    """
    if judge_client is None:
        judge_client = ExactMatchJudge()
    known = {(e.capture_id, e.question) for e in manifest}
    extra = set(predictions) - known
    if extra:
        raise ManifestMismatch(f"predictions for unknown examples: {sorted(extra)[:5]}")

    sums: dict[CapabilityDimension, list[float]] = {}
    counts: dict[CapabilityDimension, int] = {}
    missing = 0
    for example in sorted(manifest, key=lambda e: (e.capture_id, e.question)):
        key = (example.capture_id, example.question)
        prediction = predictions.get(key)
        if prediction is None:
            missing += 1
            prediction = ""
        ref_tokens = tokenize(example.reference_answer)
        pred_tokens = tokenize(prediction)
        b = bleu(pred_tokens, [ref_tokens]) if ref_tokens else 0.0
        r = rouge_l(pred_tokens, ref_tokens) if ref_tokens else 0.0
        if prediction == "":
            correct = False  # counted wrong without consulting the judge
        else:
            correct = judge(example.question, example.reference_answer, prediction, judge_client)
        bucket = sums.setdefault(example.dimension, [0.0, 0.0, 0.0])
        bucket[0] += b
        bucket[1] += r
        bucket[2] += 1.0 if correct else 0.0
        counts[example.dimension] = counts.get(example.dimension, 0) + 1

    total = sum(counts.values())
    if total == 0:
        raise ManifestMismatch("benchmark manifest is empty")
    per_dimension = {
        dim: MetricTriple(
            bleu=sums[dim][0] / counts[dim],
            rouge_l=sums[dim][1] / counts[dim],
            judge_accuracy=sums[dim][2] / counts[dim],
        )
        for dim in counts
    }
    overall = MetricTriple(
        bleu=sum(s[0] for s in sums.values()) / total,
        rouge_l=sum(s[1] for s in sums.values()) / total,
        judge_accuracy=sum(s[2] for s in sums.values()) / total,
    )
    return MetricReport(
        overall=overall,
        per_dimension=per_dimension,
        counts=counts,
        total=total,
        missing_predictions=missing,
    )


def report_from_dict(obj: dict) -> MetricReport:
    per_dimension = {
        CapabilityDimension(name): MetricTriple(**triple)
        for name, triple in obj["per_dimension"].items()
    }
    counts = {CapabilityDimension(name): int(n) for name, n in obj["counts"].items()}
    return MetricReport(
        overall=MetricTriple(**obj["overall"]),
        per_dimension=per_dimension,
        counts=counts,
        total=int(obj["total"]),
        missing_predictions=int(obj["missing_predictions"]),
    )


def render_table(report: MetricReport) -> str:
    """Aligned-column text table: one capability row plus an overall row."""
    header = f"{'Capability':<12} {'N':>6} {'BLEU':>8} {'ROUGE-L':>8} {'Judge %':>8}"
    rows = [header, "-" * len(header)]
    for dim in sorted(report.per_dimension, key=lambda d: d.value):
        triple = report.per_dimension[dim]
        rows.append(
            f"{dim.value:<12} {report.counts[dim]:>6} {triple.bleu:>8.4f} "
            f"{triple.rouge_l:>8.4f} {100.0 * triple.judge_accuracy:>8.2f}"
        )
    rows.append("-" * len(header))
    o = report.overall
    rows.append(
        f"{'OVERALL':<12} {report.total:>6} {o.bleu:>8.4f} {o.rouge_l:>8.4f} "
        f"{100.0 * o.judge_accuracy:>8.2f}"
    )
    return "\n".join(rows)
