"""Corpus-level caption scoring: BLEU, ROUGE-L, a two-stage METEOR variant,
and consensus CIDEr-D over stemmed n-grams.

All scorers take a hypothesis dict {video_id: sentence} and a reference dict
{video_id: [sentence, ...]} of raw strings and tokenize internally, so CLI
and tests feed them the same untouched text.  Video order never matters:
every aggregation walks ids in sorted order.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

from .errors import ContractError, DataError
from .porter import stem
from .textkit import normalize_tokenize

MAX_ORDER = 4
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0

# Joint alignments examined per sentence pair before the chunk search
# falls back to the monotone assignment.
METEOR_SEARCH_BUDGET = 50000


def _ngram_counts(tokens, order):
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def _check_corpus(hyps, refs):
    if not hyps:
        raise ContractError("no hypotheses to score")
    missing = sorted(vid for vid in hyps if not refs.get(vid))
    if missing:
        raise DataError("no references for: " + ", ".join(missing[:8]))


# ------------------------------------------------------------------ BLEU

def bleu(hyps, refs):
    """Corpus BLEU-1 through BLEU-4 as a tuple.

    Modified n-gram precision with per-reference clipping, uniform weights,
    and the usual brevity penalty against the closest reference length
    (ties go to the shorter reference).
    """
    _check_corpus(hyps, refs)
    matched = Counter()
    possible = Counter()
    hyp_total = 0
    ref_total = 0
    for vid in sorted(hyps):
        h = normalize_tokenize(hyps[vid])
        rs = [normalize_tokenize(r) for r in refs[vid]]
        hyp_total += len(h)
        ref_total += min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
        for order in range(1, MAX_ORDER + 1):
            hc = _ngram_counts(h, order)
            ceiling = Counter()
            for r in rs:
                ceiling |= _ngram_counts(r, order)
            matched[order] += sum((hc & ceiling).values())
            possible[order] += max(len(h) - order + 1, 0)
    if hyp_total == 0:
        return (0.0,) * MAX_ORDER
    brevity = 1.0 if hyp_total > ref_total else math.exp(1.0 - ref_total / hyp_total)
    precisions = [matched[k] / possible[k] if possible[k] else 0.0
                  for k in range(1, MAX_ORDER + 1)]
    out = []
    for order in range(1, MAX_ORDER + 1):
        head = precisions[:order]
        if min(head) == 0.0:
            out.append(0.0)
        else:
            out.append(brevity * math.exp(sum(map(math.log, head)) / order))
    return tuple(out)


# --------------------------------------------------------------- ROUGE-L

def _lcs_length(a, b):
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = row[j]
            row[j] = prev + 1 if x == y else max(row[j], row[j - 1])
            prev = cur
    return row[-1]


def rouge_l(hyps, refs):
    """Mean over videos of the best F-score against any reference."""
    _check_corpus(hyps, refs)
    beta_sq = ROUGE_BETA * ROUGE_BETA
    total = 0.0
    for vid in sorted(hyps):
        h = normalize_tokenize(hyps[vid])
        best = 0.0
        for ref in refs[vid]:
            r = normalize_tokenize(ref)
            lcs = _lcs_length(h, r)
            if lcs == 0:
                continue
            prec = lcs / len(h)
            rec = lcs / len(r)
            best = max(best, (1 + beta_sq) * prec * rec / (rec + beta_sq * prec))
        total += best
    return total / len(hyps)


# ---------------------------------------------------------------- METEOR

class _BudgetSpent(Exception):
    pass


def _grouped(h_items, r_items):
    """Per-key position lists for every key present on both sides."""
    table = {}
    for pos, key in h_items:
        table.setdefault(key, ([], []))[0].append(pos)
    for pos, key in r_items:
        table.setdefault(key, ([], []))[1].append(pos)
    return {k: v for k, v in sorted(table.items()) if v[0] and v[1]}


def _stage_matchings(h_items, r_items):
    """Yield every maximum matching of one stage, lazily."""
    groups = _grouped(h_items, r_items)
    choosers = []
    for hp, rp in groups.values():
        width = min(len(hp), len(rp))
        choosers.append([
            list(zip(picked, ordered))
            for picked in itertools.combinations(hp, width)
            for ordered in itertools.permutations(rp, width)
        ])
    for combo in itertools.product(*choosers):
        yield [pair for block in combo for pair in block]


def _monotone_matching(h_items, r_items):
    pairs = []
    for hp, rp in _grouped(h_items, r_items).values():
        pairs.extend(zip(hp, rp))
    return pairs


def _chunk_count(pairs):
    count = 0
    prev_h = prev_r = -2
    for h, r in sorted(pairs):
        if h != prev_h + 1 or r != prev_r + 1:
            count += 1
        prev_h, prev_r = h, r
    return count


def _align(h_toks, r_toks):
    """Match count and minimal chunk count across both matching stages.

    Stage one pairs identical surface tokens, stage two pairs leftover
    tokens whose Porter stems agree.  The match count is fixed by the
    per-key multiplicities; the search only minimizes chunks, and gives
    up on the monotone assignment once the candidate budget is spent.
    """
    surface_h = list(enumerate(h_toks))
    surface_r = list(enumerate(r_toks))

    def leftovers(pairs):
        used_h = {p for p, _ in pairs}
        used_r = {p for _, p in pairs}
        lh = [(i, stem(t)) for i, t in enumerate(h_toks) if i not in used_h]
        lr = [(i, stem(t)) for i, t in enumerate(r_toks) if i not in used_r]
        return lh, lr

    best = None
    remaining = METEOR_SEARCH_BUDGET
    try:
        for first in _stage_matchings(surface_h, surface_r):
            lh, lr = leftovers(first)
            for second in _stage_matchings(lh, lr):
                remaining -= 1
                if remaining < 0:
                    raise _BudgetSpent
                pairs = first + second
                key = (-len(pairs), _chunk_count(pairs) if pairs else 0)
                if best is None or key < best:
                    best = key
    except _BudgetSpent:
        first = _monotone_matching(surface_h, surface_r)
        lh, lr = leftovers(first)
        pairs = first + _monotone_matching(lh, lr)
        key = (-len(pairs), _chunk_count(pairs) if pairs else 0)
        if key < best:
            best = key
    return -best[0], best[1]


def _meteor_pair(h_toks, r_toks):
    if not h_toks or not r_toks:
        return 0.0
    matches, chunks = _align(h_toks, r_toks)
    if matches == 0:
        return 0.0
    prec = matches / len(h_toks)
    rec = matches / len(r_toks)
    fmean = 10.0 * prec * rec / (rec + 9.0 * prec)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


def meteor_lite(hyps, refs):
    """Two-stage METEOR (exact then stemmed), best reference per video."""
    _check_corpus(hyps, refs)
    total = 0.0
    for vid in sorted(hyps):
        h = normalize_tokenize(hyps[vid])
        total += max(_meteor_pair(h, normalize_tokenize(r)) for r in refs[vid])
    return total / len(hyps)


# --------------------------------------------------------------- CIDEr-D

def _stem_tokens(sentence):
    return [stem(t) for t in normalize_tokenize(sentence)]


def _tfidf(counts, idf_for):
    return {g: c * idf_for(g) for g, c in counts.items()}


def _norm(vec):
    return math.sqrt(sum(v * v for v in vec.values()))


def _clipped_cosine(hvec, rvec):
    num = sum(min(hvec.get(g, 0.0), w) * w for g, w in rvec.items())
    den = _norm(hvec) * _norm(rvec)
    return num, den


def cider_d(hyps, refs):
    """Consensus score over stemmed 1..4-grams, scaled to [0, 10].

    tf-idf weighted, hypothesis counts clipped per reference, with a
    gaussian penalty on the length gap.  Document frequency counts the
    videos whose reference set mentions an n-gram; when idf weighting
    zeroes a vector pair outright (every shared n-gram is universal),
    the cosine is retaken on raw counts so consensus on tiny corpora
    still registers instead of collapsing to zero.
    """
    _check_corpus(hyps, refs)
    ids = sorted(hyps)
    hyp_toks = {vid: _stem_tokens(hyps[vid]) for vid in ids}
    ref_toks = {vid: [_stem_tokens(r) for r in refs[vid]] for vid in ids}

    doc_freq = [Counter() for _ in range(MAX_ORDER)]
    for vid in ids:
        for order in range(1, MAX_ORDER + 1):
            grams = set()
            for toks in ref_toks[vid]:
                grams.update(_ngram_counts(toks, order))
            doc_freq[order - 1].update(grams)
    n_videos = len(ids)

    total = 0.0
    for vid in ids:
        h = hyp_toks[vid]
        acc = 0.0
        for r in ref_toks[vid]:
            gap_penalty = math.exp(-((len(h) - len(r)) ** 2)
                                   / (2.0 * CIDER_SIGMA * CIDER_SIGMA))
            for order in range(1, MAX_ORDER + 1):
                hc = _ngram_counts(h, order)
                rc = _ngram_counts(r, order)
                df = doc_freq[order - 1]

                def idf_for(gram):
                    return math.log(n_videos / max(1.0, df[gram]))

                num, den = _clipped_cosine(_tfidf(hc, idf_for), _tfidf(rc, idf_for))
                if den == 0.0:
                    num, den = _clipped_cosine(dict(hc), dict(rc))
                if den > 0.0:
                    acc += gap_penalty * num / den
        total += 10.0 * acc / (MAX_ORDER * len(refs[vid]))
    return total / n_videos


# ------------------------------------------------------------- reporting

_TABLE_COLUMNS = ("BLEU1", "BLEU2", "BLEU3", "BLEU4", "METEOR", "CIDEr", "ROUGE-L")


@dataclass(frozen=True)
class MetricReport:
    bleu: tuple
    meteor: float
    cider_d: float
    rouge_l: float
    videos: int

    def to_dict(self):
        out = {f"bleu{k}": self.bleu[k - 1] for k in range(1, MAX_ORDER + 1)}
        out["meteor"] = self.meteor
        out["cider_d"] = self.cider_d
        out["rouge_l"] = self.rouge_l
        out["videos"] = self.videos
        return out

    @classmethod
    def from_dict(cls, payload):
        return cls(
            bleu=tuple(payload[f"bleu{k}"] for k in range(1, MAX_ORDER + 1)),
            meteor=payload["meteor"],
            cider_d=payload["cider_d"],
            rouge_l=payload["rouge_l"],
            videos=payload["videos"],
        )

    def format_table(self):
        values = (*self.bleu, self.meteor, self.cider_d, self.rouge_l)
        header = "  ".join(f"{name:>7}" for name in _TABLE_COLUMNS)
        row = "  ".join(f"{v:7.4f}" for v in values)
        return f"{header}\n{row}"


def evaluate(hyps, refs):
    """Score a decoded corpus against its references on every metric."""
    _check_corpus(hyps, refs)
    return MetricReport(
        bleu=bleu(hyps, refs),
        meteor=meteor_lite(hyps, refs),
        cider_d=cider_d(hyps, refs),
        rouge_l=rouge_l(hyps, refs),
        videos=len(hyps),
    )
