"""Regenerate the 200-record prediction/truth fixture and its expected report.

The expected report is assembled with plain Python arithmetic (fractions for
means and variances) and deliberately imports nothing from mocktrial.
Run from this directory: ``python3 make_fixture.py``.
"""

from __future__ import annotations

import json
import math
import random
from fractions import Fraction
from pathlib import Path

N = 200
SEED = 20240601
HERE = Path(__file__).resolve().parent


def make_records(rng: random.Random):
    preds, truths = [], []
    for i in range(1, N + 1):
        cid = f"T{i:03d}"
        kind = rng.random()
        if kind < 0.04:
            t_imp, rng_ = "无期徒刑", None
            p_imp = rng.choice(["无期徒刑", 180, "死刑"])
        elif kind < 0.06:
            t_imp, rng_ = "死刑", None
            p_imp = rng.choice(["死刑", "无期徒刑"])
        elif kind < 0.10:
            t_imp = "无"
            rng_ = [0, 6]
            p_imp = rng.choice(["无", 3, 8])
        else:
            t = rng.randint(1, 180)
            lo = max(0, t - rng.randint(0, 24))
            hi = t + rng.randint(0, 36)
            t_imp, rng_ = t, [lo, hi]
            r = rng.random()
            if r < 0.05:
                p_imp = "无"
            elif r < 0.08:
                p_imp = "无期徒刑"
            else:
                p_imp = max(1, t + rng.randint(-t // 2 - 1, t // 2 + 6))

        # probation: truth length, applicable without length, or none
        r = rng.random()
        t_prob = rng.randint(6, 60) if r < 0.3 else ("无" if r > 0.05 else "是")
        r = rng.random()
        if r < 0.55:
            p_prob = t_prob if rng.random() < 0.4 else ("无" if t_prob == "无" and rng.random() < 0.7 else rng.randint(6, 60))
        elif r < 0.62:
            p_prob = "是"
        else:
            p_prob = "无"

        # fine: truth amount in yuan, or none
        t_fine = rng.choice([1000, 2000, 3000, 5000, 8000, 10000, 20000, 50000]) if rng.random() < 0.7 else "无"
        r = rng.random()
        if r < 0.6:
            p_fine = rng.choice([1000, 2000, 3000, 5000, 8000, 10000, 20000, 50000, 100000])
        elif r < 0.67:
            p_fine = "是"
        else:
            p_fine = "无"
        if t_fine != "无" and rng.random() < 0.2:
            p_fine = t_fine

        preds.append({"case_id": cid, "imprisonment": p_imp, "probation": p_prob, "fine": p_fine})
        rec = {"case_id": cid, "imprisonment": t_imp, "probation": t_prob, "fine": t_fine}
        if rng_ is not None:
            rec["range"] = rng_
        truths.append(rec)
    return preds, truths


# -- oracle ------------------------------------------------------------------------------


def months(tok):
    if isinstance(tok, int):
        return tok
    if tok == "无":
        return 0
    return None  # life or death


def applicable(tok) -> bool:
    return tok != "无"


def number(tok):
    return tok if isinstance(tok, int) else None


def rel_stats(pairs):
    errs = [Fraction(abs(p - t), t) for p, t in pairs if p is not None and t is not None and t != 0]
    excluded = len(pairs) - len(errs)
    if not errs:
        return None, None, 0, excluded
    mean = sum(errs) / len(errs)
    var = sum((e - mean) ** 2 for e in errs) / len(errs)
    return float(mean), math.sqrt(var), len(errs), excluded


def oracle_report(preds, truths) -> dict:
    by_id = {p["case_id"]: p for p in preds}
    rows = [(by_id[t["case_id"]], t) for t in sorted(truths, key=lambda r: r["case_id"])]
    n = len(rows)

    hits = 0
    for p, t in rows:
        pm, tm = months(p["imprisonment"]), months(t["imprisonment"])
        if tm is None or pm is None:
            hits += p["imprisonment"] == t["imprisonment"]
        elif "range" in t:
            hits += t["range"][0] <= pm <= t["range"][1]
    imp = rel_stats([(months(p["imprisonment"]), months(t["imprisonment"])) for p, t in rows])

    prob_pairs = []
    for p, t in rows:
        a, b = number(p["probation"]), number(t["probation"])
        prob_pairs.append((a, b) if a and b else (None, None))
    prob = rel_stats(prob_pairs)
    prob_acc = sum(applicable(p["probation"]) == applicable(t["probation"]) for p, t in rows)

    fine_pairs = []
    for p, t in rows:
        tf = number(t["fine"])
        if not tf:
            fine_pairs.append((None, None))
        elif not applicable(p["fine"]):
            fine_pairs.append((0, tf))
        else:
            fine_pairs.append((number(p["fine"]), tf))
    fine = rel_stats(fine_pairs)
    fine_acc = sum(applicable(p["fine"]) == applicable(t["fine"]) for p, t in rows)

    def r6(x):
        return None if x is None else round(x, 6)

    def block(stats, key, value):
        return {
            "relative_error_mean": r6(stats[0]),
            "relative_error_std": r6(stats[1]),
            key: r6(value),
            "n_included": stats[2],
            "n_excluded": stats[3],
        }

    return {
        "n_cases": n,
        "imprisonment": block(imp, "hit_rate", hits / n),
        "probation": block(prob, "accuracy", prob_acc / n),
        "fine": block(fine, "accuracy", fine_acc / n),
    }


def write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def main() -> None:
    preds, truths = make_records(random.Random(SEED))
    write_jsonl(HERE / "predictions.jsonl", preds)
    write_jsonl(HERE / "truth.jsonl", truths)
    report = oracle_report(preds, truths)
    (HERE / "expected_report.json").write_text(json.dumps(report, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
