"""Regenerates the measure/fit fixtures with a plain-Python metrics oracle.

Written against the definitions directly and kept apart from the Rust code
so the golden files are an independent check.
"""
import json
import math
import random
from decimal import Decimal
from pathlib import Path

HERE = Path(__file__).parent
RUN_ID = "f1f1f1f1f1f1f1f1"
WINDOW = 4
STRIDE = 3
TOTAL = 40
SCHEDULE = [
    {"scenario": "duplication", "interval_steps": 8, "repetitions": 3, "start_step": 4, "knowledge_ids": ["k000", "k001"]},
    {"scenario": "once", "interval_steps": 8, "repetitions": 1, "start_step": 4, "knowledge_ids": ["k002"]},
]


def rust_float(x):
    if math.isnan(x):
        return "NaN"
    s = format(Decimal(repr(x)), "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def inj_steps(s):
    return [s["start_step"] + j * s["interval_steps"] for j in range(s["repetitions"])]


def eval_steps():
    out = set(range(0, TOTAL + 1, STRIDE)) | {TOTAL}
    for s in SCHEDULE:
        out.add(s["start_step"] - 1)
        for t in inj_steps(s):
            out |= {x for x in range(t, t + WINDOW + 1) if x <= TOTAL}
    return sorted(out)


def probes():
    out = []
    for s in SCHEDULE:
        for k in s["knowledge_ids"]:
            names = ["mem-0", "mem-1", "mem-2", "sem-0", "comp-0"] if s["scenario"] == "duplication" else ["mem-0", "sem-0"]
            for n in names:
                depth = {"mem": "memorization", "sem": "semantic", "comp": "composition"}[n.split("-")[0]]
                out.append((f"{k}-{n}", k, s["scenario"], depth, inj_steps(s)))
    return sorted(out)


def value(rng, pid, inj, t):
    """Log-probability: flat baseline, jumps after each injection that fade
    with log time, plus quantised noise. One probe is a large outlier and
    one never moves."""
    if pid == "k002-sem-0":
        return -6.0
    v = -8.0
    for e in inj:
        if t > e:
            d = t - e
            v += max(0.0, 1.5 * (1 - 0.3 * math.log(d))) if d > 1 else 1.5
    if pid == "k001-mem-2":
        v += 0.25 * (t > inj[0])
    v += rng.randrange(-64, 65) / 1024
    return round(v * 1024) / 1024


def main():
    rng = random.Random(5)
    steps = eval_steps()
    series = {}
    lines = []
    for t in steps:
        for pid, k, sc, depth, inj in probes():
            v = value(rng, pid, inj, t)
            if pid == "k000-mem-1" and t > inj[-1]:
                v -= 3.0
            span = 2 if depth == "semantic" else 1
            series.setdefault(pid, (k, sc, depth, inj, {}))[4][t] = v
            lines.append(json.dumps({
                "run_id": RUN_ID, "step": t, "scenario": sc, "knowledge_id": k, "probe_id": pid, "depth": depth,
                "logprob_sum": v, "logprob_mean": v / span, "span_len": span,
            }, separators=(",", ":")))
    (HERE / "trace.jsonl").write_text("\n".join(lines) + "\n")

    m = json.loads((HERE / "manifest.template.json").read_text())
    m.update(run_id=RUN_ID, config_hash=RUN_ID * 4, schedule=SCHEDULE, steps_completed=TOTAL, total_steps=TOTAL,
             eval_stride=STRIDE, window=WINDOW)
    (HERE / "manifest.json").write_text(json.dumps(m, indent=2) + "\n")

    samples = []
    for pid in sorted(series):
        k, sc, depth, inj, v = series[pid]

        def lam(i):
            lo, hi = inj[i] + 1, inj[i] + WINDOW
            if i + 1 < len(inj):
                hi = min(hi, inj[i + 1])
            best = lo
            for t in range(lo, hi + 1):
                if v[t] > v[best]:
                    best = t
            return best

        for i in range(len(inj)):
            samples.append(["effectivity", sc, depth, i, None, pid, v[lam(i)] - v[inj[i]], False])
        n = len(inj) - 1
        ln = lam(n)
        base = v[inj[0] - 1]
        den = v[ln] - base
        if den == 0.0:
            samples.append(["retainability", sc, depth, n, 0, pid, float("nan"), True])
            continue
        for t in sorted(v):
            if t >= ln:
                off = t - ln
                r = 1.0 if off == 0 else (v[t] - base) / den
                samples.append(["retainability", sc, depth, n, off, pid, r, False])

    def q(sorted_v, p):
        h = p * (len(sorted_v) - 1)
        lo = math.floor(h)
        hi = min(lo + 1, len(sorted_v) - 1)
        return sorted_v[lo] + (h - lo) * (sorted_v[hi] - sorted_v[lo])

    groups = {}
    for idx, s in enumerate(samples):
        if not s[7]:
            groups.setdefault((s[0], s[1], s[2], s[3], s[4]), []).append(idx)
    for idx in groups.values():
        vals = [samples[i][6] for i in idx]
        if len(vals) < 4:
            continue
        sv = sorted(vals)
        q1, q3 = q(sv, 0.25), q(sv, 0.75)
        lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
        for i in idx:
            samples[i][7] = not (lo <= samples[i][6] <= hi)

    out = ["kind,scenario,depth,encounter_index,t_offset,probe_id,value,filtered_flag"]
    for s in samples:
        out.append(",".join([s[0], s[1], s[2], str(s[3]), "" if s[4] is None else str(s[4]), s[5], rust_float(s[6]),
                             "true" if s[7] else "false"]))
    (HERE / "metrics.golden.csv").write_text("\n".join(out) + "\n")
    print(len(samples), "samples,", sum(s[7] for s in samples), "filtered")

    # Noiseless decay 1 - 0.2 ln t for the fit fixture.
    out = ["kind,scenario,depth,encounter_index,t_offset,probe_id,value,filtered_flag"]
    for p in ["k000-mem-0", "k000-mem-1"]:
        for t in range(201):
            r = 1.0 if t == 0 else 1.0 - 0.2 * math.log(t)
            out.append(f"retainability,duplication,memorization,9,{t},{p},{rust_float(r)},false")
    (HERE / "metrics.noiseless.csv").write_text("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
