"""Offline audit of a run record.

Everything is recomputed from the files on disk with routines that do not
share code with the training path: Frobenius norms by explicit loops over
checkpointed ``L`` and ``U`` entries, thresholds with 60-digit ``mpmath``
arithmetic, top-k selection by repeated maximum search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath

from .records import load_record

__all__ = ["Finding", "AuditReport", "verify_record", "oracle_k"]

SCORE_TOL = 1e-12


@dataclass
class Finding:
    check: str
    where: str
    message: str

    def __str__(self):
        return f"[{self.check}] {self.where}: {self.message}"


@dataclass
class AuditReport:
    path: str
    findings: list = field(default_factory=list)
    checks_run: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.findings

    def fail(self, check, where, message):
        self.findings.append(Finding(check, where, message))

    def summary(self):
        head = f"{'PASS' if self.passed else 'FAIL'} {self.path}"
        lines = [head] + [f"  checked: {c}" for c in self.checks_run]
        lines += [f"  {f}" for f in self.findings]
        return "\n".join(lines)


def _brute_frobenius(L, U):
    total = 0.0
    for i in range(len(L)):
        for j in range(len(L[i])):
            v = L[i][j] + U[i][j]
            total += v * v
    return math.sqrt(total)


def _normalise(raw, rank, variant):
    if variant == "by_rank":
        return raw / rank
    if variant == "by_sqrt_rank":
        return raw / math.sqrt(rank)
    return raw


def _close(a, b, tol=SCORE_TOL):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def oracle_k(mode, R, t, t0, T, M, k_fixed=1, n_eligible=None):
    """Threshold ``k`` recomputed with high-precision arithmetic."""
    if mode == "fixed_k":
        k = k_fixed
    elif mode == "linear":
        k = math.ceil(Fraction(R) * Fraction(t - t0, T - t0))
    else:
        with mpmath.workdps(60):
            val = mpmath.power(mpmath.mpf(R), mpmath.mpf(t - t0) / mpmath.mpf(T - t0))
            nearest = mpmath.nint(val)
            k = int(nearest) if abs(val - nearest) < mpmath.mpf(10) ** -40 else int(mpmath.ceil(val))
    k = min(max(k, 1), M)
    if n_eligible is not None:
        k = min(k, n_eligible)
    return k


def _top_k(scores, k):
    remaining = dict(scores)
    picked = []
    for _ in range(min(k, len(remaining))):
        best = None
        for sid, s in remaining.items():
            if best is None or s > remaining[best] or (s == remaining[best] and sid < best):
                best = sid
        picked.append(best)
        del remaining[best]
    return picked


def _check_triangular(report, where, site):
    L, U = site["L"], site["U"]
    r = site["r"]
    for i in range(r):
        for j in range(r):
            if j > i and L[i][j] != 0.0:
                report.fail("triangular", where, f"{site['site_id']}: L[{i}][{j}] = {L[i][j]!r} above diagonal")
                return
            if j <= i and U[i][j] != 0.0:
                report.fail("triangular", where, f"{site['site_id']}: U[{i}][{j}] = {U[i][j]!r} on/below diagonal")
                return
    if len(site["A"]) != r or len(site["B"][0]) != r:
        report.fail("triangular", where, f"{site['site_id']}: A/B shapes disagree with r={r}")


def verify_record(path) -> AuditReport:
    """Audit a record directory; mismatches are reported, never raised."""
    rec = load_record(path)
    report = AuditReport(path=str(path))
    cfg = rec.config
    train, sched = cfg["train"], cfg["schedule"]
    T = train["total_steps"]
    t0 = sched["warmup_steps"]
    interval = sched["incre_interval"]
    mode = sched["mode"]
    variant = train["norm_variant"]
    delta_r = sched["delta_r"]
    ckpts = rec.checkpoints

    # triangular structure and frozen bases
    report.checks_run.append("triangular invariants and frozen W0")
    base = None
    for key, sites in ckpts.items():
        where = f"checkpoint {key}"
        for site in sites:
            _check_triangular(report, where, site)
        w0 = {s["site_id"]: s["W0"] for s in sites}
        if base is None:
            base = w0
        elif w0 != base:
            report.fail("frozen", where, "W0 differs from the initial checkpoint")

    if train["method"] != "triadapt":
        return report

    budget = rec.budget
    M, r_init, R0 = budget["M"], budget["r_init"], budget["R_0"]

    # score oracle
    report.checks_run.append("importance scores from raw L, U")
    rows_by_t = {}
    for row in rec.score_rows:
        rows_by_t.setdefault(int(row["t"]), {})[row["site_id"]] = row
    eval_ts = sorted(rows_by_t)
    prev_raw = {}
    if 0 in ckpts:
        for s in ckpts[0]:
            prev_raw[s["site_id"]] = (_brute_frobenius(s["L"], s["U"]), s["r"])
    for t in eval_ts:
        if t not in ckpts:
            report.fail("scores", f"t={t}", "no checkpoint for this evaluation")
            continue
        for s in ckpts[t]:
            sid = s["site_id"]
            where = f"t={t} site={sid}"
            row = rows_by_t[t].get(sid)
            if row is None:
                report.fail("scores", where, "score row missing")
                continue
            raw = _brute_frobenius(s["L"], s["U"])
            nr = s["norm_record"]
            if sid in prev_raw and not (
                _close(nr["prev_norm"], prev_raw[sid][0]) and nr["prev_rank"] == prev_raw[sid][1]
            ):
                report.fail("scores", where, "stored previous norm does not match the previous checkpoint")
            now = _normalise(raw, s["r"], variant)
            prev = _normalise(nr["prev_norm"], nr["prev_rank"], variant)
            expect = now - prev
            if not _close(float(row["score"]), expect):
                report.fail("scores", where, f"recorded score {row['score']!r}, recomputed {expect!r}")
            if int(row["rank"]) != s["r"]:
                report.fail("scores", where, f"recorded rank {row['rank']} but checkpoint has r={s['r']}")
            prev_raw[sid] = (raw, s["r"])

    # budget replay, thresholds, selection
    report.checks_run.append("budget conservation and growth gate")
    report.checks_run.append("threshold k and top-k selection")
    R = R0
    started = False
    grown = {}
    for i, ev in enumerate(rec.growth_events):
        t = ev["t"]
        where = f"event {i} (t={t})"
        if t <= t0 or (t - t0) % interval != 0 or t > T:
            report.fail("gate", where, f"growth outside the update boundaries (t0={t0}, interval={interval})")
        if R <= 0:
            report.fail("gate", where, f"growth after budget exhaustion (R={R})")
        if not started:
            R -= r_init * M
            started = True
        if ev["R_before"] != R:
            report.fail("budget", where, f"R_before={ev['R_before']} but replay gives {R}")
        k = ev["k"]
        if k != len(ev["selected"]):
            report.fail("threshold", where, f"k={k} but {len(ev['selected'])} sites selected")
        n_elig = None
        if t in ckpts:
            n_elig = sum(1 for s in ckpts[t] if s["r"] + delta_r <= min(s["n"], s["d"]))
        expect_k = oracle_k(mode, R, t, t0, T, M, sched["k_fixed"], n_elig)
        if k != expect_k:
            report.fail("threshold", where, f"k={k}, expected {expect_k} ({mode}, R={R})")
        scores = {sid: float(row["score"]) for sid, row in rows_by_t.get(t, {}).items()}
        if t in ckpts:
            eligible = {s["site_id"] for s in ckpts[t] if s["r"] + delta_r <= min(s["n"], s["d"])}
            scores = {sid: v for sid, v in scores.items() if sid in eligible}
        if scores:
            picked = _top_k(scores, k)
            if picked != list(ev["selected"]):
                report.fail("selection", where, f"selected {ev['selected']}, top-{k} by score is {picked}")
            s_theta = min(scores[s] for s in picked)
            if not _close(ev["S_theta"], s_theta):
                report.fail("selection", where, f"S_theta={ev['S_theta']!r}, expected {s_theta!r}")
        R -= delta_r * k
        if ev["R_after"] != R:
            report.fail("budget", where, f"R_after={ev['R_after']} but replay gives {R}")
        for sid in ev["selected"]:
            grown[sid] = grown.get(sid, 0) + 1

    total_k = sum(ev["k"] for ev in rec.growth_events)
    if rec.steps:
        R_final = rec.steps[-1]["R_t"]
        if started and r_init * M + delta_r * total_k != R0 - R_final:
            report.fail("budget", "end of run",
                        f"r_init*M + delta_r*sum(k) = {r_init * M + delta_r * total_k} != R_0 - R_final = {R0 - R_final}")
        # the initial charge alone may exhaust the budget without any event
        if not started and R_final != R0 and not (R_final == R0 - r_init * M and R_final <= 0):
            report.fail("budget", "end of run", f"no events but R_final={R_final} != R_0={R0}")

    report.checks_run.append("final ranks against the growth log")
    for row in rec.final_ranks:
        expect = r_init + delta_r * grown.get(row["site_id"], 0)
        if row["rank"] != expect:
            report.fail("ranks", f"site={row['site_id']}", f"final rank {row['rank']}, growth log implies {expect}")
    if "final" in ckpts:
        final_r = {s["site_id"]: s["r"] for s in ckpts["final"]}
        for row in rec.final_ranks:
            if final_r.get(row["site_id"]) != row["rank"]:
                report.fail("ranks", f"site={row['site_id']}", "final checkpoint rank disagrees with rank table")
    return report
