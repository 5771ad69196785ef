"""Property suites for the projector, non-expansiveness, least-squares optimality,
gradient bounds, finite-difference gradients, aggregation and the wire audit.

Each suite returns a ``SuiteResult`` with its case count, failure count and
the largest residual seen per property. ``FAULTS`` names deliberate bugs that
can be switched on to confirm a suite actually catches them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import FrozenEncoder, encode_prompt
from .federation import HEADER, aggregate, aggregation_weights, decode_upload
from .objectives import Batch, LossSettings, PromptModel, separate_loss, stretch_loss, term_gradients
from .prompts import TokenTable
from .refinement import SubspaceProjector, build_projector, least_squares_oracle, refine
from .tensor import frobenius_norm, spectral_norm, stream, svd

FAULTS = {
    "skip-symmetrization": "leave an antisymmetric 1e-6 error in R that symmetrization would cancel",
    "identity-refine": "refine returns the local prompt unchanged",
    "flip-sep-gradient": "separate-loss gradient with the wrong sign",
    "unnormalized-weights": "aggregate with raw sample counts as weights",
    "leak-local-prompt": "append the local prompt to each upload",
}

LAMBDAS = (0.1, 0.25, 0.5, 0.6, 0.75, 0.9)
DIMS = (16, 32, 64)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    residuals: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cases > 0 and self.failures == 0

    def record(self, key: str, value: float, ok: bool) -> bool:
        self.residuals[key] = max(self.residuals.get(key, 0.0), float(value))
        if not ok:
            self.failures += 1
            if len(self.notes) < 5:
                self.notes.append(f"case {self.cases}: {key} = {value:.3e}")
        return ok

    def line(self) -> str:
        worst = ", ".join(f"{k}={v:.2e}" for k, v in self.residuals.items())
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.cases} cases, {self.failures} failures, {self.seconds:.2f}s; max {worst}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _projector(g, lam, faults) -> SubspaceProjector:
    proj = build_projector(g, lam)
    if "skip-symmetrization" in faults:
        n = stream(0, "fault/skew", g.shape[1]).standard_normal((proj.dim, proj.dim))
        raw = proj.R + 1e-6 * (n - n.T)
        proj = SubspaceProjector(raw, proj.lam, proj.r, proj.m_prime, proj.tag, proj.source)
    return proj


def _refine(g_c, proj, faults):
    return np.array(g_c, dtype=np.float64) if "identity-refine" in faults else refine(g_c, proj)


def _global_prompt(seed: int, case: int, s_s: int, m: int) -> np.ndarray:
    rng = stream(seed, "checks/global", case)
    # a spread of singular values, with an occasional exactly rank-deficient prompt
    g = rng.standard_normal((s_s, m)) * rng.uniform(0.1, 3.0)
    if case % 7 == 3:
        g[-1] = g[0]
    return g


@_timed
def projector_suite(cases: int = 200, seed: int = 0, faults=()) -> SuiteResult:
    """Idempotent, symmetric, spectral norm <= 1, trace and rank equal m_prime."""
    res = SuiteResult("projector")
    combos = [(m, lam) for m in DIMS for lam in LAMBDAS]
    for case in range(cases):
        m, lam = combos[case % len(combos)]
        proj = _projector(_global_prompt(seed, case, 8, m), lam, faults)
        r = proj.R
        res.cases += 1
        ok = res.record("idempotence", frobenius_norm(r @ r - r), frobenius_norm(r @ r - r) <= 1e-9)
        ok &= res.record("symmetry", frobenius_norm(r - r.T), frobenius_norm(r - r.T) <= 1e-9)
        sn = spectral_norm(r)
        ok &= res.record("spectral_excess", sn - 1.0, sn <= 1.0 + 1e-8)
        sv = svd(r).singular_values
        ok &= res.record("spectral_vs_svd", abs(sn - sv[0]), abs(sn - sv[0]) <= 1e-6)
        ok &= res.record("trace", abs(np.trace(r) - proj.m_prime), abs(np.trace(r) - proj.m_prime) <= 1e-6)
        rank = int(np.count_nonzero(sv > 0.5))
        ok &= res.record("rank", abs(rank - proj.m_prime), rank == proj.m_prime)
        if proj.m_prime != m - int(np.floor(round(lam * m, 9))):
            res.record("m_prime", 1.0, False)
    return res


@_timed
def nonexpansive_suite(cases: int = 1000, seed: int = 0, faults=()) -> SuiteResult:
    """||AR||_F <= ||A||_F, ||A - AR||_F <= ||A||_F and the orthogonal split A = AR + A(I - R)."""
    res = SuiteResult("non-expansiveness")
    for case in range(cases):
        rng = stream(seed, "checks/nonexpansive", case)
        m = int(rng.choice(DIMS))
        proj = _projector(_global_prompt(seed + 1, case, 8, m), float(rng.choice(LAMBDAS)), faults)
        a = rng.standard_normal((int(rng.integers(1, 65)), m)) * rng.uniform(0.01, 10.0)
        ar = _refine(a, proj, faults)
        na = frobenius_norm(a)
        res.cases += 1
        over1 = frobenius_norm(ar) - na
        over2 = frobenius_norm(a - ar) - na
        res.record("||AR||-||A||", max(over1, 0.0), over1 <= 1e-12 * max(1.0, na))
        res.record("||A-AR||-||A||", max(over2, 0.0), over2 <= 1e-12 * max(1.0, na))
        rest = a @ (np.eye(m) - proj.R)
        split = frobenius_norm(ar + rest - a)
        res.record("split", split, split <= 1e-12 * max(1.0, na))
        inner = abs(float(np.sum(ar * rest)))
        res.record("split_inner/||A||^2", inner / na**2, inner <= 1e-8 * na**2)
    return res


@_timed
def least_squares_suite(cases: int = 100, perturbations: int = 50, seed: int = 0, faults=()) -> SuiteResult:
    """refine equals the least-squares oracle and beats every sampled feasible alternative."""
    res = SuiteResult("least-squares optimality")
    for case in range(cases):
        rng = stream(seed, "checks/least-squares", case)
        m = int(rng.choice(DIMS))
        proj = _projector(_global_prompt(seed + 2, case, 8, m), float(rng.choice(LAMBDAS)), faults)
        g_c = rng.standard_normal((int(rng.integers(4, 65)), m))
        out = _refine(g_c, proj, faults)
        oracle = least_squares_oracle(g_c, proj)
        res.cases += 1
        gap = frobenius_norm(out - oracle)
        res.record("oracle_gap", gap, gap <= 1e-8)
        best = frobenius_norm(out - g_c)
        resid_id = abs(best - frobenius_norm(g_c @ (np.eye(m) - proj.R)))
        res.record("residual_identity", resid_id, resid_id <= 1e-9)
        x2 = proj.basis
        worst_margin = np.inf
        for _ in range(perturbations):
            # feasible: every row stays in span(X2)
            coeff = rng.standard_normal((g_c.shape[0], x2.shape[1])) * rng.uniform(1e-3, 1.0)
            u = oracle + coeff @ x2.T
            worst_margin = min(worst_margin, frobenius_norm(u - g_c) - best)
        res.record("feasible_not_better", max(-worst_margin, 0.0), worst_margin > 0.0)
    return res


def _small_model(seed: int, case: int, m: int = 12, num_classes: int = 5, temperature: float = 0.5):
    enc = FrozenEncoder.from_seed(m, seed * 100_003 + case, weight_scale=1.5, bias_scale=0.3)
    tokens = TokenTable(m, num_classes, seed * 100_003 + case, token_scale=1.0, label_scale=1.0)
    return PromptModel(enc, tokens, temperature)


def _instance(seed: int, case: int, m: int = 12):
    rng = stream(seed, "checks/instance", case)
    model = _small_model(seed, case, m)
    s_s, s_l = int(rng.integers(1, 5)), int(rng.integers(1, 7))
    g_s = rng.standard_normal((s_s, m)) * 0.5
    g_c = rng.standard_normal((s_l, m)) * 0.5
    n = int(rng.integers(1, 9))
    feats = np.tanh(rng.standard_normal((n, m)))
    batch = Batch(feats, rng.integers(0, model.tokens.num_classes, size=n))
    proj = build_projector(g_s, float(rng.choice(LAMBDAS)))
    return rng, model, g_s, g_c, batch, proj


@_timed
def gradient_bound_suite(cases: int = 500, lipschitz_pairs: int = 1000, seed: int = 0, faults=()) -> SuiteResult:
    """Stretch-gradient and hinge-gradient bounds with L_d = ||W||_2 / sqrt(S_l), plus the Lipschitz probe."""
    res = SuiteResult("gradient bounds")
    for case in range(cases):
        rng, model, g_s, g_c, batch, proj = _instance(seed, case)
        enc = model.encoder
        l_d = enc.lipschitz(g_c.shape[0])
        refined = refine(g_c, proj)
        dist = float(np.linalg.norm(encode_prompt(g_c, enc) - encode_prompt(g_s, enc)))
        settings = LossSettings(gamma=dist + float(rng.uniform(0.01, 1.0)))
        _, grads = term_gradients(g_s, g_c, refined, batch, model, settings)
        d_sep = -grads["sep"].d_local if "flip-sep-gradient" in faults else grads["sep"].d_local
        res.cases += 1
        g_str = frobenius_norm(grads["str"].d_local)
        bound = 2.0 * l_d**2 * frobenius_norm(g_c - refined)
        res.record("str_grad_over_bound", max(g_str - bound, 0.0), g_str <= bound * (1 + 1e-12) + 1e-15)
        g_sep = frobenius_norm(d_sep)
        res.record("sep_grad_over_L_d", max(g_sep - l_d, 0.0), g_sep <= l_d * (1 + 1e-12))
    worst = -np.inf
    for pair in range(lipschitz_pairs):
        rng = stream(seed, "checks/lipschitz", pair)
        m, s = int(rng.integers(2, 17)), int(rng.integers(1, 9))
        enc = FrozenEncoder.from_seed(m, pair, weight_scale=float(rng.uniform(0.5, 3.0)))
        a = rng.standard_normal((s, m))
        # half the probes use a shared row difference, the worst case for mean pooling
        b = a + (rng.standard_normal(m) if pair % 2 else rng.standard_normal((s, m))) * rng.uniform(1e-4, 2.0)
        ratio = np.linalg.norm(encode_prompt(a, enc) - encode_prompt(b, enc)) / frobenius_norm(a - b)
        excess = ratio / enc.lipschitz(s) - 1.0
        worst = max(worst, excess)
        res.cases += 1
        res.record("lipschitz_excess", max(excess, 0.0), excess <= 1e-9)
    res.notes.append(f"largest observed ratio / L_d - 1 = {worst:.3e}")
    return res


def directional_check(fn, x: np.ndarray, grad: np.ndarray, direction: np.ndarray, h: float = 1e-5):
    """Relative error between <grad, v> and the central difference of fn along v."""
    analytic = float(np.sum(grad * direction))
    numeric = (fn(x + h * direction) - fn(x - h * direction)) / (2.0 * h)
    scale = max(abs(analytic), abs(numeric))
    return (abs(analytic - numeric) / scale if scale > 0 else 0.0), analytic, numeric


@_timed
def finite_difference_suite(probes: int = 50, seed: int = 0, faults=()) -> SuiteResult:
    """Every loss term's analytic gradient against central differences (h = 1e-5)."""
    res = SuiteResult("finite differences")
    terms = ("ce_global", "ce_local", "str", "sep", "ce_local|through-R", "str|through-R")
    for term in terms:
        for probe in range(probes):
            rng, model, g_s, g_c, batch, proj = _instance(seed + 7, probe + 1000 * terms.index(term))
            enc = model.encoder
            through = term.endswith("through-R")
            base = term.split("|")[0]
            refined = refine(g_c, proj)
            dist = float(np.linalg.norm(encode_prompt(g_c, enc) - encode_prompt(g_s, enc)))
            settings = LossSettings(gamma=dist + 0.5, detach_refined=not through)
            _, grads = term_gradients(g_s, g_c, refined, batch, model, settings, proj.R)
            if base == "ce_global":
                x, grad = g_s, grads["ce_global"].d_global

                def fn(v):
                    return term_gradients(v, g_c, refined, batch, model, settings)[0].ce_global

            else:
                x, grad = g_c, grads[base].d_local
                if base == "sep" and "flip-sep-gradient" in faults:
                    grad = -grad

                def fn(v, base=base):
                    ref = refine(v, proj) if through else refined
                    if base == "str":
                        return stretch_loss(v, ref, enc)
                    if base == "sep":
                        return separate_loss(v, g_s, settings.gamma, enc)
                    return term_gradients(g_s, v, ref, batch, model, settings, proj.R)[0].ce_local

            direction = rng.standard_normal(x.shape)
            direction /= frobenius_norm(direction)
            rel, _, _ = directional_check(fn, x, grad, direction)
            res.cases += 1
            res.record(term, rel, rel <= 1e-4)
    return res


def _aggregate(uploads, faults):
    if "unnormalized-weights" in faults:
        out = np.zeros_like(uploads[0][0])
        for p, h in uploads:
            out += h * p
        return out
    return aggregate(uploads)


@_timed
def aggregation_suite(cases: int = 200, seed: int = 0, faults=()) -> SuiteResult:
    """Weights sum to one, identical uploads are a fixed point, the result stays in the convex hull."""
    res = SuiteResult("aggregation")
    for case in range(cases):
        rng = stream(seed, "checks/aggregation", case)
        k = int(rng.integers(1, 12))
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 33)))
        sizes = rng.integers(1, 500, size=k)
        prompts = [rng.standard_normal(shape) * rng.uniform(0.1, 5.0) for _ in range(k)]
        res.cases += 1
        w = aggregation_weights(sizes)
        res.record("weight_sum", abs(w.sum() - 1.0), abs(w.sum() - 1.0) <= 1e-15 * max(1, k))
        agg = _aggregate(list(zip(prompts, sizes)), faults)
        stack = np.stack(prompts)
        slack = 1e-12 * (1.0 + np.abs(stack).max())
        below = float(np.max(stack.min(axis=0) - agg))
        above = float(np.max(agg - stack.max(axis=0)))
        res.record("hull_violation", max(below, above, 0.0), below <= slack and above <= slack)
        fixed = _aggregate([(prompts[0], h) for h in sizes], faults)
        gap = float(np.max(np.abs(fixed - prompts[0])))
        res.record("fixed_point", gap, gap <= 1e-12 * (1.0 + np.abs(prompts[0]).max()))
    res.cases += 1
    two = _aggregate([(np.ones((2, 2)), 1), (np.zeros((2, 2)), 3)], faults)
    res.record("two_upload_example", float(np.max(np.abs(two - 0.25))), np.allclose(two, 0.25, rtol=0, atol=1e-15))
    return res


def audit_wire_log(payloads: list[bytes], reports, global_shape, local_prompts_by_round) -> SuiteResult:
    """Every payload decodes to exactly one global prompt of ``global_shape``; no local prompt bytes appear."""
    res = SuiteResult("wire audit")
    rows, cols = global_shape
    expected_len = HEADER.size + 8 * rows * cols
    cursor = 0
    for report in reports:
        round_payloads = payloads[cursor : cursor + len(report.participating)]
        cursor += len(report.participating)
        ids = []
        for payload in round_payloads:
            res.cases += 1
            res.record("length_mismatch", abs(len(payload) - expected_len), len(payload) == expected_len)
            try:
                up = decode_upload(payload)
            except ValueError:
                res.record("undecodable", 1.0, False)
                continue
            ids.append(up.client_id)
            ok_shape = up.prompt.shape == (rows, cols) and up.prompt.size == rows * cols
            res.record("shape_mismatch", 0.0 if ok_shape else 1.0, ok_shape)
            res.record("round_mismatch", abs(up.round - report.round), up.round == report.round)
            for local in local_prompts_by_round.get(report.round, []):
                for row in np.asarray(local, dtype="<f8"):
                    leaked = row.tobytes() in payload
                    res.record("local_row_found", float(leaked), not leaked)
        ok_ids = ids == list(report.participating)
        res.record("participant_mismatch", 0.0 if ok_ids else 1.0, ok_ids)
    res.record("trailing_payloads", len(payloads) - cursor, cursor == len(payloads))
    return res


@_timed
def privacy_suite(rounds: int = 3, seed: int = 0, faults=()) -> SuiteResult:
    """Run a small federation with partial participation and audit every client-to-server byte."""
    from .config import ExperimentConfig
    from .experiment import build_experiment

    cfg = ExperimentConfig(seed=seed, rounds=rounds, n_per_class=30, participation=0.7, local_length_mode="uniform_random")
    exp = build_experiment(cfg)
    wire: list[bytes] = []
    locals_by_round: dict[int, list[np.ndarray]] = {}

    def snapshot(report):
        locals_by_round[report.round] = [c.local_prompt.copy() for c in exp.clients]
        if "leak-local-prompt" in faults:
            start = len(wire) - len(report.participating)
            by_id = {c.id: c for c in exp.clients}
            for i, cid in enumerate(report.participating):
                wire[start + i] += np.asarray(by_id[cid].local_prompt, dtype="<f8").tobytes()

    exp.run(wire_log=wire, on_round=snapshot)
    res = audit_wire_log(wire, exp.server.history, exp.server.global_prompt.shape, locals_by_round)
    res.name = "privacy (wire audit)"
    return res


SUITES = {
    "projector": projector_suite,
    "non-expansive": nonexpansive_suite,
    "least-squares": least_squares_suite,
    "gradient-bound": gradient_bound_suite,
    "gradient-fd": finite_difference_suite,
    "aggregation": aggregation_suite,
    "privacy": privacy_suite,
}


def run_checks(names=None, faults=(), seed: int = 0) -> list[SuiteResult]:
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s) {sorted(unknown)}; known: {sorted(FAULTS)}")
    names = list(SUITES) if names is None else list(names)
    return [SUITES[n](seed=seed, faults=tuple(faults)) for n in names]
