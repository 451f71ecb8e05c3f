"""Self-contained invariant suite run by ``smdsr check``.

Every check returns ``(passed, detail)``. The schedule builder and the
sampler are injectable so that deliberately broken variants can be fed in
to confirm the corresponding check actually fails.
"""

from __future__ import annotations

import contextlib
import inspect
import math
import time
from collections.abc import Callable
from dataclasses import dataclass
from unittest import mock

import numpy as np

from smdsr import denoiser, diffusion, imageio, mask, schedule, train

# parameter names that would let mask data reach the inference path
MASK_WORDS = ("mask", "e_sam", "spe", "label", "region", "seg")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SuiteReport:
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        lines = [f"{r.name}={'pass' if r.passed else 'fail'} {r.detail} ({r.seconds:.2f}s)" for r in self.results]
        lines.append(f"overall={'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def check_schedule(build: Callable) -> tuple[bool, str]:
    worst = 0.0
    for T, kind in ((1, "cosine"), (10, "cosine"), (100, "cosine"), (10, "linear")):
        sch = build(T, kind)
        if sch.posterior_beta_tilde[1] != 0.0:
            return False, f"beta_tilde_1 != 0 for T={T}"
        if not np.all(np.diff(sch.alpha_bar) < 0):
            return False, f"alpha_bar not strictly decreasing for T={T}"
        for t in range(1, T + 1):
            direct = schedule.phi_direct(sch, t)
            worst = max(worst, abs(direct - sch.phi[t]) / max(1.0, abs(direct)))
    return worst <= 1e-10, f"phi_rel_err={worst:.3g}"


def check_posterior(build: Callable, seed: int, n: int = 1000) -> tuple[bool, str]:
    sch = build(100, "cosine")
    rng = np.random.default_rng(seed)
    ts = rng.integers(2, sch.T + 1, size=n)
    shape = (n, 3, 4, 4)
    out = []
    for dtype, tol in ((np.float32, 1e-5), (np.float64, 1e-10)):
        x0 = rng.uniform(-1, 1, shape).astype(dtype)
        e = rng.uniform(-1.5, 1.5, (n, 1, 4, 4)).astype(dtype)
        eps = rng.standard_normal(shape).astype(dtype)
        x_t = diffusion.forward_jump(x0, e, sch, ts, eps)
        a = diffusion.posterior_mean_eps(x_t, diffusion.loss_target(e, eps, sch, ts), sch, ts)
        b = diffusion.posterior_mean_x0(x_t, x0, e, eps, sch, ts)
        err = _rel(a, b)
        out.append((err <= tol, f"{np.dtype(dtype).name}_rel_err={err:.3g}"))
    return all(p for p, _ in out), " ".join(d for _, d in out)


def check_forward_identity(build: Callable) -> tuple[bool, str]:
    sch = build(100, "cosine")
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, (3, 8, 8))
    e = rng.uniform(-1.5, 1.5, (1, 8, 8))
    zero = np.zeros_like(x0)
    x, worst = x0, 0.0
    for t in range(1, sch.T + 1):
        x = diffusion.forward_step(x, e, sch, t, zero)
        worst = max(worst, _rel(x, diffusion.forward_jump(x0, e, sch, t, zero)))
    return worst <= 1e-6, f"rel_err={worst:.3g}"


def exact_target_oracle(x0, e_sam, sch):
    """Denoiser that returns the exact training target implied by x_t."""
    def denoise(x_t, t, condition):
        eps = (x_t - math.sqrt(sch.alpha_bar[t]) * x0 - sch.phi[t] * e_sam) / math.sqrt(1 - sch.alpha_bar[t])
        return diffusion.loss_target(e_sam, eps, sch, t)
    return denoise


def check_oracle_sampler(build: Callable, sampler: Callable, seed: int) -> tuple[bool, str]:
    worst = 0.0
    for T in (1, 100):
        sch = build(T, "cosine")
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-1, 1, (3, 16, 16))
        e = rng.uniform(-1.5, 1.5, (1, 16, 16))
        opts = diffusion.SamplerOptions(seed=seed, sampling_noise=False)
        out = sampler(exact_target_oracle(x0, e, sch), np.zeros_like(x0), sch, opts)
        worst = max(worst, float(np.max(np.abs(out - x0))))
    return worst <= 1e-4, f"max_abs_err={worst:.3g}"


def check_gradient(seed: int) -> tuple[bool, str]:
    spec = denoiser.DenoiserSpec(1, 1, 4, 1, 3, 4)
    params = denoiser.init_params(spec, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 1, 5, 5))
    c = rng.standard_normal((2, 1, 5, 5))
    target = rng.standard_normal((2, 1, 5, 5))
    t = np.array([3, 70])
    _, grad = denoiser.mse_loss_and_grad(params, x, t, c, target)
    h, worst = 1e-3, 0.0
    for i in range(spec.num_params()):
        keep = params.vector[i]
        params.vector[i] = keep + h
        up, _ = denoiser.mse_loss_and_grad(params, x, t, c, target)
        params.vector[i] = keep - h
        down, _ = denoiser.mse_loss_and_grad(params, x, t, c, target)
        params.vector[i] = keep
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - grad[i]) / max(abs(num), abs(grad[i]), 1e-8))
    return worst <= 1e-4, f"params={spec.num_params()} max_rel_err={worst:.3g}"


def check_spe() -> tuple[bool, str]:
    labels = np.zeros((8, 12), dtype=np.uint16)
    labels[:, 5:] = 1
    labels[6:, :3] = 2
    for scheme in mask.SCHEMES:
        spe = mask.encode_label_map(labels, scheme)[0]
        for lab in np.unique(labels):
            vals = spe[labels == lab]
            if not np.all(vals == vals[0]):
                return False, f"{scheme}: not piecewise constant"
        if np.any(mask.encode_label_map(np.full((8, 12), 4), scheme) != 0.0):
            return False, f"{scheme}: single region is not all-zero"
    _, _, spe = mask.crop_pair(np.zeros((3, 8, 12)), labels, (0, 0, 4, 4))
    if np.any(spe != 0.0):
        return False, "single-region crop not reduced to zero"
    _, _, spe = mask.crop_pair(np.zeros((3, 8, 12)), labels, (0, 2, 8, 8))
    if not np.array_equal(spe, mask.encode_label_map(labels[:, 2:10])):
        return False, "crop not re-encoded"
    return True, f"schemes={','.join(mask.SCHEMES)}"


def check_vanilla(build: Callable, seed: int) -> tuple[bool, str]:
    sch = build(100, "cosine")
    rng = np.random.default_rng(seed)
    zero_e = np.zeros((1, 6, 6))
    worst = 0.0
    for t in range(2, sch.T + 1):
        x0 = rng.uniform(-1, 1, (3, 6, 6))
        eps = rng.standard_normal(x0.shape)
        beta, abar, abar_prev = sch.beta[t], sch.alpha_bar[t], sch.alpha_bar[t - 1]
        ref_xt = math.sqrt(abar) * x0 + math.sqrt(1 - abar) * eps
        ref_mean = (math.sqrt(abar_prev) * beta * x0 + math.sqrt(1 - beta) * (1 - abar_prev) * ref_xt) / (1 - abar)
        x_t = diffusion.forward_jump(x0, zero_e, sch, t, eps)
        target = diffusion.loss_target(zero_e, eps, sch, t)
        worst = max(worst, _rel(x_t, ref_xt), _rel(target, eps),
                    _rel(diffusion.posterior_mean_eps(x_t, target, sch, t), ref_mean))
    return worst <= 1e-10, f"rel_err={worst:.3g}"


@contextlib.contextmanager
def _mask_access_forbidden():
    """Make every mask-producing entry point raise while the block runs."""
    def refuse(*args, **kwargs):
        raise RuntimeError("mask data accessed on the inference path")

    targets = [(mask, n) for n in ("encode_spe", "encode_label_map", "regions_from_label_map",
                                   "crop_pair", "label_map_from_masks", "embedding_grid", "rope_grid")]
    targets += [(imageio, n) for n in ("read_label_map", "read_spe")]
    with contextlib.ExitStack() as stack:
        for module, name in targets:
            stack.enter_context(mock.patch.object(module, name, refuse))
        yield


def _mask_params(fn) -> list[str]:
    names = inspect.signature(fn).parameters
    return [n for n in names if any(w in n.lower() for w in MASK_WORDS)]


def check_no_mask_inference(sampler: Callable, seed: int) -> tuple[bool, str]:
    for label, fn in (("sampler", sampler), ("restore", train.restore)):
        bad = _mask_params(fn)
        if bad:
            return False, f"{label} takes mask-like parameters {bad}"
    spec = denoiser.DenoiserSpec(3, 3, 4, 1, 3, 4)
    ckpt = denoiser.Checkpoint(denoiser.init_params(spec, seed),
                               denoiser.AdamState.zeros(spec.num_params()), 5, "cosine", 0.008)
    sch = schedule.build_schedule(5, "cosine")
    lr = np.random.default_rng(seed).integers(0, 256, (3, 4, 4), dtype=np.uint8)
    try:
        with _mask_access_forbidden():
            sampler(denoiser.as_callable(ckpt.params), np.zeros((3, 16, 16)), sch,
                    diffusion.SamplerOptions(seed=seed))
            with mock.patch.object(diffusion, "reverse_sample", sampler):
                train.restore(ckpt, lr, seed)
    except RuntimeError as exc:
        return False, str(exc)
    return True, "signature and runtime clean"


def run_invariant_suite(seed: int = 0, schedule_factory: Callable | None = None,
                        sampler: Callable | None = None) -> SuiteReport:
    """Run every invariant check; overrides exist for mutation testing."""
    build = schedule_factory or schedule.build_schedule
    sample = sampler or diffusion.reverse_sample
    checks = [
        ("schedule_algebra", lambda: check_schedule(build)),
        ("posterior_equivalence", lambda: check_posterior(build, seed)),
        ("forward_identity", lambda: check_forward_identity(build)),
        ("oracle_sampler", lambda: check_oracle_sampler(build, sample, seed)),
        ("gradient", lambda: check_gradient(seed)),
        ("spe_contract", check_spe),
        ("vanilla_reduction", lambda: check_vanilla(build, seed)),
        ("no_mask_inference", lambda: check_no_mask_inference(sample, seed)),
    ]
    results = []
    for name, fn in checks:
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            passed, detail = False, f"error: {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return SuiteReport(results)
