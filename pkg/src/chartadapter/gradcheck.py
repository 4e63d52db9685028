"""Finite-difference verification battery covering every differentiable path.

Each check compares backward() against central differences on a tiny random
instance and reports the worst relative error across a set of seeds.
Primitive checks must land under 1e-3; the full connector composition gets
2e-3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import (
    AdapterConfig,
    AdapterParams,
    adapter_forward,
    cross_modal_interact,
    inverse_project,
    latent_transform,
    project,
    semantic_decode,
)
from .backbone import LMConfig, PrefixComposition, TinyLM, compose_input, lm_loss
from .config import rng_for
from .tensor import (
    Tensor,
    add,
    concat_rows,
    constant,
    cross_entropy_logits,
    embedding_lookup,
    finite_difference_check,
    gelu,
    l2_normalize_rows,
    layer_norm_rows,
    matmul,
    mean_all,
    multiply,
    parameter,
    relu,
    scale,
    softmax_rows,
    subtract,
    sum_all,
    transpose,
)

PRIMITIVE_TOL = 1e-3
COMPOSITION_TOL = 2e-3
STEP = 1e-3
_KINK_MARGIN = 0.02  # keep ReLU pre-activations clear of the step size


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_err < self.tol


def _rand(rng, rows, cols, requires_grad=True):
    return Tensor(rng.standard_normal((rows, cols)).astype(np.float32),
                  requires_grad=requires_grad)


def _randomize(named_tensors, rng, scale=0.6):
    """Overwrite parameters with O(1) values so check gradients are well scaled.

    Layer-norm gains stay near one and biases get moderate offsets; the
    production initialization scales are deliberately not used here.
    """
    for name, t in named_tensors:
        if name.endswith("gamma"):
            t.data[...] = (1.0 + 0.2 * rng.standard_normal(t.shape)).astype(t.data.dtype)
        else:
            t.data[...] = (scale * rng.standard_normal(t.shape)).astype(t.data.dtype)


def _mlp_preactivations(params):
    mu = params.latent_queries.data.astype(np.float64)
    inner_pre = mu @ params.mlp.w2.data.T.astype(np.float64) + params.mlp.b2.data.astype(np.float64)
    inner = np.maximum(inner_pre, 0.0)
    outer_pre = inner @ params.mlp.w1.data.T.astype(np.float64) + params.mlp.b1.data.astype(np.float64)
    return inner_pre, outer_pre


def _sq_mean(t: Tensor) -> Tensor:
    return mean_all(multiply(t, t))


def _check_many(f, tensors: dict[str, Tensor], step: float = STEP) -> float:
    """Worst finite-difference error over several perturbed tensors.

    ``f`` takes no arguments; it closes over the tensors being checked.
    """
    worst = 0.0
    for t in tensors.values():
        worst = max(worst, finite_difference_check(lambda _x: f(), t, step))
    return worst


def _primitive_checks(rng) -> list[tuple[str, float, float]]:
    checks = []

    a = _rand(rng, 3, 4)
    b = _rand(rng, 4, 2)
    checks.append(("matmul", _check_many(
        lambda: sum_all(matmul(a, b)), {"a": a, "b": b}), PRIMITIVE_TOL))

    # keep inputs away from the kink so central differences see one branch
    x_relu = Tensor(rng.uniform(0.2, 1.2, (3, 5)).astype(np.float32)
                    * rng.choice([-1.0, 1.0], (3, 5)).astype(np.float32),
                    requires_grad=True)
    checks.append(("relu", _check_many(
        lambda: _sq_mean(relu(x_relu)), {"x": x_relu}), PRIMITIVE_TOL))

    x = _rand(rng, 3, 5)
    checks.append(("gelu", _check_many(lambda: _sq_mean(gelu(x)), {"x": x}),
                   PRIMITIVE_TOL))

    xs = _rand(rng, 2, 4)
    checks.append(("softmax_rows", _check_many(
        lambda: _sq_mean(softmax_rows(xs)), {"x": xs}), PRIMITIVE_TOL))

    m = _rand(rng, 3, 4)
    bias = _rand(rng, 1, 4)
    checks.append(("add_bias_row", _check_many(
        lambda: _sq_mean(add(m, bias)), {"m": m, "bias": bias}), PRIMITIVE_TOL))

    u = _rand(rng, 3, 3)
    v = _rand(rng, 3, 3)
    checks.append(("add", _check_many(
        lambda: _sq_mean(add(u, v)), {"u": u, "v": v}), PRIMITIVE_TOL))
    checks.append(("subtract", _check_many(
        lambda: _sq_mean(subtract(u, v)), {"u": u, "v": v}), PRIMITIVE_TOL))
    checks.append(("multiply", _check_many(
        lambda: _sq_mean(multiply(u, v)), {"u": u, "v": v}), PRIMITIVE_TOL))
    checks.append(("scale", _check_many(
        lambda: _sq_mean(scale(u, -1.7)), {"u": u}), PRIMITIVE_TOL))
    checks.append(("transpose", _check_many(
        lambda: _sq_mean(transpose(u)), {"u": u}), PRIMITIVE_TOL))

    p1 = _rand(rng, 2, 3)
    p2 = _rand(rng, 4, 3)
    checks.append(("concat_rows", _check_many(
        lambda: _sq_mean(concat_rows([p1, p2])), {"p1": p1, "p2": p2}),
        PRIMITIVE_TOL))

    table = _rand(rng, 6, 4)
    idx = np.array([0, 3, 3, 5])
    checks.append(("embedding_lookup", _check_many(
        lambda: _sq_mean(embedding_lookup(table, idx)), {"table": table}),
        PRIMITIVE_TOL))

    checks.append(("mean", _check_many(lambda: mean_all(multiply(u, u)), {"u": u}),
                   PRIMITIVE_TOL))
    checks.append(("sum", _check_many(lambda: sum_all(multiply(u, u)), {"u": u}),
                   PRIMITIVE_TOL))

    xl = _rand(rng, 3, 6)
    gamma = Tensor(rng.uniform(0.5, 1.5, (1, 6)).astype(np.float32), requires_grad=True)
    beta = _rand(rng, 1, 6)
    checks.append(("layer_norm_rows", _check_many(
        lambda: _sq_mean(layer_norm_rows(xl, gamma, beta)),
        {"x": xl, "gamma": gamma, "beta": beta}), PRIMITIVE_TOL))

    xn = Tensor((rng.standard_normal((3, 5)) + 2.0).astype(np.float32),
                requires_grad=True)
    checks.append(("l2_normalize_rows", _check_many(
        lambda: _sq_mean(l2_normalize_rows(xn)), {"x": xn}), PRIMITIVE_TOL))

    logits = _rand(rng, 5, 7)
    targets = np.array([2, -1, 0, 6, -1])
    checks.append(("cross_entropy_logits", _check_many(
        lambda: cross_entropy_logits(logits, targets), {"logits": logits}),
        PRIMITIVE_TOL))

    return checks


def _adapter_checks(rng) -> list[tuple[str, float, float]]:
    checks = []
    cfg = AdapterConfig(d_v=5, d_t=8, n_q=3, n_layers=1, n_heads=2,
                        d_hidden_mlp=6, d_l=8)
    params = AdapterParams(cfg, rng)
    for _, tensors in params.groups().items():
        _randomize(tensors, rng)
    # keep every ReLU pre-activation away from the kink so a +-step
    # perturbation cannot flip a branch under the central difference
    for _ in range(200):
        inner_pre, outer_pre = _mlp_preactivations(params)
        if (np.abs(inner_pre).min() > _KINK_MARGIN
                and np.abs(outer_pre).min() > _KINK_MARGIN):
            break
        _randomize([("mu", params.latent_queries)] + params.mlp.named_parameters(), rng)
    else:
        raise RuntimeError("could not place ReLU pre-activations clear of the kink")
    x = _rand(rng, 3, cfg.d_v, requires_grad=True)

    checks.append(("project", _check_many(
        lambda: _sq_mean(project(x, params.projector)),
        {"x": x, "M": params.projector}), PRIMITIVE_TOL))

    mlp_tensors = {name: t for name, t in params.mlp.named_parameters()}
    mlp_tensors["mu"] = params.latent_queries
    checks.append(("latent_transform", _check_many(
        lambda: _sq_mean(latent_transform(params.latent_queries, params.mlp)),
        mlp_tensors), PRIMITIVE_TOL))

    g = _rand(rng, 3, cfg.d_t)
    sigma = _rand(rng, cfg.n_q, cfg.d_t)
    inter_tensors = {name: t for name, t in
                     params.interaction.named_parameters("interaction")}
    inter_tensors.update({"g": g, "sigma": sigma})
    checks.append(("cross_modal_interact", _check_many(
        lambda: _sq_mean(cross_modal_interact(g, sigma, params.interaction)),
        inter_tensors), PRIMITIVE_TOL))

    h = _rand(rng, 3, cfg.d_t)
    dec_tensors = {name: t for name, t in params.decoder.named_parameters("decoder")}
    dec_tensors.update({"mu": params.latent_queries, "h": h})
    checks.append(("semantic_decode", _check_many(
        lambda: _sq_mean(semantic_decode(params.latent_queries, h, params.decoder)),
        dec_tensors), PRIMITIVE_TOL))

    e = _rand(rng, cfg.n_q, cfg.d_t)
    checks.append(("inverse_project", _check_many(
        lambda: _sq_mean(inverse_project(e, params.projector)),
        {"e": e, "M": params.projector}), PRIMITIVE_TOL))

    def shared_loss():
        fwd = _sq_mean(project(x, params.projector))
        back = _sq_mean(inverse_project(e, params.projector))
        return add(fwd, back)

    checks.append(("shared_projector", _check_many(
        shared_loss, {"M": params.projector}), PRIMITIVE_TOL))

    all_params = {f"{group}.{name}": t
                  for group, tensors in params.groups().items()
                  for name, t in tensors}
    all_params["x"] = x
    checks.append(("adapter_forward", _check_many(
        lambda: _sq_mean(adapter_forward(x, params).r), all_params),
        COMPOSITION_TOL))
    return checks


def _lm_checks(rng) -> list[tuple[str, float, float]]:
    cfg = LMConfig(vocab_size=11, d_l=8, n_blocks=1, n_heads=2, d_ff=16, max_seq=32)
    lm = TinyLM(cfg, rng)
    _randomize(lm.named_parameters(), rng, scale=0.4)
    comp = PrefixComposition(cfg.d_l, 3, 4, rng)
    _randomize(comp.named_parameters(), rng, scale=0.6)
    r = _rand(rng, 2, 3, requires_grad=False)
    g = _rand(rng, 2, 4, requires_grad=False)
    prompt = [3, 5]
    targets = [6, 9, 7, 2]  # ends with <eos>

    def loss():
        composed, prefix_len = compose_input(
            prompt, r, g, comp, lm, [1] + targets[:-1])
        return lm_loss(lm, composed, prefix_len, targets)

    err = _check_many(loss, {"w_r": comp.w_r, "w_g": comp.w_g})
    return [("lm_loss_prefix_projections", err, PRIMITIVE_TOL)]


def run_gradient_suite(base_seed: int = 0, n_seeds: int = 5) -> list[CheckResult]:
    """Run every check on ``n_seeds`` seeds; report the worst error of each."""
    worst: dict[str, tuple[float, float]] = {}
    for k in range(n_seeds):
        rng = rng_for(base_seed + k, "gradcheck")
        for name, err, tol in (_primitive_checks(rng)
                               + _adapter_checks(rng)
                               + _lm_checks(rng)):
            prev = worst.get(name, (0.0, tol))[0]
            worst[name] = (max(prev, err), tol)
    return [CheckResult(name=name, max_err=err, tol=tol)
            for name, (err, tol) in worst.items()]


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>12}  {'tol':>8}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_err:>12.3e}  {r.tol:>8.0e}  {status}")
    return "\n".join(lines)
