"""Central-difference gradient verification."""

import numpy as np

from .autograd import Parameter, Tape, no_grad
from .errors import NumericError


def _scalar(f):
    with no_grad():
        value = float(np.asarray(f().data))
    if not np.isfinite(value):
        raise NumericError("gradient check objective is not finite")
    return value


def grad_check(f, params, eps=1e-4, per_param=False):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument callable building a scalar loss from ``params``.
    Only trainable parameters are probed; frozen ones are covered by the
    frozen-gradient contract instead.  The relative error per coordinate is
    ``|a - c| / max(|a|, |c|, 1e-12)``.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("gradient check objective is not finite")
    tape.backward(loss)

    worst = 0.0
    report = {}
    for p in params:
        analytic = p.grad.copy()
        original = p.data
        numeric = np.empty_like(analytic)
        flat = numeric.reshape(-1)
        for i in range(original.size):
            bumped = original.copy()
            centre = bumped.flat[i]
            bumped.flat[i] = centre + eps
            p.data = bumped
            up = _scalar(f)
            bumped.flat[i] = centre - eps
            down = _scalar(f)
            flat[i] = (up - down) / (2 * eps)
        p.data = original
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
        err = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
        report[p.name] = err
        worst = max(worst, err)
    return (worst, report) if per_param else worst


# -- suites run by the ``gradcheck`` command ---------------------------------

OP_TOL = 1e-6
MODULE_TOL = 1e-5
FULL_TOL = 1e-4


def _away_from_zero(rng, shape, low=0.2):
    return rng.uniform(low, 1.5, shape) * rng.choice([-1.0, 1.0], shape)


def _op_cases(rng):
    """(name, op, input arrays); each op maps Tensors to one Tensor."""
    from . import autograd as ag

    n = rng.standard_normal
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    return [
        ("add", ag.add, [n((3, 4)), n((4,))]),
        ("sub", ag.sub, [n((3, 4)), n((3, 1))]),
        ("mul", ag.mul, [n((3, 4)), n((3, 4))]),
        ("div", ag.div, [n((3, 4)), pos(3, 4)]),
        ("neg", ag.neg, [n((5,))]),
        ("power", lambda a: ag.power(a, 2.5), [pos(6)]),
        ("relu", ag.relu, [_away_from_zero(rng, (3, 4))]),
        ("tanh", ag.tanh, [n((3, 4))]),
        ("sigmoid", ag.sigmoid, [n((3, 4))]),
        ("exp", ag.exp, [n((3, 4))]),
        ("log", ag.log, [pos(3, 4)]),
        ("sqrt", ag.sqrt, [pos(3, 4)]),
        ("matmul", ag.matmul, [n((3, 4)), n((4, 2))]),
        ("matmul_batched", ag.matmul, [n((2, 3, 4)), n((4, 2))]),
        ("sum", lambda a: ag.sum_(a, axis=1), [n((3, 4))]),
        ("mean", lambda a: ag.mean(a, axis=0, keepdims=True), [n((3, 4))]),
        ("reshape", lambda a: ag.reshape(a, (4, 3)), [n((3, 4))]),
        ("transpose", lambda a: ag.transpose(a, (2, 0, 1)), [n((2, 3, 4))]),
        ("swapaxes", lambda a: ag.swapaxes(a, 0, 2), [n((2, 3, 4))]),
        ("broadcast_to", lambda a: ag.broadcast_to(a, (3, 4)), [n((1, 4))]),
        ("getitem_slice", lambda a: ag.getitem(a, (slice(1, 3), slice(None, None, 2))), [n((4, 4))]),
        ("getitem_fancy", lambda a: ag.getitem(a, (np.array([0, 2, 2]), np.array([1, 0, 1]))), [n((3, 4))]),
        ("concat", lambda a, b: ag.concat([a, b], axis=1), [n((3, 2)), n((3, 3))]),
        ("stack", lambda a, b: ag.stack([a, b], axis=1), [n((3, 2)), n((3, 2))]),
        ("softmax", lambda a: ag.softmax(a, axis=-1), [n((3, 5))]),
        ("log_softmax", lambda a: ag.log_softmax(a, axis=-1), [n((3, 5))]),
        ("layer_norm", ag.layer_norm, [n((3, 6)), 1.0 + 0.1 * n((6,)), 0.1 * n((6,))]),
        ("l2_normalize", lambda a: ag.l2_normalize(a, axis=-1), [n((3, 5))]),
        ("cosine", lambda a, b: ag.cosine(a, b, axis=-1), [n((3, 5)), n((3, 5))]),
        ("conv1d_same", ag.conv1d_same, [n((3, 8)), n((3,)), n(())]),
        ("scaled_dot_attention", ag.scaled_dot_attention, [n((2, 3, 4)), n((2, 5, 4)), n((2, 5, 4))]),
    ]


def _projected(fn, params, rng):
    """Scalar sum(fn(*params) * W) with a fixed random W."""
    from . import autograd as ag

    with no_grad():
        shape = fn(*params).shape
    weights = ag.Tensor(rng.standard_normal(shape))
    return lambda: ag.sum_(fn(*params) * weights)


def op_suite(seed=0, eps=1e-4):
    """Relative error per primitive, float64 inputs of at most 64 elements."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, arrays in _op_cases(rng):
        params = [Parameter(a, name=f"{name}.{i}") for i, a in enumerate(arrays)]
        results.append((name, grad_check(_projected(fn, params, rng), params, eps), OP_TOL))
    return results


def _module_cases(rng):
    """(name, parameters to probe, output builder); inputs are probed too."""
    from .config import TextConfig, TFEConfig
    from .encoders import LSTM, AlignProjector, FramesEncoder, PolarityEncoder
    from .fusion import TFEBlock, TypeFusionEncoder, init_queries
    from .nn import MLP, LayerNorm, Linear, MultiHeadAttention, TransformerBlock
    from .objectives import contrastive_loss, polarity_loss, similarity_loss
    from .textual import PromptHead

    def x(*shape):
        return Parameter(rng.standard_normal(shape))

    cases = []

    def unit(name, module, call, *inputs):
        params = (module.trainable_parameters() if module is not None else []) + list(inputs)
        cases.append((name, params, lambda: call(*inputs)))

    lin = Linear(5, 3, rng)
    unit("Linear", lin, lin, x(3, 5))
    ln = LayerNorm(6)
    ln.gain.assign(1.0 + 0.1 * rng.standard_normal(6))
    unit("LayerNorm", ln, ln, x(3, 6))
    mha = MultiHeadAttention(8, 2, rng)
    unit("MultiHeadAttention", mha, mha, x(2, 3, 8), x(2, 4, 8))
    mlp = MLP(4, 6, rng)
    unit("MLP", mlp, mlp, x(3, 4))
    block = TransformerBlock(8, 2, rng, mlp_ratio=2)
    unit("TransformerBlock", block, block, x(2, 3, 8))
    lstm = LSTM(4, 3, rng)
    unit("LSTM", lstm, lstm, x(2, 3, 4))
    frames = FramesEncoder(8, 5, 1, 2, 4, rng)
    unit("FramesEncoder", frames, frames, x(2, 4, 8))
    align = AlignProjector(6, 4, 3, rng)
    unit("AlignProjector", align, align, x(2, 6))
    polar = PolarityEncoder(6, 4, rng)
    unit("PolarityEncoder", polar, lambda v: polar(v)[1], x(3, 6))
    tfe_block = TFEBlock(8, 2, 8, init_queries(3, 8, 0.0, 0.5, 1), rng)
    unit("TFEBlock", tfe_block, lambda q, f, s: tfe_block(q, f, s, inject=True), x(2, 3, 8), x(2, 2, 8), x(2, 2, 8))
    tfe = TypeFusionEncoder(TFEConfig(blocks=2, n_q=3, D_f=8, heads=2, mlp_hidden=8, sigma=0.5), 4, 5, 5, rng, seed=1)
    unit("TypeFusionEncoder", tfe, lambda f, s, p: tfe(f, s, p).pooled, x(2, 5), x(2, 5), x(2, 4))
    head = PromptHead(TextConfig(prompt_length=3, D_t=8, depth=1, heads=2, context_std=0.5), 6, rng)
    unit("PromptHead", head, head, x(2, 6))
    unit("similarity_loss", None, similarity_loss, x(3, 5), x(3, 5))
    unit("polarity_loss", None, lambda v: polarity_loss(v, [0, 2, 1]), x(3, 3))
    unit("contrastive_loss", None, lambda a, c: contrastive_loss(a, c, [0, 3, 2], 0.5), x(3, 6), x(4, 6))
    return cases


def module_suite(seed=0, eps=1e-5):
    # layer norms over few tokens are sharply curved; a smaller step keeps the
    # central-difference truncation error well under the tolerance
    rng = np.random.default_rng(seed)
    results = []
    for name, params, fn in _module_cases(rng):
        with no_grad():
            scalar = fn().ndim == 0
        f = fn if scalar else _projected(fn, [], rng)
        results.append((name, grad_check(f, params, eps), MODULE_TOL))
    return results


def micro_config():
    """A deliberately tiny end-to-end configuration for finite differences."""
    from .config import RunConfig

    return RunConfig().replace(
        data={"clips_per_class": 1, "T": 3, "H": 32, "W": 32, "face_size": 16},
        vision={"patch": 16, "D": 8, "depth": 2, "heads": 2, "early_blocks": 1, "mlp_ratio": 2},
        streams={"F": 8, "F_p": 4, "frames_heads": 2},
        tfe={"blocks": 2, "n_q": 2, "D_f": 8, "heads": 2, "mlp_hidden": 8, "sigma": 0.5},
        text={"prompt_length": 2, "D_t": 8, "depth": 1, "heads": 2, "context_std": 0.5},
    )


def full_check(seed=0, eps=1e-4):
    """End-to-end relative error of the summed three-part loss on a 2-clip batch."""
    from .data import plan_corpus, render_clip
    from .model import OUSModel
    from .train import compute_losses

    cfg = micro_config().replace(train={"seed": seed})
    plan = plan_corpus(cfg.data)[:2]
    clips = np.stack([render_clip(cfg.data, r, lat) for r, lat in plan])
    model = OUSModel(cfg)
    features = model.encode(clips)
    emotions = [r.emotion for r, _ in plan]
    polarities = [r.polarity for r, _ in plan]

    def objective():
        out = model.forward(features)
        l_pol, l_sim, l_con = compute_losses(model, out, emotions, polarities)
        return l_pol + l_sim + l_con

    return [("OUS end-to-end", grad_check(objective, model.trainable_parameters(), eps), FULL_TOL)]


SUITES = {"op": op_suite, "module": module_suite, "full": full_check}
