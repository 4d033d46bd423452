"""Model construction, the Adam loop, and the fit / predict_latent /
predict_reconstruction API. One training run is single-threaded and fully
determined by (seed, config, data)."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import (
    FORCED_DEFAULT_LIKELIHOOD,
    ModelConfig,
    TWO_VIEW_MODELS,
    load_config,
    save_resolved,
)
from .data import MultiViewBatch
from .distributions import GaussianParams, dropout_rate
from .errors import ConfigError, DimensionError, FormatError, NumericError
from .networks import Decoder, Discriminator, Encoder, MlpSpec, VariationalEncoder
from .numcore import Tensor
from .objectives import (
    ADVERSARIAL_OBJECTIVES,
    EpsStream,
    ModelState,
    PLAIN_OBJECTIVES,
    VARIATIONAL_OBJECTIVES,
    gpoe_weights,
)
from .pooling import ExpertSet, enumerate_subsets, gpoe, mean_pool, poe, subset_experts

CHECKPOINT_MAGIC = b"MVXC"
CHECKPOINT_VERSION = 1

PLAIN_ENCODER_MODELS = ("ae", "dccae", "maae", "mwae")


def _mlp_spec(cfg_spec, input_dim: int, output_dim: int) -> MlpSpec:
    return MlpSpec(
        input_dim=input_dim,
        hidden_layer_dims=list(cfg_spec.hidden_layer_dim),
        output_dim=output_dim,
        non_linear=cfg_spec.non_linear,
        bias=cfg_spec.bias,
        activation=cfg_spec.activation,
    )


def build_model(cfg: ModelConfig, input_dims: list[int], rng: np.random.Generator) -> ModelState:
    """Construct all networks for the configured model.

    Parameter initialization consumes `rng` in a fixed order: per-modality
    encoders, joint encoder, private encoders, decoders, discriminator.
    """
    name = cfg.name
    m_total = len(input_dims)
    if name in TWO_VIEW_MODELS and m_total != 2:
        raise ConfigError(f"model.name: '{name}' requires exactly 2 views, got {m_total}")
    state = ModelState(
        name=name,
        n_views=m_total,
        z_dim=cfg.z_dim,
        s_dim=cfg.s_dim,
        beta=cfg.beta,
        alpha=cfg.alpha,
        K=cfg.K,
        lam=list(cfg.lam),
        pi=list(cfg.pi) if cfg.pi is not None else None,
        sparse=cfg.sparse,
        private=cfg.private,
        non_saturating=cfg.non_saturating,
        stochastic_subsets=cfg.stochastic_subsets,
        threshold=cfg.threshold,
        join_type=cfg.join_type,
    )

    # encoders
    if name in PLAIN_ENCODER_MODELS or (name == "mcvae" and cfg.sparse):
        state.encoders = [
            Encoder(_mlp_spec(cfg.encoder_spec(m), input_dims[m], cfg.z_dim), rng,
                    name=f"enc{m}")
            for m in range(m_total)
        ]
    elif name == "dvcca":
        state.encoders = [
            VariationalEncoder(
                _mlp_spec(cfg.encoder_spec(0), input_dims[0], cfg.z_dim), rng, name="enc0"
            )
        ]
    else:
        state.encoders = [
            VariationalEncoder(
                _mlp_spec(cfg.encoder_spec(m), input_dims[m], cfg.z_dim), rng,
                name=f"enc{m}"
            )
            for m in range(m_total)
        ]

    if name == "jmvae":
        state.joint_encoder = VariationalEncoder(
            _mlp_spec(cfg.encoder_spec(0), sum(input_dims), cfg.z_dim), rng, name="enc_joint"
        )

    if name in ("mmvaeplus", "dmvae") or (name == "dvcca" and cfg.private):
        state.private_encoders = [
            VariationalEncoder(
                _mlp_spec(cfg.encoder_spec(m), input_dims[m], cfg.s_dim), rng,
                name=f"penc{m}"
            )
            for m in range(m_total)
        ]

    if name == "mcvae" and cfg.sparse:
        state.log_alphas = [nc.parameter(np.full(cfg.z_dim, -3.0)) for _ in range(m_total)]
    if name == "weighted_mvae":
        state.alpha_logits = nc.parameter(np.zeros((m_total, cfg.z_dim)))
    if name == "mmvaeplus":
        state.aux_log_scales = [nc.parameter(np.zeros(cfg.s_dim)) for _ in range(m_total)]

    # decoders
    dec_in = cfg.z_dim
    if name in ("mmvaeplus", "dmvae") or (name == "dvcca" and cfg.private):
        dec_in = cfg.z_dim + cfg.s_dim
    decoders = []
    for m in range(m_total):
        spec = cfg.decoder_spec(m)
        dist = "Default" if name in FORCED_DEFAULT_LIKELIHOOD else spec.distribution
        decoders.append(
            Decoder(_mlp_spec(spec, dec_in, input_dims[m]), rng,
                    distribution=dist, scale=spec.scale, name=f"dec{m}")
        )
    state.decoders = decoders

    if name in ("maae", "mwae"):
        disc_spec = cfg.encoder_spec(0)
        state.discriminator = Discriminator(
            MlpSpec(cfg.z_dim, list(disc_spec.hidden_layer_dim), 1,
                    non_linear=disc_spec.non_linear, bias=disc_spec.bias,
                    activation=disc_spec.activation),
            rng,
            critic=(name == "mwae"),
            name="disc",
        )
    return state


class Adam:
    """Adam with per-parameter step counts so phase groups stay independent."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.moments: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, params: list[tuple[str, Tensor]]) -> None:
        for name, p in params:
            if p.grad is None:
                continue
            m, v, t = self.moments.get(
                name, (np.zeros_like(p.data), np.zeros_like(p.data), 0)
            )
            t += 1
            g = p.grad
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            self.moments[name] = (m, v, t)


def _zero_grads(params: list[tuple[str, Tensor]]) -> None:
    for _, p in params:
        p.grad = None


def _clip_params(params: list[tuple[str, Tensor]], bound: float) -> None:
    for _, p in params:
        np.clip(p.data, -bound, bound, out=p.data)


@dataclass
class RunState:
    """A training run: model, optimizer moments, epoch counter, RNG, history."""

    cfg: ModelConfig
    state: ModelState
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    history: list[dict[str, float]] = field(default_factory=list)


def _as_views(batch: MultiViewBatch) -> list[Tensor]:
    return [nc.constant(v) for v in batch.views]


def _objective_for(name: str):
    if name in VARIATIONAL_OBJECTIVES:
        return VARIATIONAL_OBJECTIVES[name], "variational"
    if name in PLAIN_OBJECTIVES:
        return PLAIN_OBJECTIVES[name], "plain"
    return ADVERSARIAL_OBJECTIVES[name], "adversarial"


def _train_epoch(run: RunState, data: MultiViewBatch, batch_size: int) -> dict[str, float]:
    cfg, state = run.cfg, run.state
    objective, family = _objective_for(state.name)
    n = data.n_samples
    order = run.rng.permutation(n)
    if cfg.trainer.full_batch:
        batch_size = n
    sums: dict[str, float] = {}
    counts = 0
    all_params = state.parameters()
    ae_params = state.autoencoder_parameters()
    disc_params = state.discriminator_parameters()
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        views = _as_views(data.subset(idx))
        eps = EpsStream(run.rng)
        try:
            if family in ("variational", "plain"):
                loss = objective(state, views, eps)
                _zero_grads(all_params)
                nc.backward(loss.total)
                run.optimizer.step(all_params)
                scalars = loss.scalars()
            else:
                losses = objective(state, views, eps)
                _zero_grads(all_params)
                nc.backward(losses.reconstruction.total + losses.generator)
                run.optimizer.step(ae_params)
                steps = cfg.trainer.critic_steps if state.name == "mwae" else 1
                for _ in range(steps):
                    fresh = objective(state, views, eps)
                    _zero_grads(all_params)
                    nc.backward(fresh.discriminator)
                    run.optimizer.step(disc_params)
                    if state.name == "mwae":
                        _clip_params(disc_params, cfg.trainer.clip)
                scalars = losses.scalars()
        except NumericError as err:
            raise NumericError(f"epoch {run.epoch}: {err}") from err
        for k, v in scalars.items():
            if not np.isfinite(v):
                raise NumericError(
                    f"epoch {run.epoch}: term '{k}' became non-finite"
                )
            sums[k] = sums.get(k, 0.0) + v
        counts += 1
    return {k: v / counts for k, v in sums.items()}


def _append_metrics(path: Path, epoch: int, metrics: dict[str, float]) -> None:
    new = not path.exists()
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write("epoch,term,value\n")
        for term in sorted(metrics):
            fh.write(f"{epoch},{term},{metrics[term]:.17g}\n")


def fit(
    cfg: ModelConfig,
    data: MultiViewBatch,
    max_epochs: int | None = None,
    batch_size: int | None = None,
    out_dir: str | Path | None = None,
) -> RunState:
    """Train from scratch; overrides win over the config's trainer section."""
    if cfg.input_dims is not None and cfg.input_dims != data.dims:
        raise DimensionError(
            f"fit: configured input_dims {cfg.input_dims} do not match data {data.dims}"
        )
    cfg.input_dims = data.dims
    if max_epochs is not None:
        cfg.trainer.max_epochs = max_epochs
    if batch_size is not None:
        cfg.trainer.batch_size = batch_size
    seed = cfg.seed if cfg.seed_everything else np.random.SeedSequence().entropy % (2 ** 32)
    rng = np.random.default_rng(seed)
    state = build_model(cfg, data.dims, rng)
    run = RunState(cfg=cfg, state=state, optimizer=Adam(cfg.learning_rate), rng=rng)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        save_resolved(cfg, out_path / "resolved.cfg")
        metrics_file = out_path / "metrics.csv"
        if metrics_file.exists():
            metrics_file.unlink()
    return continue_fit(run, data, cfg.trainer.max_epochs, out_dir=out_dir)


def continue_fit(
    run: RunState,
    data: MultiViewBatch,
    epochs: int,
    out_dir: str | Path | None = None,
) -> RunState:
    """Run `epochs` more epochs on an existing state (used by checkpoint resume)."""
    out_path = Path(out_dir) if out_dir is not None else None
    target = run.epoch + epochs
    while run.epoch < target:
        metrics = _train_epoch(run, data, run.cfg.trainer.batch_size)
        run.history.append(metrics)
        run.epoch += 1
        if out_path is not None:
            _append_metrics(out_path / "metrics.csv", run.epoch, metrics)
    if out_path is not None and run.cfg.save_model:
        save_checkpoint(run, out_path / "checkpoint.mvxc")
    return run


def evaluate_loss(run: RunState, data: MultiViewBatch, seed: int = 0):
    """One full-batch objective evaluation with a fresh seeded eps stream."""
    objective, family = _objective_for(run.state.name)
    views = _as_views(data)
    eps = EpsStream(np.random.default_rng(seed))
    return objective(run.state, views, eps)


# ---------------------------------------------------------------------------
# prediction API
# ---------------------------------------------------------------------------


@dataclass
class LatentResult:
    """Posterior means per modality, the model's pooled joint, optional
    private means, and the sparse retained-dimension masks."""

    per_modality: list[np.ndarray]
    joint: np.ndarray | None = None
    private: list[np.ndarray] | None = None
    kept_masks: list[np.ndarray] | None = None


def _encoder_posteriors(state: ModelState, views: list[Tensor]) -> list[GaussianParams]:
    out = []
    for enc, x in zip(state.encoders, views):
        if isinstance(enc, VariationalEncoder):
            out.append(enc.forward(x))
        else:
            mu = enc.forward(x)
            out.append(GaussianParams(mu, nc.constant(np.zeros(mu.shape))))
    return out


def joint_posterior(state: ModelState, posteriors: list[GaussianParams],
                    views: list[Tensor] | None = None) -> GaussianParams | None:
    """The model's own pooled posterior, or None for joint-less models."""
    name = state.name
    if name in ("mvae", "me_mvae", "dmvae"):
        return poe(ExpertSet(posteriors, include_prior_expert=True))
    if name == "mvtcae":
        return poe(ExpertSet(posteriors, include_prior_expert=False))
    if name == "weighted_mvae":
        return gpoe(ExpertSet(posteriors, weights=gpoe_weights(state),
                              include_prior_expert=True))
    if name == "mmjsd":
        from .distributions import standard_normal
        from .pooling import geometric_poe

        pi = state.pi if state.pi else [1.0 / (state.n_views + 1)] * (state.n_views + 1)
        return geometric_poe(posteriors + [standard_normal(posteriors[0].shape)], pi)
    if name in ("mmvae", "mmvaeplus"):
        return mean_pool(ExpertSet(posteriors))
    if name == "mopoe":
        base = ExpertSet(posteriors)
        subs = enumerate_subsets(state.n_views)
        pooled = [poe(subset_experts(base, s)) for s in subs]
        return mean_pool(ExpertSet(pooled))
    if name == "jmvae":
        if views is None:
            return None
        return state.joint_encoder.forward(nc.concat_cols(views))
    if name == "mcvae" and not state.sparse:
        if state.join_type == "Mean":
            return mean_pool(ExpertSet(posteriors))
        return poe(ExpertSet(posteriors, include_prior_expert=False))
    return None


def _sparse_masks(state: ModelState) -> list[np.ndarray]:
    masks = []
    for log_alpha in state.log_alphas:
        rate = dropout_rate(np.exp(log_alpha.data))
        if state.threshold > 0:
            masks.append(rate <= state.threshold)
        else:
            masks.append(np.ones_like(rate, dtype=bool))
    return masks


def predict_latent(run: RunState, data: MultiViewBatch) -> LatentResult:
    """Deterministic latents: posterior means, model-specific joint pooling,
    private means where defined, and sparse retained-dimension masks."""
    state = run.state
    if data.dims != run.cfg.input_dims:
        raise DimensionError(
            f"predict_latent: data dims {data.dims} vs model {run.cfg.input_dims}"
        )
    with nc.no_grad():
        views = _as_views(data)
        if state.name == "dvcca":
            q_z = state.encoders[0].forward(views[0])
            result = LatentResult(per_modality=[q_z.mean.data.copy()])
            if state.private:
                result.private = [
                    enc.forward(x).mean.data.copy()
                    for enc, x in zip(state.private_encoders, views)
                ]
            return result
        posteriors = _encoder_posteriors(state, views)
        per_modality = [q.mean.data.copy() for q in posteriors]
        joint = joint_posterior(state, posteriors, views)
        result = LatentResult(
            per_modality=per_modality,
            joint=None if joint is None else joint.mean.data.copy(),
        )
        if state.private_encoders is not None:
            result.private = [
                enc.forward(x).mean.data.copy()
                for enc, x in zip(state.private_encoders, views)
            ]
        if state.sparse and state.log_alphas is not None:
            masks = _sparse_masks(state)
            result.kept_masks = masks
            result.per_modality = [
                lat[:, mask] for lat, mask in zip(result.per_modality, masks)
            ]
        return result


def _private_for_target(state: ModelState, target: int, source_is_own: bool,
                        private_means: list[np.ndarray], batch: int,
                        eval_rng: np.random.Generator) -> Tensor:
    if source_is_own:
        return nc.constant(private_means[target])
    if state.name == "mmvaeplus":
        scale = np.exp(state.aux_log_scales[target].data)
        draw = scale * eval_rng.standard_normal((batch, state.s_dim))
        return nc.constant(draw)
    return nc.constant(np.zeros((batch, state.s_dim)))


def predict_reconstruction(run: RunState, data: MultiViewBatch,
                           eval_seed: int = 0) -> list[list[np.ndarray]]:
    """Nested [source][target] grid of deterministic reconstructions.

    Sources are the per-modality latents followed by the joint latent when
    the model defines one. Cross-modal private codes come from the target's
    auxiliary prior (seeded draw) for mmvaeplus and from the prior mean for
    the other private-latent models.
    """
    state = run.state
    if data.dims != run.cfg.input_dims:
        raise DimensionError(
            f"predict_reconstruction: data dims {data.dims} vs model {run.cfg.input_dims}"
        )
    batch = data.n_samples
    eval_rng = np.random.default_rng(eval_seed)
    with nc.no_grad():
        views = _as_views(data)
        if state.name == "dvcca":
            z = state.encoders[0].forward(views[0]).mean
            private_means = None
            if state.private:
                private_means = [
                    enc.forward(x).mean.data
                    for enc, x in zip(state.private_encoders, views)
                ]
            grid_row = []
            for t in range(state.n_views):
                if state.private:
                    h = nc.constant(private_means[t])
                    recon = state.decoders[t].decode(nc.concat_cols([z, h]))
                else:
                    recon = state.decoders[t].decode(z)
                grid_row.append(recon.mean().data.copy())
            return [grid_row]

        posteriors = _encoder_posteriors(state, views)
        latent_sources: list[tuple[np.ndarray, int | None]] = []
        masks = None
        if state.sparse and state.log_alphas is not None:
            masks = _sparse_masks(state)
        for m, q in enumerate(posteriors):
            lat = q.mean.data.copy()
            if masks is not None:
                lat = lat * masks[m]
            latent_sources.append((lat, m))
        joint = joint_posterior(state, posteriors, views)
        if joint is not None:
            lat = joint.mean.data.copy()
            if masks is not None:
                lat = lat * np.any(np.stack(masks), axis=0)
            latent_sources.append((lat, None))
        private_means = None
        if state.private_encoders is not None:
            private_means = [
                enc.forward(x).mean.data
                for enc, x in zip(state.private_encoders, views)
            ]
        grid: list[list[np.ndarray]] = []
        for lat, src in latent_sources:
            row = []
            z = nc.constant(lat)
            for t in range(state.n_views):
                if private_means is not None:
                    own = src is None or src == t
                    h = _private_for_target(state, t, own, private_means, batch, eval_rng)
                    recon = state.decoders[t].decode(nc.concat_cols([z, h]))
                else:
                    recon = state.decoders[t].decode(z)
                row.append(recon.mean().data.copy())
            grid.append(row)
        return grid


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(run: RunState, path: str | Path) -> None:
    params = run.state.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(p.data.astype("<f8").tobytes(order="C"))
        for name, p in params:
            m, v, t = run.optimizer.moments.get(
                name, (np.zeros_like(p.data), np.zeros_like(p.data), 0)
            )
            fh.write(struct.pack("<Q", t))
            fh.write(struct.pack("<I", m.size))
            fh.write(m.astype("<f8").tobytes(order="C"))
            fh.write(struct.pack("<I", v.size))
            fh.write(v.astype("<f8").tobytes(order="C"))
        rng_blob = json.dumps(run.rng.bit_generator.state).encode("utf-8")
        fh.write(struct.pack("<I", len(rng_blob)))
        fh.write(rng_blob)
        fh.write(struct.pack("<I", run.epoch))


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(
            f"truncated checkpoint reading {what} at byte {offset}: "
            f"expected {n} bytes, got {len(buf)}"
        )
    return buf


def load_run(run_dir: str | Path) -> RunState:
    """Rebuild a RunState from a run directory (resolved.cfg + checkpoint.mvxc)."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "resolved.cfg")
    if cfg.input_dims is None:
        raise ConfigError("model.input_dims: missing from resolved config")
    rng = np.random.default_rng(cfg.seed)
    state = build_model(cfg, cfg.input_dims, rng)
    run = RunState(cfg=cfg, state=state, optimizer=Adam(cfg.learning_rate), rng=rng)
    load_checkpoint(run, run_dir / "checkpoint.mvxc")
    return run


def load_checkpoint(run: RunState, path: str | Path) -> None:
    params = run.state.parameters()
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r} at byte 0")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version} at byte 4")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        if count != len(params):
            raise FormatError(
                f"checkpoint has {count} parameters, model expects {len(params)}"
            )
        for name, p in params:
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            stored = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            if stored != name:
                raise FormatError(f"parameter order mismatch: {stored!r} vs {name!r}")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "dim"))[0] for _ in range(ndim)
            )
            if shape != p.data.shape:
                raise FormatError(f"shape mismatch for {name}: {shape} vs {p.data.shape}")
            raw = _read_exact(fh, 8 * p.data.size, f"data of {name}")
            p.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        for name, p in params:
            (t,) = struct.unpack("<Q", _read_exact(fh, 8, "step count"))
            (m_size,) = struct.unpack("<I", _read_exact(fh, 4, "m size"))
            m = np.frombuffer(_read_exact(fh, 8 * m_size, "m"), dtype="<f8").reshape(
                p.data.shape
            ).copy()
            (v_size,) = struct.unpack("<I", _read_exact(fh, 4, "v size"))
            v = np.frombuffer(_read_exact(fh, 8 * v_size, "v"), dtype="<f8").reshape(
                p.data.shape
            ).copy()
            run.optimizer.moments[name] = (m, v, t)
        (rng_len,) = struct.unpack("<I", _read_exact(fh, 4, "rng length"))
        rng_state = json.loads(_read_exact(fh, rng_len, "rng state").decode("utf-8"))
        run.rng.bit_generator.state = rng_state
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4, "epoch"))
        run.epoch = epoch
        run.history = []
