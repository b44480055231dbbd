"""Sequential VAE for latent causal processes under modular distribution
shift.

Inference is factorized per time step: q(z_t | x_t, theta_obs) comes from an
MLP encoder that sees one observation (plus the segment's observation change
factors). The prior over each window is modular: the first L steps (no
in-window history) get the standard-normal base density, and the current
step's conditional is built per component by inverse transition networks and
the change of variables formula,

    log p(z_k,t | history, u) = log N(eps_k; 0, 1) + log |d eps_k / d z_k,t|,

where eps_k is the network output. Each component's inverse map reads only
its own current-step coordinate, so the current-step Jacobian is diagonal and
the joint log prior is the sum of component terms. Segment change factors
(theta_dyn, theta_obs) live in an embedding table; adapting to an unseen
segment re-estimates one fresh embedding row with everything else frozen.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os

import numpy as np
import torch
from torch import nn

from .metrics import mcc
from .numerics import seeded_rng

NEG_SLOPE = 0.2
ENC_HIDDEN = 128
INV_HIDDEN = 64
LOG_VAR_BOUND = 10.0
JACOBIAN_FLOOR = 1e-8
ADAPT_MAX_STEPS = 500
ADAPT_GRAD_TOL = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclasses.dataclass
class TrainConfig:
    latent_dim: int
    lag: int = 2
    beta: float = 2e-3
    gamma: float = 2e-3
    lr: float = 0.002
    batch: int = 64
    max_epochs: int = 50
    patience: int = 5
    theta_dims: tuple = (2, 2)
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1 or self.lag < 1:
            raise ValueError("latent_dim and lag must be positive")
        if self.lr <= 0 or self.batch < 1:
            raise ValueError("lr must be positive and batch at least 1")
        if not 0 < self.patience <= self.max_epochs:
            raise ValueError("patience must be in [1, max_epochs]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        self.theta_dims = tuple(int(d) for d in self.theta_dims)
        if len(self.theta_dims) != 2 or any(d < 1 for d in self.theta_dims):
            raise ValueError("theta_dims must be two positive sizes (dyn, obs)")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class ElboBreakdown:
    total: float
    recon: float
    kld_current: float
    kld_lagged: float
    jacobian_floored: int = 0


def _mlp(sizes, gen):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        lin = nn.Linear(fan_in, fan_out, dtype=torch.float64)
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            lin.weight.uniform_(-bound, bound, generator=gen)
            lin.bias.uniform_(-bound, bound, generator=gen)
        layers.append(lin)
        if i < len(sizes) - 2:
            layers.append(nn.LeakyReLU(NEG_SLOPE))
    return nn.Sequential(*layers)


class ModelParams(nn.Module):
    """All learnable state: encoder, decoder, per-component inverse
    transition networks for each latent block, and the per-segment change
    factor embeddings (zero-initialized)."""

    def __init__(self, obs_dim, partition, num_segments, cfg: TrainConfig):
        super().__init__()
        n_fixed, n_changing, n_obs = (int(p) for p in partition)
        if n_fixed + n_changing + n_obs != cfg.latent_dim:
            raise ValueError("partition must sum to latent_dim")
        if min(n_fixed, n_changing, n_obs) < 0:
            raise ValueError("partition sizes must be nonnegative")
        if num_segments < 1:
            raise ValueError("need at least one segment")
        self.obs_dim = int(obs_dim)
        self.partition = (n_fixed, n_changing, n_obs)
        self.num_segments = int(num_segments)
        self.latent_dim = cfg.latent_dim
        self.lag = cfg.lag
        self.theta_dims = cfg.theta_dims
        d_dyn, d_obs = cfg.theta_dims
        gen = torch.Generator().manual_seed(
            int(seeded_rng(cfg.seed, "model_init").integers(2**63))
        )
        n, L = cfg.latent_dim, cfg.lag
        self.encoder = _mlp(
            [self.obs_dim + d_obs, ENC_HIDDEN, ENC_HIDDEN, ENC_HIDDEN, 2 * n], gen
        )
        self.decoder = _mlp([n + d_obs, ENC_HIDDEN, ENC_HIDDEN, self.obs_dim], gen)
        hist = n * L
        self.inverse_fixed = nn.ModuleList(
            _mlp([1 + hist, INV_HIDDEN, INV_HIDDEN, 1], gen) for _ in range(n_fixed)
        )
        self.inverse_changing = nn.ModuleList(
            _mlp([1 + hist + d_dyn, INV_HIDDEN, INV_HIDDEN, 1], gen)
            for _ in range(n_changing)
        )
        self.inverse_obs = nn.ModuleList(
            _mlp([1 + d_obs, INV_HIDDEN, INV_HIDDEN, 1], gen) for _ in range(n_obs)
        )
        self.embeddings = nn.Parameter(
            torch.zeros(num_segments, d_dyn + d_obs, dtype=torch.float64)
        )

    def theta(self, segments):
        """(theta_dyn, theta_obs) rows for a batch of segment indices."""
        rows = self.embeddings[segments]
        d_dyn = self.theta_dims[0]
        return rows[:, :d_dyn], rows[:, d_dyn:]


def _as_tensor(a):
    if isinstance(a, torch.Tensor):
        return a.to(torch.float64)
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


def encode(x, theta_obs, params: ModelParams):
    """Posterior parameters (mu, log_var) of q(z | x, theta_obs); log_var is
    clamped to a fixed range to keep the reparameterization finite."""
    x = _as_tensor(x)
    theta_obs = _as_tensor(theta_obs)
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"x must have {params.obs_dim} observation dims")
    if theta_obs.shape[-1] != params.theta_dims[1]:
        raise ValueError(f"theta_obs must have {params.theta_dims[1]} dims")
    theta_obs = theta_obs.expand(*x.shape[:-1], theta_obs.shape[-1])
    out = params.encoder(torch.cat([x, theta_obs], dim=-1))
    mu, log_var = out.chunk(2, dim=-1)
    return mu, log_var.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)


def reparameterize(mu, log_var, noise_draw):
    """z = mu + exp(log_var / 2) * noise_draw."""
    mu, log_var = _as_tensor(mu), _as_tensor(log_var)
    return mu + torch.exp(0.5 * log_var) * _as_tensor(noise_draw)


def _net_with_input_grad(net, x):
    """Forward an MLP while tracking the derivative of its scalar output with
    respect to input column 0 (the component's own current-step coordinate).

    Chain rule through the explicit layers keeps the term differentiable in
    the weights without a second autograd pass.
    """
    h = x
    grad = None
    first = True
    for layer in net:
        if isinstance(layer, nn.Linear):
            h = layer(h)
            if first:
                grad = layer.weight[:, 0].expand_as(h)
                first = False
            else:
                grad = grad @ layer.weight.t()
        else:  # LeakyReLU
            gate = torch.where(
                h > 0, torch.ones_like(h), torch.full_like(h, NEG_SLOPE)
            )
            h = layer(h)
            grad = grad * gate
    return h.squeeze(-1), grad.squeeze(-1)


def _gauss_logp(value):
    return -0.5 * (value**2 + _LOG_2PI)


def prior_logp(z_window, theta, params: ModelParams):
    """Per-component log density of the current step given the window's
    history: log p_eps(f_inv(...)) + log |d f_inv / d z_k|, assembled per
    latent block. Returns (..., latent_dim) and the count of Jacobian entries
    clamped at the floor."""
    z = _as_tensor(z_window)
    squeeze = z.ndim == 2
    if squeeze:
        z = z[None]
    if z.shape[-2] != params.lag + 1 or z.shape[-1] != params.latent_dim:
        raise ValueError(
            f"window must be (lag+1={params.lag + 1}, latent_dim={params.latent_dim})"
        )
    theta_dyn, theta_obs = (_as_tensor(t) for t in theta)
    if theta_dyn.ndim == 1:
        theta_dyn = theta_dyn.expand(z.shape[0], -1)
        theta_obs = theta_obs.expand(z.shape[0], -1)
    hist = z[:, :-1, :].reshape(z.shape[0], -1)
    current = z[:, -1, :]
    n_fixed, n_changing, n_obs = params.partition
    cols, floored = [], 0
    for k in range(n_fixed):
        inp = torch.cat([current[:, k : k + 1], hist], dim=-1)
        cols.append(_cov_term(params.inverse_fixed[k], inp))
    for j in range(n_changing):
        k = n_fixed + j
        inp = torch.cat([current[:, k : k + 1], hist, theta_dyn], dim=-1)
        cols.append(_cov_term(params.inverse_changing[j], inp))
    for j in range(n_obs):
        k = n_fixed + n_changing + j
        inp = torch.cat([current[:, k : k + 1], theta_obs], dim=-1)
        cols.append(_cov_term(params.inverse_obs[j], inp))
    logp = torch.stack([c[0] for c in cols], dim=-1)
    floored = int(sum(c[1] for c in cols))
    return (logp[0], floored) if squeeze else (logp, floored)


def _cov_term(net, inp):
    eps_hat, jac = _net_with_input_grad(net, inp)
    mag = jac.abs()
    floored = int((mag < JACOBIAN_FLOOR).sum())
    return _gauss_logp(eps_hat) + torch.log(mag.clamp_min(JACOBIAN_FLOOR)), floored


def _elbo_graph(windows, segments, params, cfg, noise, theta_override=None):
    """Torch-scalar ELBO terms for one batch of (lag+1)-step windows."""
    x = windows
    if theta_override is None:
        theta_dyn, theta_obs = params.theta(segments)
    else:
        theta_dyn, theta_obs = theta_override
        theta_dyn = theta_dyn.expand(x.shape[0], -1)
        theta_obs = theta_obs.expand(x.shape[0], -1)
    steps = params.lag + 1
    mu, log_var = encode(x, theta_obs[:, None, :], params)
    z = reparameterize(mu, log_var, noise)
    dec_in = torch.cat([z, theta_obs[:, None, :].expand(-1, steps, -1)], dim=-1)
    x_hat = params.decoder(dec_in)
    recon = -((x_hat - x) ** 2).sum(dim=-1).mean()
    # single-sample posterior density at the draw; (z - mu)/sigma == noise
    log_q = (-0.5 * (noise**2 + log_var + _LOG_2PI)).sum(dim=-1)
    prior_cur, floored = prior_logp(z, (theta_dyn, theta_obs), params)
    kld_current = (log_q[:, -1] - prior_cur.sum(dim=-1)).mean()
    lag_logp = _gauss_logp(z[:, :-1, :]).sum(dim=(-2, -1))
    kld_lagged = (log_q[:, :-1].sum(dim=-1) - lag_logp).mean()
    total = recon - cfg.beta * kld_current - cfg.gamma * kld_lagged
    return total, recon, kld_current, kld_lagged, floored


def _batch_inputs(windows, segments):
    windows = _as_tensor(windows)
    if windows.ndim != 3:
        raise ValueError("windows must be (batch, lag+1, obs_dim)")
    if windows.shape[0] == 0:
        raise ValueError("empty batch")
    segments = torch.as_tensor(np.asarray(segments), dtype=torch.long)
    if segments.shape != (windows.shape[0],):
        raise ValueError("segments must label each window")
    return windows, segments


def _draw_noise(shape, gen):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def elbo(windows, segments, params, cfg, noise=None, theta_override=None):
    """Monte Carlo ELBO breakdown on a batch of windows. noise fixes the
    reparameterization draws (one standard-normal tensor shaped like the
    latent windows); fresh draws are made from cfg.seed when omitted."""
    windows, segments = _batch_inputs(windows, segments)
    if noise is None:
        gen = torch.Generator().manual_seed(
            int(seeded_rng(cfg.seed, "elbo_noise").integers(2**63))
        )
        noise = _draw_noise(
            (windows.shape[0], params.lag + 1, params.latent_dim), gen
        )
    else:
        noise = _as_tensor(noise)
    with torch.no_grad():
        total, recon, kc, kl, floored = _elbo_graph(
            windows, segments, params, cfg, noise, theta_override
        )
    return ElboBreakdown(total.item(), recon.item(), kc.item(), kl.item(), floored)


def grad_elbo(windows, segments, params, cfg, noise=None):
    """Pathwise gradient of the ELBO with fixed noise draws, as a dict
    parameter-name -> tensor (embeddings included)."""
    windows, segments = _batch_inputs(windows, segments)
    if noise is None:
        gen = torch.Generator().manual_seed(
            int(seeded_rng(cfg.seed, "elbo_noise").integers(2**63))
        )
        noise = _draw_noise(
            (windows.shape[0], params.lag + 1, params.latent_dim), gen
        )
    else:
        noise = _as_tensor(noise)
    params.zero_grad(set_to_none=True)
    total, *_ = _elbo_graph(windows, segments, params, cfg, noise)
    total.backward()
    grads = {}
    for name, p in params.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.all(torch.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        grads[name] = g
    params.zero_grad(set_to_none=True)
    return grads


# ---------------------------------------------------------------------------
# windowing


def window_stack(values, segments, lag):
    """All (lag+1)-step windows that stay inside one segment.

    Returns (windows (W, lag+1, dim), labels (W,), starts (W,)) where starts
    index the window's first row in values.
    """
    values = np.asarray(values, dtype=np.float64)
    segments = np.asarray(segments)
    if values.ndim != 2 or values.shape[0] != segments.shape[0]:
        raise ValueError("values and segments must align on the time axis")
    steps = lag + 1
    wins, labels, starts = [], [], []
    for t in range(values.shape[0] - steps + 1):
        seg = segments[t]
        if np.all(segments[t : t + steps] == seg):
            wins.append(values[t : t + steps])
            labels.append(seg)
            starts.append(t)
    if not wins:
        raise ValueError("no full windows: segments shorter than lag+1")
    return (
        np.stack(wins),
        np.asarray(labels, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
    )


def _split_windows(labels, starts, val_fraction):
    """Per segment, the last val_fraction of windows (temporal order) go to
    validation."""
    train_idx, val_idx = [], []
    for seg in np.unique(labels):
        idx = np.where(labels == seg)[0]
        idx = idx[np.argsort(starts[idx])]
        n_val = max(1, int(round(val_fraction * idx.size))) if idx.size > 1 else 0
        cut = idx.size - n_val
        train_idx.extend(idx[:cut])
        val_idx.extend(idx[cut:])
    return np.asarray(train_idx, dtype=np.int64), np.asarray(val_idx, dtype=np.int64)


def window_latent_means(params, windows, segments):
    """Posterior mean of the current step of each window, (W, latent_dim)."""
    windows, segments = _batch_inputs(windows, segments)
    with torch.no_grad():
        _, theta_obs = params.theta(segments)
        mu, _ = encode(windows, theta_obs[:, None, :], params)
    return mu[:, -1, :].numpy()


def dataset_windows(ds, cfg: TrainConfig):
    """Window view of a Dataset shared by training and evaluation: stacked
    observation windows, segment labels, the train/val split (last
    val_fraction of each segment's windows), and the true current-step
    latents when the dataset carries them."""
    wins, labels, starts = window_stack(ds.observations, ds.segments, cfg.lag)
    train_idx, val_idx = _split_windows(labels, starts, cfg.val_fraction)
    latents = None
    if getattr(ds, "latents", None) is not None:
        lat, _, _ = window_stack(ds.latents, ds.segments, cfg.lag)
        latents = lat[:, -1, :]
    return {
        "windows": wins,
        "labels": labels,
        "starts": starts,
        "train_idx": train_idx,
        "val_idx": val_idx,
        "latents": latents,
    }


# ---------------------------------------------------------------------------
# training


def train(ds, cfg: TrainConfig, seed=None):
    """Fit the model to a Dataset: AdamW, early stopping on validation ELBO,
    best-validation parameters returned with the per-epoch history.

    History rows are {"epoch", "train_elbo", "val_elbo", "mcc"}; mcc is the
    validation score against the dataset's true latents when present, else
    None.
    """
    seed = cfg.seed if seed is None else int(seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    spec = ds.spec.resolved()
    if cfg.lag != spec.lag:
        raise ValueError(f"cfg.lag={cfg.lag} but the dataset was built with lag={spec.lag}")
    partition = spec.partition
    if sum(partition) != cfg.latent_dim:
        raise ValueError("cfg.latent_dim must match the dataset's latent size")
    dw = dataset_windows(ds, cfg)
    labels, train_idx, val_idx = dw["labels"], dw["train_idx"], dw["val_idx"]
    if val_idx.size == 0:
        raise ValueError("validation split is empty; need more samples per segment")
    num_segments = int(np.max(labels)) + 1
    params = ModelParams(ds.observations.shape[1], partition, num_segments, cfg)

    windows_t = _as_tensor(dw["windows"])
    labels_t = torch.as_tensor(labels, dtype=torch.long)
    val_windows = windows_t[val_idx]
    val_labels = labels_t[val_idx]
    true_latents = None if dw["latents"] is None else dw["latents"][val_idx]

    opt = torch.optim.AdamW(params.parameters(), lr=cfg.lr)
    shuffle_rng = seeded_rng(seed, "shuffle")
    noise_gen = torch.Generator().manual_seed(
        int(seeded_rng(seed, "train_noise").integers(2**63))
    )
    val_noise = _draw_noise(
        (val_idx.size, cfg.lag + 1, cfg.latent_dim),
        torch.Generator().manual_seed(int(seeded_rng(seed, "val_noise").integers(2**63))),
    )

    history = []
    best_val = -np.inf
    best_state = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(train_idx)
        train_total = 0.0
        seen = 0
        for lo in range(0, order.size, cfg.batch):
            idx = order[lo : lo + cfg.batch]
            batch = windows_t[idx]
            segs = labels_t[idx]
            noise = _draw_noise((idx.size, cfg.lag + 1, cfg.latent_dim), noise_gen)
            opt.zero_grad(set_to_none=True)
            total, *_ = _elbo_graph(batch, segs, params, cfg, noise)
            loss = -total
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
            loss.backward()
            opt.step()
            train_total += total.item() * idx.size
            seen += idx.size
        with torch.no_grad():
            val_total, *_ = _elbo_graph(val_windows, val_labels, params, cfg, val_noise)
        val_elbo = val_total.item()
        score = None
        if true_latents is not None:
            est = window_latent_means(params, val_windows, val_labels)
            score = mcc(true_latents, est).mcc
        history.append(
            {
                "epoch": epoch,
                "train_elbo": train_total / max(seen, 1),
                "val_elbo": val_elbo,
                "mcc": score,
            }
        )
        if val_elbo > best_val:
            best_val = val_elbo
            best_state = {k: v.detach().clone() for k, v in params.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        params.load_state_dict(best_state)
    return params, history


# ---------------------------------------------------------------------------
# few-shot shift correction


def correct_shift(params: ModelParams, windows, cfg: TrainConfig):
    """Estimate change factors for one unseen segment from a few windows.

    A fresh theta row starts at zero and ascends the ELBO; every other
    parameter is frozen and restored bit-identically. Returns the estimated
    (theta_dyn + theta_obs) vector.
    """
    windows = _as_tensor(windows)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValueError("need a nonempty (batch, lag+1, obs_dim) window array")
    d_dyn, d_obs = params.theta_dims
    theta = torch.zeros(d_dyn + d_obs, dtype=torch.float64, requires_grad=True)
    frozen = [p for p in params.parameters()]
    flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad_(False)
    segments = torch.zeros(windows.shape[0], dtype=torch.long)
    noise_gen = torch.Generator().manual_seed(
        int(seeded_rng(cfg.seed, "adapt_noise").integers(2**63))
    )
    opt = torch.optim.AdamW([theta], lr=cfg.lr)
    best = (-np.inf, theta.detach().clone())
    try:
        for _ in range(ADAPT_MAX_STEPS):
            noise = _draw_noise(
                (windows.shape[0], params.lag + 1, params.latent_dim), noise_gen
            )
            opt.zero_grad(set_to_none=True)
            override = (theta[None, :d_dyn], theta[None, d_dyn:])
            total, *_ = _elbo_graph(windows, segments, params, cfg, noise, override)
            (-total).backward()
            if total.item() > best[0]:
                best = (total.item(), theta.detach().clone())
            grad_norm = theta.grad.norm().item()
            opt.step()
            if grad_norm < ADAPT_GRAD_TOL:
                break
    finally:
        for p, flag in zip(frozen, flags):
            p.requires_grad_(flag)
    return best[1].numpy()


# ---------------------------------------------------------------------------
# checkpoints


def save_model(dirpath, params: ModelParams, cfg: TrainConfig, history=()):
    """Checkpoint directory: params.bin (little-endian float64, layout in
    params.json), cfg.json, history.csv."""
    os.makedirs(dirpath, exist_ok=True)
    layout = []
    offset = 0
    chunks = []
    for name, p in params.named_parameters():
        arr = p.detach().numpy().astype("<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.ravel())
    np.concatenate(chunks).tofile(os.path.join(dirpath, "params.bin"))
    manifest = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "partition": list(params.partition),
        "num_segments": params.num_segments,
        "layout": layout,
    }
    with open(os.path.join(dirpath, "params.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    with open(os.path.join(dirpath, "cfg.json"), "w") as fh:
        json.dump(cfg.to_json(), fh, indent=1)
    with open(os.path.join(dirpath, "history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_elbo", "val_elbo", "mcc"])
        for row in history:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["train_elbo"]),
                    repr(row["val_elbo"]),
                    "" if row.get("mcc") is None else repr(row["mcc"]),
                ]
            )


def load_model(dirpath):
    """Rebuild (params, cfg, history) from a checkpoint directory."""
    with open(os.path.join(dirpath, "params.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    with open(os.path.join(dirpath, "cfg.json")) as fh:
        cfg = TrainConfig(**json.load(fh))
    params = ModelParams(
        manifest["obs_dim"], manifest["partition"], manifest["num_segments"], cfg
    )
    flat = np.fromfile(os.path.join(dirpath, "params.bin"), dtype="<f8")
    named = dict(params.named_parameters())
    expected = sum(np.prod(e["shape"], dtype=int) for e in manifest["layout"])
    if flat.size != expected:
        raise ValueError("params.bin does not match the layout manifest")
    with torch.no_grad():
        for entry in manifest["layout"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape, dtype=int))
            block = flat[entry["offset"] : entry["offset"] + size].reshape(shape)
            named[entry["name"]].copy_(torch.from_numpy(block.copy()))
    history = []
    hist_path = os.path.join(dirpath, "history.csv")
    if os.path.exists(hist_path):
        with open(hist_path, newline="") as fh:
            for row in csv.DictReader(fh):
                history.append(
                    {
                        "epoch": int(row["epoch"]),
                        "train_elbo": float(row["train_elbo"]),
                        "val_elbo": float(row["val_elbo"]),
                        "mcc": float(row["mcc"]) if row["mcc"] else None,
                    }
                )
    return params, cfg, history
