"""Sequence-level conditional VAE over motions, with ablation variants.

The main architecture is a transformer encoder/decoder pair around a single
latent vector per sequence:

- the encoder prepends two learnable per-action tokens to the embedded frame
  sequence and reads the posterior mean and log-variance off their outputs;
- the decoder is queried with one sinusoidal positional encoding per output
  frame and attends to the latent (shifted by a learnable per-action bias)
  as a length-1 memory, emitting the whole sequence in one shot.

Variants swap out the encoder pooling, the decoder conditioning, or the
whole backbone (GRU, fully connected, autoregressive decoding).

Batched tensors use (batch, time, feature) layout. Padding masks follow the
torch convention: True marks padded positions.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import rotations
from .body import Motion
from .errors import (
    EmptySequence,
    FixedLengthOnly,
    NonPositiveDuration,
    UnknownAction,
    UnknownVariant,
)

VARIANTS = (
    "actor",
    "gru",
    "fully_connected",
    "autoregressive_decoder",
    "mean_pool_encoder",
    "onehot_concat_decoder",
)

# rotation_dim is a bijective key for the representation fed to the network
ROTATION_REPS = {6: "sixd", 3: "axis_angle", 4: "quaternion", 9: "matrix"}

LOGVAR_MIN, LOGVAR_MAX = -20.0, 10.0
TOKEN_INIT_STD = 0.02


@dataclass
class ModelConfig:
    """Architecture hyperparameters."""

    num_actions: int
    latent_dim: int = 256
    layers: int = 8
    heads: int = 4
    ff_dim: int = 1024
    dropout: float = 0.1
    activation: str = "gelu"
    num_joints: int = 24
    rotation_dim: int = 6
    use_translation: bool = True
    variant: str = "actor"
    fixed_length: int | None = None  # required by the fully_connected variant
    action_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UnknownVariant(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.rotation_dim not in ROTATION_REPS:
            raise ValueError(f"rotation_dim must be one of {sorted(ROTATION_REPS)}")
        if self.latent_dim % self.heads != 0:
            raise ValueError("latent_dim must be divisible by heads")
        for name in ("num_actions", "latent_dim", "layers", "heads", "ff_dim", "num_joints"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.variant == "fully_connected" and self.fixed_length is None:
            self.fixed_length = 60
        if self.action_names is not None:
            self.action_names = tuple(self.action_names)
            if len(self.action_names) != self.num_actions:
                raise ValueError("action_names length must equal num_actions")

    @property
    def rotation_rep(self) -> str:
        return ROTATION_REPS[self.rotation_dim]

    @property
    def pose_dim(self) -> int:
        return self.num_joints * self.rotation_dim + (3 if self.use_translation else 0)


def positional_encoding(
    length: int, dim: int, dtype: torch.dtype = torch.float32, device=None
) -> Tensor:
    """Sinusoidal table (length, dim): sin on even dims, cos on odd dims.

    PE[t, 2i] = sin(t / 10000^(2i/dim)), PE[t, 2i+1] = cos(same), t from 0.
    """
    if length < 1 or dim < 1:
        raise ValueError("length and dim must be >= 1")
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    pos = torch.arange(length, dtype=dtype, device=device)[:, None]
    even = torch.arange(0, dim, 2, dtype=dtype, device=device)
    angles = pos / torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), even / dim)
    pe = torch.zeros(length, dim, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles)
    return pe


def reparameterize(mu: Tensor, logvar: Tensor, generator: torch.Generator | None = None) -> Tensor:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) from `generator`."""
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * logvar) * eps


def _clamp_logvar(logvar: Tensor) -> Tensor:
    return torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


# -- pose feature packing --------------------------------------------------------


def rep_from_sixd(rot6d: Tensor, rotation_dim: int) -> Tensor:
    """Convert (..., J, 6) rotations to the network representation (..., J, rd)."""
    if rotation_dim == 6:
        return rot6d
    m = rotations.sixd_to_matrix(rot6d)
    if rotation_dim == 3:
        return rotations.matrix_to_axis_angle(m)
    if rotation_dim == 4:
        return rotations.matrix_to_quaternion(m)
    return m.reshape(*m.shape[:-2], 9)


def rep_to_matrix(x: Tensor, rotation_dim: int) -> Tensor:
    """Raw network rotation output (..., J, rd) -> valid rotation matrices.

    Quaternions are normalized; raw 3x3 outputs are re-orthonormalized
    through their first two columns. Differentiable.
    """
    if rotation_dim == 6:
        return rotations.sixd_to_matrix(x)
    if rotation_dim == 3:
        return rotations.axis_angle_to_matrix(x)
    if rotation_dim == 4:
        return rotations.quaternion_to_matrix(x)
    m = x.reshape(*x.shape[:-1], 3, 3)
    return rotations.sixd_to_matrix(torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1))


def motion_to_features(rot6d: Tensor, trans: Tensor, config: ModelConfig) -> Tensor:
    """(B, T, J, 6) + (B, T, 3) -> flat network features (B, T, pose_dim)."""
    rep = rep_from_sixd(rot6d, config.rotation_dim)
    feats = rep.reshape(*rep.shape[:-2], config.num_joints * config.rotation_dim)
    if config.use_translation:
        feats = torch.cat([feats, trans], dim=-1)
    return feats


def split_features(features: Tensor, config: ModelConfig) -> tuple[Tensor, Tensor | None]:
    """Inverse of the flattening: (..., pose_dim) -> rotation part and translation."""
    rot_dim = config.num_joints * config.rotation_dim
    rot = features[..., :rot_dim].reshape(*features.shape[:-1], config.num_joints, config.rotation_dim)
    trans = features[..., rot_dim:] if config.use_translation else None
    return rot, trans


def features_to_motion_arrays(features: Tensor, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Network output -> ((..., T, J, 6) rotations, (..., T, 3) displacement).

    Non-6D representations are routed through rotation matrices so the result
    is always projectable; raw 6D output is kept as-is.
    """
    rot, trans = split_features(features, config)
    if config.rotation_dim == 6:
        rot6d = rot
    else:
        rot6d = rotations.matrix_to_sixd(rep_to_matrix(rot, config.rotation_dim), check=False)
    if trans is None:
        trans = torch.zeros(*features.shape[:-1], 3, dtype=features.dtype, device=features.device)
    return rot6d, trans


# -- encoder variants -------------------------------------------------------------


def _token_parameter(num_actions: int, dim: int) -> nn.Parameter:
    return nn.Parameter(torch.randn(num_actions, dim) * TOKEN_INIT_STD)


def _transformer_encoder(config: ModelConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=config.latent_dim,
        nhead=config.heads,
        dim_feedforward=config.ff_dim,
        dropout=config.dropout,
        activation=config.activation,
        batch_first=True,
    )
    return nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)


class TokenTransformerEncoder(nn.Module):
    """Transformer encoder pooled through two learnable per-action tokens."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(config.pose_dim, config.latent_dim)
        self.mu_token = _token_parameter(config.num_actions, config.latent_dim)
        self.sigma_token = _token_parameter(config.num_actions, config.latent_dim)
        self.encoder = _transformer_encoder(config)

    def forward(self, features: Tensor, actions: Tensor, padding_mask: Tensor | None = None):
        b, t, _ = features.shape
        x = self.embed(features)
        tokens = torch.stack([self.mu_token[actions], self.sigma_token[actions]], dim=1)
        x = torch.cat([tokens, x], dim=1)
        x = x + positional_encoding(t + 2, x.shape[-1], dtype=x.dtype, device=x.device)
        if padding_mask is not None:
            keep = torch.zeros(b, 2, dtype=torch.bool, device=features.device)
            padding_mask = torch.cat([keep, padding_mask], dim=1)
        out = self.encoder(x, src_key_padding_mask=padding_mask)
        return out[:, 0], _clamp_logvar(out[:, 1])


class MeanPoolTransformerEncoder(nn.Module):
    """No distribution tokens: masked temporal mean, then two linear heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(config.pose_dim, config.latent_dim)
        self.encoder = _transformer_encoder(config)
        self.mu_head = nn.Linear(config.latent_dim, config.latent_dim)
        self.logvar_head = nn.Linear(config.latent_dim, config.latent_dim)

    def forward(self, features: Tensor, actions: Tensor, padding_mask: Tensor | None = None):
        t = features.shape[1]
        x = self.embed(features)
        x = x + positional_encoding(t, x.shape[-1], dtype=x.dtype, device=x.device)
        out = self.encoder(x, src_key_padding_mask=padding_mask)
        if padding_mask is None:
            pooled = out.mean(dim=1)
        else:
            valid = (~padding_mask).to(out.dtype)[..., None]
            pooled = (out * valid).sum(dim=1) / valid.sum(dim=1).clamp(min=1.0)
        return self.mu_head(pooled), _clamp_logvar(self.logvar_head(pooled))


class GRUEncoder(nn.Module):
    """Recurrent encoder; the hidden state at each sequence's end feeds the heads.

    Action information enters as a learnable token frame prepended to the input.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.latent_dim
        self.embed = nn.Linear(config.pose_dim, d)
        self.action_token = _token_parameter(config.num_actions, d)
        self.gru = nn.GRU(
            d, d, num_layers=config.layers, batch_first=True,
            dropout=config.dropout if config.layers > 1 else 0.0,
        )
        self.mu_head = nn.Linear(d, d)
        self.logvar_head = nn.Linear(d, d)

    def forward(self, features: Tensor, actions: Tensor, padding_mask: Tensor | None = None):
        b, t, _ = features.shape
        x = torch.cat([self.action_token[actions][:, None, :], self.embed(features)], dim=1)
        if padding_mask is None:
            lengths = torch.full((b,), t + 1, dtype=torch.int64)
        else:
            lengths = (~padding_mask).sum(dim=1).cpu() + 1
        packed = nn.utils.rnn.pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        _, h_n = self.gru(packed)
        last = h_n[-1]
        return self.mu_head(last), _clamp_logvar(self.logvar_head(last))


class FCEncoder(nn.Module):
    """Flatten a fixed-length sequence and run an MLP. No variable lengths."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.fixed_length = int(config.fixed_length)
        d = config.latent_dim
        self.net = nn.Sequential(
            nn.Linear(self.fixed_length * config.pose_dim, config.ff_dim),
            nn.GELU(),
            nn.Linear(config.ff_dim, config.ff_dim),
            nn.GELU(),
        )
        self.mu_head = nn.Linear(config.ff_dim, d)
        self.logvar_head = nn.Linear(config.ff_dim, d)

    def forward(self, features: Tensor, actions: Tensor, padding_mask: Tensor | None = None):
        b, t, _ = features.shape
        if t != self.fixed_length or (padding_mask is not None and bool(padding_mask.any())):
            raise FixedLengthOnly(
                f"fully connected variant only accepts length {self.fixed_length}, got {t}"
            )
        h = self.net(features.reshape(b, -1))
        return self.mu_head(h), _clamp_logvar(self.logvar_head(h))


# -- latent conditioning -----------------------------------------------------------


class ActionBias(nn.Module):
    """Adds a learnable per-action bias token to the latent."""

    def __init__(self, num_actions: int, dim: int):
        super().__init__()
        self.bias_token = _token_parameter(num_actions, dim)

    def forward(self, z: Tensor, actions: Tensor) -> Tensor:
        return z + self.bias_token[actions]


class ActionOneHotConcat(nn.Module):
    """Concatenates a one-hot action code and projects back to the latent size."""

    def __init__(self, num_actions: int, dim: int):
        super().__init__()
        self.num_actions = num_actions
        self.proj = nn.Linear(dim + num_actions, dim)

    def forward(self, z: Tensor, actions: Tensor) -> Tensor:
        onehot = F.one_hot(actions, self.num_actions).to(z.dtype)
        return self.proj(torch.cat([z, onehot], dim=-1))


def _latent_conditioner(config: ModelConfig, onehot: bool) -> nn.Module:
    cls = ActionOneHotConcat if onehot else ActionBias
    return cls(config.num_actions, config.latent_dim)


# -- decoder variants ---------------------------------------------------------------


def _transformer_decoder(config: ModelConfig) -> nn.TransformerDecoder:
    layer = nn.TransformerDecoderLayer(
        d_model=config.latent_dim,
        nhead=config.heads,
        dim_feedforward=config.ff_dim,
        dropout=config.dropout,
        activation=config.activation,
        batch_first=True,
    )
    return nn.TransformerDecoder(layer, config.layers)


class OneShotTransformerDecoder(nn.Module):
    """Decodes all frames at once from positional-encoding queries.

    The conditioned latent is the entire (length-1) memory the queries attend
    to, so any duration can be requested at inference time.
    """

    def __init__(self, config: ModelConfig, onehot: bool = False):
        super().__init__()
        self.condition = _latent_conditioner(config, onehot)
        self.decoder = _transformer_decoder(config)
        self.out = nn.Linear(config.latent_dim, config.pose_dim)

    def forward(self, z, actions, duration, lengths=None, teacher=None):
        b = z.shape[0]
        memory = self.condition(z, actions)[:, None, :]
        queries = positional_encoding(duration, z.shape[-1], dtype=z.dtype, device=z.device)
        queries = queries[None].expand(b, -1, -1)
        mask = None
        if lengths is not None:
            steps = torch.arange(duration, device=z.device)
            mask = steps[None, :] >= lengths[:, None]
        hidden = self.decoder(queries, memory, tgt_key_padding_mask=mask)
        return self.out(hidden)


class AutoregressiveTransformerDecoder(nn.Module):
    """Causal transformer decoder: teacher forcing in training, rollout at inference."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.condition = _latent_conditioner(config, onehot=False)
        self.embed = nn.Linear(config.pose_dim, config.latent_dim)
        self.decoder = _transformer_decoder(config)
        self.out = nn.Linear(config.latent_dim, config.pose_dim)
        self.pose_dim = config.pose_dim

    def _step_inputs(self, prev: Tensor) -> Tensor:
        t = prev.shape[1]
        x = self.embed(prev)
        return x + positional_encoding(t, x.shape[-1], dtype=x.dtype, device=x.device)

    def forward(self, z, actions, duration, lengths=None, teacher=None):
        memory = self.condition(z, actions)[:, None, :]
        if teacher is not None:
            start = torch.zeros(z.shape[0], 1, self.pose_dim, dtype=z.dtype, device=z.device)
            prev = torch.cat([start, teacher[:, : duration - 1]], dim=1)
            causal = torch.triu(
                torch.ones(duration, duration, dtype=torch.bool, device=z.device), diagonal=1
            )
            pad = None
            if lengths is not None:
                steps = torch.arange(duration, device=z.device)
                pad = steps[None, :] >= lengths[:, None]
            hidden = self.decoder(
                self._step_inputs(prev), memory, tgt_mask=causal, tgt_key_padding_mask=pad
            )
            return self.out(hidden)

        frames = []
        prev = torch.zeros(z.shape[0], 1, self.pose_dim, dtype=z.dtype, device=z.device)
        for _ in range(duration):
            hidden = self.decoder(self._step_inputs(prev), memory)
            nxt = self.out(hidden[:, -1:])
            frames.append(nxt)
            prev = torch.cat([prev, nxt], dim=1)
        return torch.cat(frames, dim=1)


class GRUDecoder(nn.Module):
    """Recurrent decoder driven by positional encodings, initialized from the latent."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.latent_dim
        self.layers = config.layers
        self.condition = _latent_conditioner(config, onehot=False)
        self.init_hidden = nn.Linear(d, config.layers * d)
        self.gru = nn.GRU(
            d, d, num_layers=config.layers, batch_first=True,
            dropout=config.dropout if config.layers > 1 else 0.0,
        )
        self.out = nn.Linear(d, config.pose_dim)

    def forward(self, z, actions, duration, lengths=None, teacher=None):
        b, d = z.shape
        cond = self.condition(z, actions)
        h0 = self.init_hidden(cond).reshape(b, self.layers, d).transpose(0, 1).contiguous()
        inputs = positional_encoding(duration, d, dtype=z.dtype, device=z.device)
        hidden, _ = self.gru(inputs[None].expand(b, -1, -1).contiguous(), h0)
        return self.out(hidden)


class FCDecoder(nn.Module):
    """MLP from the conditioned latent to the flattened fixed-length sequence."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.fixed_length = int(config.fixed_length)
        self.pose_dim = config.pose_dim
        self.condition = _latent_conditioner(config, onehot=True)
        self.net = nn.Sequential(
            nn.Linear(config.latent_dim, config.ff_dim),
            nn.GELU(),
            nn.Linear(config.ff_dim, config.ff_dim),
            nn.GELU(),
            nn.Linear(config.ff_dim, self.fixed_length * self.pose_dim),
        )

    def forward(self, z, actions, duration, lengths=None, teacher=None):
        if duration != self.fixed_length:
            raise FixedLengthOnly(
                f"fully connected variant only decodes length {self.fixed_length}, got {duration}"
            )
        flat = self.net(self.condition(z, actions))
        return flat.reshape(z.shape[0], self.fixed_length, self.pose_dim)


# -- assembled model -----------------------------------------------------------------

_ENCODERS = {
    "actor": TokenTransformerEncoder,
    "autoregressive_decoder": TokenTransformerEncoder,
    "onehot_concat_decoder": TokenTransformerEncoder,
    "mean_pool_encoder": MeanPoolTransformerEncoder,
    "gru": GRUEncoder,
    "fully_connected": FCEncoder,
}


def _build_decoder(config: ModelConfig) -> nn.Module:
    if config.variant in ("actor", "mean_pool_encoder"):
        return OneShotTransformerDecoder(config, onehot=False)
    if config.variant == "onehot_concat_decoder":
        return OneShotTransformerDecoder(config, onehot=True)
    if config.variant == "autoregressive_decoder":
        return AutoregressiveTransformerDecoder(config)
    if config.variant == "gru":
        return GRUDecoder(config)
    return FCDecoder(config)


class MotionVAE(nn.Module):
    """Encoder + latent sampling + decoder, with single-motion convenience ops."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = _ENCODERS[config.variant](config)
        self.decoder = _build_decoder(config)

    # ---- batched training path ----

    def _check_actions(self, actions: Tensor) -> None:
        if actions.numel() and (int(actions.min()) < 0 or int(actions.max()) >= self.config.num_actions):
            raise UnknownAction(
                f"action labels must lie in [0, {self.config.num_actions}), "
                f"got range [{int(actions.min())}, {int(actions.max())}]"
            )

    def encode_batch(self, features: Tensor, actions: Tensor, padding_mask: Tensor | None = None):
        if features.shape[1] < 1:
            raise EmptySequence("cannot encode a zero-length sequence")
        self._check_actions(actions)
        return self.encoder(features, actions, padding_mask)

    def decode_batch(self, z, actions, duration, lengths=None, teacher=None):
        if duration < 1:
            raise NonPositiveDuration(f"duration must be >= 1, got {duration}")
        self._check_actions(actions)
        return self.decoder(z, actions, duration, lengths=lengths, teacher=teacher)

    def forward(self, features, actions, padding_mask=None, lengths=None,
                generator: torch.Generator | None = None):
        """Full VAE pass used in training. Returns (pred, mu, logvar, z)."""
        mu, logvar = self.encode_batch(features, actions, padding_mask)
        z = reparameterize(mu, logvar, generator)
        teacher = features if self.config.variant == "autoregressive_decoder" else None
        pred = self.decode_batch(z, actions, features.shape[1], lengths=lengths, teacher=teacher)
        return pred, mu, logvar, z

    # ---- single-motion inference ops ----

    @contextlib.contextmanager
    def _inference(self):
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                yield
        finally:
            self.train(was_training)

    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _validate_action(self, action: int) -> int:
        action = int(action)
        if not 0 <= action < self.config.num_actions:
            raise UnknownAction(f"action {action} outside [0, {self.config.num_actions})")
        return action

    def encode(self, motion: Motion, action: int | None = None) -> tuple[Tensor, Tensor]:
        """Posterior parameters (mu, logvar) of a single motion, each (latent_dim,)."""
        action = self._validate_action(motion.action if action is None else action)
        dtype = self._dtype()
        features = motion_to_features(
            motion.rot6d[None].to(dtype), motion.trans[None].to(dtype), self.config
        )
        with self._inference():
            mu, logvar = self.encode_batch(features, torch.tensor([action]))
        return mu[0], logvar[0]

    def decode(self, z: Tensor, action: int, duration: int, fps: float = 20.0) -> Motion:
        """Decode a latent vector into a `duration`-frame motion."""
        action = self._validate_action(action)
        if duration < 1:
            raise NonPositiveDuration(f"duration must be >= 1, got {duration}")
        with self._inference():
            pred = self.decode_batch(z[None].to(self._dtype()), torch.tensor([action]), int(duration))
            rot6d, trans = features_to_motion_arrays(pred, self.config)
        return Motion(rot6d[0], trans[0], action, fps)

    def generate(self, action: int, duration: int,
                 generator: torch.Generator | None = None, fps: float = 20.0) -> Motion:
        """Sample z ~ N(0, I) and decode it for the given action and duration."""
        z = torch.randn(self.config.latent_dim, generator=generator, dtype=self._dtype())
        return self.decode(z, action, duration, fps=fps)

    def generate_batch(self, actions, duration: int,
                       generator: torch.Generator | None = None,
                       fps: float = 20.0) -> list[Motion]:
        """Batched `generate`: one motion per entry of `actions`, same duration."""
        if duration < 1:
            raise NonPositiveDuration(f"duration must be >= 1, got {duration}")
        action_t = torch.as_tensor(list(actions), dtype=torch.int64)
        z = torch.randn(len(action_t), self.config.latent_dim, generator=generator,
                        dtype=self._dtype())
        with self._inference():
            pred = self.decode_batch(z, action_t, int(duration))
            rot6d, trans = features_to_motion_arrays(pred, self.config)
        return [
            Motion(rot6d[i], trans[i], int(action_t[i]), fps) for i in range(len(action_t))
        ]


def build_variant(config: ModelConfig, seed: int | None = None) -> MotionVAE:
    """Construct the model for `config.variant`, optionally with seeded init."""
    if config.variant not in VARIANTS:
        raise UnknownVariant(f"unknown variant {config.variant!r}")
    if seed is not None:
        torch.manual_seed(seed)
    return MotionVAE(config)


def config_with(config: ModelConfig, **overrides) -> ModelConfig:
    """Copy a config with field overrides (ablation helper)."""
    return replace(config, **overrides)
