"""Synchronous federated averaging with compressed uplink.

Each round: sample clients uniformly without replacement, run local SGD on
each (optionally constrained to a low-rank or masked update space), encode
every layer update into a wire message, then decode and average on the
server and apply with the server learning rate (1 by default). Rounds are a
strict barrier; decoded updates are summed in client-id order so results do
not depend on client execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import models, structured, wire
from .data import ClientDataset, Dataset
from .sketch import sketch_decode, sketch_encode
from .structured import (
    LowRankFactors,
    MaskPattern,
    decode_low_rank,
    decode_mask,
    encode_low_rank,
    encode_mask,
    expand_low_rank,
    gen_mask,
    new_low_rank,
    project_gradient,
    rank_for,
)
from .tensorops import (
    DTYPE,
    ModelParams,
    P_CODEC,
    P_INIT,
    P_LOCAL,
    P_SAMPLE,
    draw_seed,
    mark_compressible,
    rng_stream,
)
from .wire import ByteLedger, CompressionConfig, decode_raw, encode_raw

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Local loss became non-finite; the round is aborted, nothing is clipped."""


@dataclass(frozen=True)
class RoundConfig:
    clients_per_round: int
    local_epochs: int = 1
    local_lr: float = 0.1
    server_lr: float = 1.0
    batch_size: int = 32
    weighted: bool = False  # weight the server average by client example counts

    def __post_init__(self):
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.local_lr < 0:
            raise ValueError("local_lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RoundRecord:
    round_index: int
    client_ids: list[int]
    payload_bytes_cum: int
    total_bytes_cum: int
    train_loss: float
    test_accuracy: float | None  # filled on evaluation rounds only


@dataclass
class LocalResult:
    deltas: list[np.ndarray]
    lowrank: dict[int, LowRankFactors] = field(default_factory=dict)
    masks: dict[int, MaskPattern] = field(default_factory=dict)
    mean_loss: float = 0.0


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    params: ModelParams
    ledger: ByteLedger

    def accuracies(self) -> list[tuple[int, float]]:
        return [(r.round_index, r.test_accuracy) for r in self.records if r.test_accuracy is not None]


def sample_clients(master_seed: int, round_index: int, n_clients: int, per_round: int) -> list[int]:
    """Uniform without replacement within the round, fresh across rounds."""
    if per_round > n_clients:
        raise ValueError(f"cannot sample {per_round} of {n_clients} clients")
    rng = rng_stream(master_seed, P_SAMPLE, round_index)
    return sorted(int(c) for c in rng.choice(n_clients, size=per_round, replace=False))


def local_train(
    model: models.Model,
    params: ModelParams,
    data: ClientDataset,
    cfg: RoundConfig,
    compression: CompressionConfig,
    codec_rng: np.random.Generator,
    data_rng: np.random.Generator,
) -> LocalResult:
    """Run local SGD and return per-layer deltas plus any structured factors.

    Compressible layers train inside the restricted space when a structured
    scheme is selected: low-rank updates maintain trainable coefficients
    against a frozen seeded factor, masked updates multiply gradients by the
    seeded 0/1 pattern so off-pattern entries never move. Exempt layers train
    unconstrained under every scheme.
    """
    base = [layer.values for layer in params.layers]
    work = [v.copy() for v in base]
    lr = np.float32(cfg.local_lr)

    result = LocalResult(deltas=[])
    for i, layer in enumerate(params.layers):
        if not layer.compressible:
            continue
        rows, cols = layer.values.shape
        if compression.scheme == "lowrank":
            k = rank_for(compression.mode_fraction, rows, cols)
            factors = new_low_rank(rows, cols, k, draw_seed(codec_rng))
            result.lowrank[i] = factors
            work[i] = base[i] + expand_low_rank(factors)
        elif compression.scheme == "mask":
            result.masks[i] = gen_mask((rows, cols), compression.mode_fraction, draw_seed(codec_rng))
    dense_masks = {i: p.dense() for i, p in result.masks.items()}

    n = len(data)
    total_loss = 0.0
    steps = 0
    for _ in range(cfg.local_epochs):
        order = data_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(work, data.x[idx], data.y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"client {data.client_id}: non-finite loss after {steps} steps"
                )
            total_loss += loss
            steps += 1
            for i in range(len(work)):
                if i in result.lowrank:
                    f = result.lowrank[i]
                    f.coeffs -= lr * project_gradient(grads[i], f.left)
                    work[i] = base[i] + expand_low_rank(f)
                elif i in dense_masks:
                    work[i] -= lr * (grads[i] * dense_masks[i])
                else:
                    work[i] -= lr * grads[i]

    result.deltas = [
        expand_low_rank(result.lowrank[i]) if i in result.lowrank else work[i] - base[i]
        for i in range(len(work))
    ]
    result.mean_loss = total_loss / max(steps, 1)
    return result


def encode_update(
    result: LocalResult,
    params: ModelParams,
    compression: CompressionConfig,
    codec_rng: np.random.Generator,
) -> list[wire.Encoded]:
    """One encoded message per layer; exempt layers go raw under every scheme."""
    out = []
    for i, layer in enumerate(params.layers):
        delta = result.deltas[i]
        if not layer.compressible or compression.scheme == "none":
            out.append(encode_raw(delta))
        elif compression.scheme == "lowrank":
            out.append(
                encode_low_rank(result.lowrank[i], delta.shape, compression.mode_fraction)
            )
        elif compression.scheme == "mask":
            out.append(encode_mask(delta, result.masks[i]))
        else:
            out.append(sketch_encode(delta, compression.sketch_config(), codec_rng))
    return out


def decode_update(enc: wire.Encoded) -> np.ndarray:
    if isinstance(enc, wire.RawEncoded):
        return decode_raw(enc)
    if isinstance(enc, structured.LowRankEncoded):
        return decode_low_rank(enc)
    if isinstance(enc, structured.MaskEncoded):
        return decode_mask(enc)
    return sketch_decode(enc)


def server_aggregate(
    params: ModelParams,
    messages_by_client: dict[int, list[bytes]],
    server_lr: float = 1.0,
    weights: dict[int, float] | None = None,
) -> ModelParams:
    """Decode every client's messages, average, and step the global model.

    Summation runs in ascending client-id order, so the result is independent
    of the order clients finished. Weights default to uniform.
    """
    if not messages_by_client:
        return params
    order = sorted(messages_by_client)
    if weights is None:
        scale = {cid: 1.0 / len(order) for cid in order}
    else:
        total = sum(weights[cid] for cid in order)
        scale = {cid: weights[cid] / total for cid in order}

    mean = [np.zeros(layer.values.shape, dtype=np.float64) for layer in params.layers]
    for cid in order:
        msgs = messages_by_client[cid]
        if len(msgs) != len(params.layers):
            raise ValueError(f"client {cid} sent {len(msgs)} messages for {len(params.layers)} layers")
        for i, raw in enumerate(msgs):
            try:
                delta = decode_update(wire.deserialize(raw))
            except wire.WireError as exc:
                raise wire.CorruptPayloadError(
                    f"client {cid}, layer {params.layers[i].name}: {exc}"
                ) from exc
            if delta.shape != params.layers[i].values.shape:
                raise ValueError(
                    f"client {cid}, layer {params.layers[i].name}: "
                    f"decoded shape {delta.shape} != {params.layers[i].values.shape}"
                )
            mean[i] += scale[cid] * delta.astype(np.float64)

    updated = params.clone()
    for i, layer in enumerate(updated.layers):
        layer.values += (server_lr * mean[i]).astype(DTYPE)
    return updated


def run_experiment(
    model: models.Model,
    clients: list[ClientDataset],
    test: Dataset,
    rounds: int,
    round_cfg: RoundConfig,
    compression: CompressionConfig,
    master_seed: int,
    eval_interval: int = 1,
) -> ExperimentResult:
    """Run the full synchronous loop; deterministic given the master seed."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if eval_interval < 1:
        raise ValueError("eval_interval must be >= 1")
    params = models.init_params(model, rng_stream(master_seed, P_INIT))
    mark_compressible(params, compression.exempt_below_fraction)
    ledger = ByteLedger()
    records: list[RoundRecord] = []

    for t in range(1, rounds + 1):
        ids = sample_clients(master_seed, t, len(clients), round_cfg.clients_per_round)
        messages: dict[int, list[bytes]] = {}
        losses = []
        for cid in ids:
            codec_rng = rng_stream(master_seed, P_CODEC, t, cid)
            result = local_train(
                model,
                params,
                clients[cid],
                round_cfg,
                compression,
                codec_rng,
                rng_stream(master_seed, P_LOCAL, t, cid),
            )
            encoded = encode_update(result, params, compression, codec_rng)
            client_msgs = []
            for layer, enc in zip(params.layers, encoded):
                raw = wire.serialize(enc)
                ledger.record(t, cid, layer.name, raw, wire.payload_bits(enc))
                client_msgs.append(raw)
            messages[cid] = client_msgs
            losses.append(result.mean_loss)

        weights = {cid: float(len(clients[cid])) for cid in ids} if round_cfg.weighted else None
        params = server_aggregate(params, messages, round_cfg.server_lr, weights)

        acc = None
        if t % eval_interval == 0 or t == rounds:
            values = [layer.values for layer in params.layers]
            acc = models.accuracy(model, values, test.x, test.y)
            logger.info("round %d: loss %.4f accuracy %.4f", t, float(np.mean(losses)), acc)
        records.append(
            RoundRecord(
                round_index=t,
                client_ids=ids,
                payload_bytes_cum=ledger.payload_total,
                total_bytes_cum=ledger.total,
                train_loss=float(np.mean(losses)),
                test_accuracy=acc,
            )
        )
    return ExperimentResult(records, params, ledger)
