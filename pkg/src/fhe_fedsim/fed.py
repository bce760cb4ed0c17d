"""Federated round state machine.

Per round: the central party broadcasts the current global parameters,
every client trains locally and uploads its update (plain float32 or one
ciphertext chunk per <=4096-value slice of each tensor), the central
party aggregates with a sample-count-weighted average, and a seeded
subset of clients evaluates the new global model.

Key protocol properties, enforced here:
  - the central party holds only public key material; clients share the
    secret key, and every secret-key use is tagged with the active role
    (see ckks.role_scope) so tests can assert the central count is zero;
  - encrypted aggregation scales each update by an unencrypted weight
    plaintext, adds everything at the doubled scale, and rescales once;
  - transport is an in-process channel with mandatory serialization at
    each hop, so byte counts are real serialized sizes;
  - the round-1 broadcast is plaintext in both modes (nothing trained yet);
    every later broadcast in encrypted mode is the encrypted aggregate;
  - client failures abort the run (no partial aggregation).
"""

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ckks, metrics, nn

MESSAGE_VERSION = 1
_PLAIN_TAG = 0
_ENCRYPTED_TAG = 1


class FedError(Exception):
    pass


class ClientError(FedError):
    """A client failed mid-round; the run aborts (fail-fast policy)."""


@dataclass(frozen=True)
class RoundConfig:
    n_clients: int = 20
    n_rounds: int = 20
    local_epochs: int = 10
    batch_size: int = 32
    lr: float = 0.003
    momentum: float = 0.0
    fit_fraction: float = 1.0
    eval_fraction: float = 0.5
    encrypted: bool = False
    seed: int = 0
    max_workers: int = 1

    def validate(self):
        if self.n_clients < 1:
            raise FedError("n_clients must be >= 1")
        if self.n_rounds < 1:
            raise FedError("n_rounds must be >= 1")
        if self.local_epochs < 0:
            raise FedError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise FedError("batch_size must be >= 1")
        if not 0 < self.fit_fraction <= 1:
            raise FedError("fit_fraction must be in (0, 1]")
        if not 0 < self.eval_fraction <= 1:
            raise FedError("eval_fraction must be in (0, 1]")
        if self.max_workers < 1:
            raise FedError("max_workers must be >= 1")
        return self


@dataclass(frozen=True)
class EvalReport:
    client_id: int
    n_examples: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    loss: float


@dataclass(frozen=True)
class ClientTimings:
    round_time_s: float
    encryption_time_s: float
    decryption_time_s: float


# ---------------------------------------------------------------------------
# parameter messages and their wire format


@dataclass(frozen=True)
class PlainTensor:
    name: str
    values: np.ndarray  # float32, flat


@dataclass(frozen=True)
class EncryptedTensor:
    name: str
    n_elements: int
    chunks: tuple  # of ckks.Ciphertext


@dataclass(frozen=True)
class ParameterMessage:
    tensors: tuple

    @property
    def encrypted(self):
        return any(isinstance(t, EncryptedTensor) for t in self.tensors)

    def to_bytes(self):
        parts = [struct.pack("<BI", MESSAGE_VERSION, len(self.tensors))]
        for t in self.tensors:
            name = t.name.encode("utf-8")
            parts.append(struct.pack("<H", len(name)))
            parts.append(name)
            if isinstance(t, PlainTensor):
                values = np.ascontiguousarray(t.values, dtype="<f4")
                parts.append(struct.pack("<BI", _PLAIN_TAG, values.size))
                parts.append(values.tobytes())
            else:
                parts.append(struct.pack("<BII", _ENCRYPTED_TAG, t.n_elements,
                                         len(t.chunks)))
                for ct in t.chunks:
                    blob = ckks.serialize(ct)
                    parts.append(struct.pack("<I", len(blob)))
                    parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data, ctx=None):
        try:
            return cls._parse(data, ctx)
        except FedError:
            raise
        except (struct.error, ValueError, UnicodeDecodeError, ckks.CkksError) as exc:
            raise FedError(f"malformed parameter message: {exc}") from exc

    @classmethod
    def _parse(cls, data, ctx):
        version, count = struct.unpack_from("<BI", data, 0)
        if version != MESSAGE_VERSION:
            raise FedError(f"unsupported message version {version}")
        off = 5
        tensors = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            (tag,) = struct.unpack_from("<B", data, off)
            off += 1
            if tag == _PLAIN_TAG:
                (n,) = struct.unpack_from("<I", data, off)
                off += 4
                values = np.frombuffer(data, dtype="<f4", count=n, offset=off).copy()
                off += 4 * n
                tensors.append(PlainTensor(name=name, values=values))
            elif tag == _ENCRYPTED_TAG:
                n, n_chunks = struct.unpack_from("<II", data, off)
                off += 8
                if ctx is None:
                    raise FedError("encrypted message needs a CKKS context to parse")
                chunks = []
                for _ in range(n_chunks):
                    (blob_len,) = struct.unpack_from("<I", data, off)
                    off += 4
                    chunks.append(ckks.deserialize(data[off : off + blob_len], ctx))
                    off += blob_len
                tensors.append(EncryptedTensor(name=name, n_elements=n,
                                               chunks=tuple(chunks)))
            else:
                raise FedError(f"unknown tensor tag {tag}")
        if off != len(data):
            raise FedError("trailing bytes in parameter message")
        return cls(tensors=tuple(tensors))


def plain_message(named):
    return ParameterMessage(tensors=tuple(
        PlainTensor(name=n, values=np.asarray(a, dtype=np.float32).ravel().copy())
        for n, a in named))


def encrypt_tensors(named, ctx, pk, rng):
    """One ciphertext per <=slot_count slice of each tensor, zero-padded."""
    out = []
    cap = ctx.slot_count
    for name, arr in named:
        flat = np.asarray(arr, dtype=np.float32).ravel()
        chunks = []
        for start in range(0, max(len(flat), 1), cap):
            piece = flat[start : start + cap].astype(np.float64)
            padded = np.zeros(cap)
            padded[: len(piece)] = piece
            chunks.append(ckks.encrypt(ckks.encode(padded, ctx), pk, rng))
        out.append(EncryptedTensor(name=name, n_elements=len(flat), chunks=tuple(chunks)))
    return out


def decrypt_tensors(etensors, ctx, sk):
    out = []
    for t in etensors:
        parts = [ckks.decode(ckks.decrypt(ct, sk), ctx) for ct in t.chunks]
        flat = np.concatenate(parts)[: t.n_elements]
        out.append((t.name, flat.astype(np.float32)))
    return out


# ---------------------------------------------------------------------------
# aggregation


def _weights(counts):
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise FedError("sample counts must be positive")
    return counts / counts.sum()


def fedavg_plain(updates):
    """updates: [(named_tensors, n_k)] -> sample-count-weighted mean."""
    if not updates:
        raise FedError("nothing to aggregate")
    weights = _weights([n for _, n in updates])
    names = [n for n, _ in updates[0][0]]
    acc = {n: np.zeros(np.asarray(a).size, dtype=np.float64)
           for n, a in updates[0][0]}
    for (named, _), w in zip(updates, weights):
        if [n for n, _ in named] != names:
            raise FedError("update tensor names/order differ across clients")
        for name, arr in named:
            flat = np.asarray(arr, dtype=np.float64).ravel()
            if flat.size != acc[name].size:
                raise FedError(f"shape mismatch for tensor {name!r}")
            acc[name] += w * flat
    return [(n, acc[n].astype(np.float32)) for n in names]


def fedavg_encrypted(updates, ctx, pk):
    """Weighted mean over encrypted updates using public material only.

    Each client's ciphertexts are scaled by an unencrypted weight plaintext
    encoded at the prime the final rescale drops, summed at the doubled
    scale, and rescaled once; the result decrypts to fedavg_plain's output
    within the aggregation tolerance.
    """
    if not updates:
        raise FedError("nothing to aggregate")
    if pk.b.degree != ctx.degree:
        raise FedError("public key does not match the CKKS context")
    weights = _weights([n for _, n in updates])
    names = [t.name for t in updates[0][0]]
    level = updates[0][0][0].chunks[0].level
    stable_scale = ctx.rescale_prime(level)
    weight_plaintexts = [
        ckks.encode(np.full(ctx.slot_count, w), ctx, level=level, scale=stable_scale)
        for w in weights
    ]
    aggregated = []
    for idx, ref in enumerate(updates[0][0]):
        total = None
        for (tensors, _), wpt in zip(updates, weight_plaintexts):
            t = tensors[idx]
            if t.name != ref.name or t.n_elements != ref.n_elements \
               or len(t.chunks) != len(ref.chunks):
                raise FedError(f"encrypted update mismatch for tensor {ref.name!r}")
            scaled = tuple(ckks.ct_mul_plain(ct, wpt) for ct in t.chunks)
            total = scaled if total is None else tuple(
                ckks.ct_add(a, b) for a, b in zip(total, scaled))
        rescaled = tuple(ckks.rescale(ct, ctx) for ct in total)
        aggregated.append(EncryptedTensor(name=ref.name, n_elements=ref.n_elements,
                                          chunks=rescaled))
    if [t.name for t in aggregated] != names:
        raise FedError("aggregation scrambled tensor order")
    return aggregated


# ---------------------------------------------------------------------------
# clients and the experiment loop


class FederatedClient:
    def __init__(self, client_id, model, split, train_rng, crypto_rng, ctx, sk, pk):
        self.client_id = client_id
        self.model = model
        self.split = split
        self.train_rng = train_rng
        self.crypto_rng = crypto_rng
        self.ctx = ctx
        self.sk = sk
        self.pk = pk

    @property
    def n_train(self):
        return len(self.split.train_labels)

    def _apply_message(self, message):
        t0 = time.perf_counter()
        if message.encrypted:
            named = decrypt_tensors(message.tensors, self.ctx, self.sk)
            dec_time = time.perf_counter() - t0
        else:
            named = [(t.name, t.values) for t in message.tensors]
            dec_time = 0.0
        self.model.set_parameters(named)
        return dec_time

    def fit(self, message_bytes, config):
        """Apply the broadcast, run local epochs, return the update message."""
        with ckks.role_scope(f"client-{self.client_id}"):
            t_start = time.perf_counter()
            message = ParameterMessage.from_bytes(message_bytes, self.ctx)
            dec_time = self._apply_message(message)
            x, y = self.split.train_images, self.split.train_labels
            velocity = None
            for _ in range(config.local_epochs):
                order = self.train_rng.permutation(len(x))
                for i in range(0, len(x), config.batch_size):
                    idx = order[i : i + config.batch_size]
                    _, grads = self.model.loss_and_grad(x[idx], y[idx])
                    velocity = nn.sgd_step(self.model, grads, config.lr,
                                           config.momentum, velocity)
            named = self.model.get_parameters()
            enc_time = 0.0
            if config.encrypted:
                t0 = time.perf_counter()
                tensors = encrypt_tensors(named, self.ctx, self.pk, self.crypto_rng)
                enc_time = time.perf_counter() - t0
                update = ParameterMessage(tensors=tuple(tensors))
            else:
                update = plain_message(named)
            blob = update.to_bytes()
            timings = ClientTimings(round_time_s=time.perf_counter() - t_start,
                                    encryption_time_s=enc_time,
                                    decryption_time_s=dec_time)
            return blob, self.n_train, timings

    def evaluate(self, message_bytes):
        with ckks.role_scope(f"client-{self.client_id}"):
            message = ParameterMessage.from_bytes(message_bytes, self.ctx)
            self._apply_message(message)
            m = nn.evaluate_model(self.model, self.split.test_images,
                                  self.split.test_labels)
            return EvalReport(client_id=self.client_id,
                              n_examples=len(self.split.test_labels), **m)


def aggregate_eval_reports(reports):
    """n_k-weighted averages of the classification metrics."""
    if not reports:
        raise FedError("empty evaluation sample")
    weights = _weights([r.n_examples for r in reports])
    agg = {}
    for key in ("accuracy", "precision", "recall", "f1", "loss"):
        agg[key] = float(sum(w * getattr(r, key) for w, r in zip(weights, reports)))
    return agg


@dataclass
class RunLog:
    arch_id: str
    encrypted: bool
    trainable_parameters: int
    records: list = field(default_factory=list)
    resources: list = field(default_factory=list)
    eval_reports: list = field(default_factory=list)
    final_parameters: list = field(default_factory=list)
    secret_key_accesses: dict = field(default_factory=dict)
    total_time_s: float = 0.0


def run_experiment(arch_id, images, labels, config, holdout=None,
                   ckks_context=None, sample_period=0.5, input_size=None):
    """Execute a full federated run; deterministic given config.seed.

    `images`/`labels` are the client pool (partitioned internally);
    `holdout` is the central party's own test set, evaluated only in
    plain mode.
    """
    config.validate()
    input_size = images.shape[-1] if input_size is None else input_size
    seed_root = np.random.SeedSequence(config.seed)
    s_partition, s_init, s_keys, s_eval, s_clients, s_crypto = seed_root.spawn(6)
    client_train_seeds = s_clients.spawn(config.n_clients)
    client_crypto_seeds = s_crypto.spawn(config.n_clients)

    part = nn.partition(images, labels, config.n_clients,
                        np.random.default_rng(s_partition), holdout=holdout)

    central_model = nn.build_model(arch_id, input_size, np.random.default_rng(s_init))
    trainable = central_model.parameter_count()

    ctx = sk = pk = None
    if config.encrypted:
        ctx = ckks_context if ckks_context is not None else ckks.CkksContext.create()
        with ckks.role_scope("clients"):
            sk, pk = ckks.keygen(ctx, np.random.default_rng(s_keys))

    clients = [
        FederatedClient(
            client_id=i,
            model=central_model.clone(),
            split=part.clients[i],
            train_rng=np.random.default_rng(client_train_seeds[i]),
            crypto_rng=np.random.default_rng(client_crypto_seeds[i]),
            ctx=ctx, sk=sk, pk=pk)
        for i in range(config.n_clients)
    ]
    eval_rng = np.random.default_rng(s_eval)

    access_before = ckks.secret_key_accesses()
    log = RunLog(arch_id=arch_id, encrypted=config.encrypted,
                 trainable_parameters=trainable)
    sampler = metrics.ResourceSampler(
        roles=["central"] + [f"client-{i}" for i in range(config.n_clients)],
        period=sample_period).start()

    global_plain = central_model.get_parameters()  # round-1 broadcast content
    global_encrypted = None
    total_sent_per_client = 0
    total_received = 0
    run_start = time.perf_counter()

    try:
        for rnd in range(1, config.n_rounds + 1):
            round_start = time.perf_counter()
            with ckks.role_scope("central"):
                if config.encrypted and global_encrypted is not None:
                    broadcast = ParameterMessage(tensors=tuple(global_encrypted))
                else:
                    broadcast = plain_message(global_plain)
                broadcast_bytes = broadcast.to_bytes()

            n_fit = int(np.ceil(config.fit_fraction * config.n_clients))
            fit_ids = sorted(eval_rng.choice(config.n_clients, size=n_fit,
                                             replace=False).tolist()) \
                if n_fit < config.n_clients else list(range(config.n_clients))

            def _fit(cid):
                try:
                    return clients[cid].fit(broadcast_bytes, config)
                except Exception as exc:
                    raise ClientError(
                        f"client {cid} failed in round {rnd}: {exc}") from exc

            if config.max_workers > 1:
                with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
                    results = list(pool.map(_fit, fit_ids))
            else:
                results = [_fit(cid) for cid in fit_ids]
            collect_done = time.perf_counter()

            uploads = []
            counts = []
            timings = []
            for blob, n_k, t in results:
                total_received += len(blob)
                uploads.append(blob)
                counts.append(n_k)
                timings.append(t)

            with ckks.role_scope("central"):
                agg_start = time.perf_counter()
                parsed = [ParameterMessage.from_bytes(b, ctx) for b in uploads]
                if config.encrypted:
                    enc_updates = [(msg.tensors, n) for msg, n in zip(parsed, counts)]
                    global_encrypted = fedavg_encrypted(enc_updates, ctx, pk)
                else:
                    plain_updates = [([(t.name, t.values) for t in msg.tensors], n)
                                     for msg, n in zip(parsed, counts)]
                    global_plain = fedavg_plain(plain_updates)
                agg_time = time.perf_counter() - agg_start

                if config.encrypted:
                    eval_broadcast = ParameterMessage(
                        tensors=tuple(global_encrypted)).to_bytes()
                else:
                    eval_broadcast = plain_message(global_plain).to_bytes()

            n_eval = int(np.ceil(config.eval_fraction * config.n_clients))
            eval_ids = sorted(eval_rng.choice(config.n_clients, size=n_eval,
                                              replace=False).tolist())
            reports = []
            for cid in eval_ids:
                try:
                    reports.append(clients[cid].evaluate(eval_broadcast))
                except Exception as exc:
                    raise ClientError(
                        f"client {cid} failed evaluating round {rnd}: {exc}") from exc
            log.eval_reports.append(reports)
            agg_eval = aggregate_eval_reports(reports)

            central_acc = central_loss = None
            if not config.encrypted and part.holdout_images is not None:
                with ckks.role_scope("central"):
                    central_model.set_parameters(global_plain)
                    hm = nn.evaluate_model(central_model, part.holdout_images,
                                           part.holdout_labels)
                    central_acc, central_loss = hm["accuracy"], hm["loss"]

            round_end = time.perf_counter()
            sent_this_round = len(broadcast_bytes)
            total_sent_per_client += sent_this_round
            cpu_c = metrics.window_stats(sampler.window(round_start, round_end, "central"))
            cpu_k = metrics.window_stats(sampler.window(round_start, round_end, "client"))
            log.records.append(metrics.RoundRecord(
                round=rnd,
                trainable_parameters=trainable,
                total_training_time_s=round_end - run_start,
                central_round_time_s=collect_done - round_start,
                client_round_time_s=float(np.mean([t.round_time_s for t in timings])),
                parameter_aggregation_time_s=agg_time,
                encryption_time_s=float(np.mean([t.encryption_time_s for t in timings]))
                if config.encrypted else None,
                decryption_time_s=float(np.mean([t.decryption_time_s for t in timings]))
                if config.encrypted else None,
                central_accuracy=central_acc,
                central_loss=central_loss,
                aggregated_accuracy=agg_eval["accuracy"],
                aggregated_recall=agg_eval["recall"],
                aggregated_precision=agg_eval["precision"],
                aggregated_f1=agg_eval["f1"],
                aggregated_loss=agg_eval["loss"],
                central_virtual_memory_mib=cpu_c[0],
                central_real_memory_mib=cpu_c[1],
                central_cpu_percent=cpu_c[2],
                client_virtual_memory_mib=cpu_k[0],
                client_real_memory_mib=cpu_k[1],
                client_cpu_percent=cpu_k[2],
                total_bytes_received=total_received,
                total_bytes_sent=total_sent_per_client,
                bytes_sent_round=sent_this_round,
                bytes_received_round=sum(len(b) for b in uploads),
            ))
    finally:
        log.resources = sampler.stop()

    log.total_time_s = time.perf_counter() - run_start
    if config.encrypted:
        with ckks.role_scope("clients"):
            log.final_parameters = decrypt_tensors(global_encrypted, ctx, sk)
    else:
        log.final_parameters = global_plain
    after = ckks.secret_key_accesses()
    log.secret_key_accesses = {
        role: after.get(role, 0) - access_before.get(role, 0)
        for role in set(after) | set(access_before)
        if after.get(role, 0) != access_before.get(role, 0)
    }
    return log
