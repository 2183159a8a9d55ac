"""Device-group data path: sensor broadcast and aggregator intake.

Sensors are broadcast-only: a reading goes out as three frames
(payload, binding hash, chain key) sharing a per-round sequence number,
and the sensor never listens.  Aggregators verify each reassembled
round against the sensor's rolling anchor, cross-check the payload with
the other group aggregators during the alarm window, and batch cleared
data into endorsed transactions.

A deterministic "responsible" aggregator per sensor (hash of the sensor
key modulo the group roster) submits the transactions; the others
verify, endorse, and keep replicas.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from . import chainwire, signatures
from .chainsig import (
    ChainKeyState,
    ChainSignature,
    VerifierState,
    ot_sign,
    ot_verify,
)
from .encoding import Reader, Writer
from .errors import ChainExhausted, TransferFailed
from .ledger import (
    Block,
    SensorRecord,
    SystemConfig,
    Transaction,
    TransferRecord,
    TxKind,
    read_config,
    validate_block,
)
from .membership import verify_sensor_update

FRAME_PAYLOAD = "payload"
FRAME_HASH = "hash"
FRAME_SECRET_KEY = "secretKey"
FRAME_ORDER = (FRAME_PAYLOAD, FRAME_HASH, FRAME_SECRET_KEY)


@dataclass(frozen=True)
class BroadcastFrame:
    frame_type: str
    data: bytes
    round_seq: int


@dataclass
class SensorActor:
    """Broadcast-only signer; goes offline when the chain runs out."""

    actor_id: str
    pk: bytes
    state: ChainKeyState
    group_id: str
    period: int = 10
    offline: bool = False

    def broadcast_round(self, reading: bytes) -> list[BroadcastFrame]:
        if self.offline:
            return []
        try:
            sig = ot_sign(self.state, reading)
        except ChainExhausted:
            self.offline = True
            return []
        seq = sig.index_hint
        return [
            BroadcastFrame(FRAME_PAYLOAD, reading, seq),
            BroadcastFrame(FRAME_HASH, sig.sigma1, seq),
            BroadcastFrame(FRAME_SECRET_KEY, sig.sigma2, seq),
        ]


@dataclass(frozen=True)
class ReceiveOutcome:
    sensor_pk: bytes
    accepted: bool
    reason: str
    walk_length: int = 0
    hash_ops: int = 0
    message: bytes = b""
    signature: ChainSignature | None = None


@dataclass
class Observation:
    message: bytes
    time: int
    compromised: bool = False


def responsible_aggregator(sensor_pk: bytes, roster: list[bytes]) -> bytes:
    """Deterministic submitter choice: sensor key hashed over the sorted
    group roster."""
    ordered = sorted(roster)
    index = int.from_bytes(hashlib.sha256(sensor_pk).digest()[:8], "big")
    return ordered[index % len(ordered)]


def encode_verifier_state(sensor_pk: bytes, vstate: VerifierState) -> bytes:
    w = Writer()
    w.blob(sensor_pk).blob(vstate.anchor)
    w.u32(vstate.max_verifications).u32(vstate.lam)
    return w.getvalue()


def decode_verifier_state(data: bytes) -> tuple[bytes, VerifierState]:
    r = Reader(data)
    sensor_pk = r.blob()
    anchor = r.blob()
    maxv, lam = r.u32(), r.u32()
    r.expect_end()
    return sensor_pk, VerifierState(anchor=anchor, max_verifications=maxv,
                                    lam=lam)


class AggregatorActor:
    """Gateway node: verifier, endorser, and ledger replica holder."""

    def __init__(self, actor_id: str, keypair: signatures.KeyPair,
                 box_keypair: signatures.BoxKeyPair, group_id: str,
                 admin_pk: bytes, genesis: Block):
        self.actor_id = actor_id
        self.keypair = keypair
        self.box_keypair = box_keypair
        self.group_id = group_id
        self.admin_pk = admin_pk
        self.ledger: list[Block] = [genesis]
        self.chain_lookup: dict[bytes, VerifierState] = {}  # CL
        self.pset: list[SensorRecord] = []      # cleared, awaiting a batch
        self.txset: list[Transaction] = []      # submitted, awaiting commit
        self.roster: list[bytes] = []           # group AL copy
        self.observations: dict[tuple[bytes, bytes], Observation] = {}
        self.alarm_log: list[dict] = []

    @property
    def public(self) -> bytes:
        return self.keypair.public

    @property
    def config(self) -> SystemConfig:
        return read_config(self.ledger)

    # -- membership hooks (called by the local admin) -------------------

    def install_sensor(self, admin_pk: bytes, sensor_pk: bytes,
                       sig: bytes) -> bool:
        if admin_pk != self.admin_pk:
            return False  # S-3: only this group's admin manages the CL
        if not verify_sensor_update(admin_pk, self.group_id, b"add",
                                    sensor_pk, sig):
            return False
        if sensor_pk not in self.chain_lookup:
            self.chain_lookup[sensor_pk] = VerifierState(
                anchor=sensor_pk,
                max_verifications=self.config.policy.max_verifications,
            )
        return True

    def remove_sensor(self, admin_pk: bytes, sensor_pk: bytes,
                      sig: bytes) -> bool:
        if admin_pk != self.admin_pk:
            return False
        if not verify_sensor_update(admin_pk, self.group_id, b"rm",
                                    sensor_pk, sig):
            return False
        self.chain_lookup.pop(sensor_pk, None)
        return True

    # -- broadcast intake ------------------------------------------------

    def receive_round(self, sensor_pk: bytes,
                      frames: list[BroadcastFrame], now: int = 0
                      ) -> ReceiveOutcome:
        """Reassemble one broadcast round and verify it.

        Loss may drop whole rounds or suffixes; anything short of the
        three expected frames counts as a lost round.
        """
        vstate = self.chain_lookup.get(sensor_pk)
        if vstate is None:
            return ReceiveOutcome(sensor_pk, False, "unknown-sensor")
        by_type = {f.frame_type: f for f in frames}
        if set(by_type) != set(FRAME_ORDER) or len(
                {f.round_seq for f in frames}) != 1:
            return ReceiveOutcome(sensor_pk, False, "incomplete-round")
        message = by_type[FRAME_PAYLOAD].data
        sig = ChainSignature(
            sigma1=by_type[FRAME_HASH].data,
            sigma2=by_type[FRAME_SECRET_KEY].data,
            index_hint=by_type[FRAME_PAYLOAD].round_seq,
        )
        res = ot_verify(vstate, message, sig)
        if not res.accept:
            return ReceiveOutcome(sensor_pk, False, res.reason.value,
                                  hash_ops=res.hash_ops)
        self.chain_lookup[sensor_pk] = res.state
        self.observations[(sensor_pk, sig.sigma2)] = Observation(
            message=message, time=now
        )
        return ReceiveOutcome(sensor_pk, True, "ok",
                              walk_length=res.walk_length,
                              hash_ops=res.hash_ops, message=message,
                              signature=sig)

    # -- conflict agreement (MITM detection) -------------------------------

    def agree_payload(self, sensor_pk: bytes, message: bytes,
                      sig: ChainSignature) -> bytes:
        w = Writer()
        w.blob(sensor_pk).blob(message)
        w.blob(chainwire.encode_signature(sig))
        return w.getvalue()

    def announce(self, sensor_pk: bytes, message: bytes,
                 sig: ChainSignature) -> tuple[bytes, bytes]:
        """Signed (sensor, message, signature) claim sent to the group."""
        payload = self.agree_payload(sensor_pk, message, sig)
        return payload, self.keypair.sign(payload)

    def check_announcement(self, announcer_pk: bytes, payload: bytes,
                           announcer_sig: bytes, now: int
                           ) -> tuple[bool, bytes | None]:
        """Compare a peer's claim against this aggregator's own copy.

        Returns ``(alarm, alarm_sig)``: alarm is raised iff this
        aggregator received a different message under the same chain
        key within the window.
        """
        if announcer_pk not in self.roster:
            return False, None
        if not signatures.verify(announcer_pk, payload, announcer_sig):
            return False, None
        r = Reader(payload)
        sensor_pk = r.blob()
        message = r.blob()
        sig = chainwire.decode_signature(r.blob())
        seen = self.observations.get((sensor_pk, sig.sigma2))
        if seen is None or seen.message == message:
            return False, None
        seen.compromised = True
        self.alarm_log.append({
            "time": now,
            "sensor": sensor_pk.hex(),
            "own_message": seen.message.hex(),
            "conflicting_message": message.hex(),
        })
        alarm_payload = b"alarm:" + payload
        return True, self.keypair.sign(alarm_payload)

    def record_alarm(self, sensor_pk: bytes, sig2: bytes, now: int) -> None:
        """An alarm reply arrived for this aggregator's own announcement."""
        seen = self.observations.get((sensor_pk, sig2))
        if seen is not None and not seen.compromised:
            seen.compromised = True
            self.alarm_log.append({
                "time": now,
                "sensor": sensor_pk.hex(),
                "own_message": seen.message.hex(),
                "conflicting_message": None,
            })

    def clear_round(self, sensor_pk: bytes, message: bytes,
                    sig: ChainSignature) -> bool:
        """End of the alarm window: stage the data unless compromised."""
        seen = self.observations.get((sensor_pk, sig.sigma2))
        if seen is None or seen.compromised:
            return False
        record = SensorRecord(
            sensor_pk=sensor_pk, message=message,
            signature=chainwire.encode_signature(sig),
        )
        self.pset.append(record)
        return True

    def prune_observations(self, now: int, horizon: int) -> None:
        stale = [k for k, obs in self.observations.items()
                 if obs.time + horizon < now]
        for k in stale:
            del self.observations[k]

    # -- transactions ------------------------------------------------------

    def is_responsible_for(self, sensor_pk: bytes) -> bool:
        roster = self.roster or [self.public]
        return responsible_aggregator(sensor_pk, roster) == self.public

    def build_transaction(self, nonce: bytes) -> Transaction | None:
        """Package this aggregator's cleared data (lossless batch)."""
        records = tuple(
            rec for rec in self.pset if self.is_responsible_for(rec.sensor_pk)
        )
        if not records:
            return None
        tx = Transaction(kind=TxKind.DATA, records=records, nonce=nonce,
                         submitter=self.public)
        return tx.with_endorsement(
            self.public, self.keypair.sign(tx.signing_bytes())
        )

    def endorse(self, tx: Transaction) -> tuple[bytes, bytes] | None:
        """Countersign a peer's transaction if it is well-formed."""
        config = self.config
        if tx.submitter not in config.aggregators:
            return None
        payload = tx.signing_bytes()
        self_endorsed = any(
            pk == tx.submitter and signatures.verify(pk, payload, sig)
            for pk, sig in tx.endorsements
        )
        if not self_endorsed:
            return None
        return self.public, self.keypair.sign(payload)

    def update_bc(self, block: Block) -> bool:
        """Append a delivered block iff it validates; idempotent on
        replays of the current tip."""
        if block.digest() == self.ledger[-1].digest():
            return True  # duplicate delivery of the tip
        ok, _ = validate_block(self.ledger, block)
        if not ok:
            return False
        self.ledger.append(block)
        committed = {
            (rec.sensor_pk, rec.signature)
            for tx in block.transactions
            if tx.kind is TxKind.DATA
            for rec in tx.records
        }
        self.pset = [
            rec for rec in self.pset
            if (rec.sensor_pk, rec.signature) not in committed
        ]
        nonces = {tx.nonce for tx in block.transactions}
        self.txset = [tx for tx in self.txset if tx.nonce not in nonces]
        for tx in block.transactions:
            if tx.kind is TxKind.TRANSFER:
                for rec in tx.records:
                    self._apply_transfer(rec)
        return True

    # -- sensor transfer ---------------------------------------------------

    def build_transfer(self, dst_pk: bytes, dst_box_pk: bytes,
                       sensor_pk: bytes, nonce: bytes,
                       ephemeral_seed: bytes | None = None
                       ) -> Transaction:
        """Seal this aggregator's verifier state for ``sensor_pk`` to the
        receiving aggregator's box key and wrap it in a transaction."""
        vstate = self.chain_lookup.get(sensor_pk)
        if vstate is None:
            raise TransferFailed("sensor not in this aggregator's lookup")
        plaintext = encode_verifier_state(sensor_pk, vstate)
        sealed = signatures.seal(dst_box_pk, plaintext, ephemeral_seed)
        record = TransferRecord(
            src_aggregator=self.public, dst_aggregator=dst_pk,
            sensor_pk=sensor_pk, sealed_state=sealed,
        )
        tx = Transaction(kind=TxKind.TRANSFER, records=(record,),
                         nonce=nonce, submitter=self.public)
        return tx.with_endorsement(
            self.public, self.keypair.sign(tx.signing_bytes())
        )

    def _apply_transfer(self, rec: TransferRecord) -> None:
        if rec.dst_aggregator == self.public:
            plaintext = signatures.unseal(self.box_keypair,
                                          rec.sealed_state)
            sensor_pk, vstate = decode_verifier_state(plaintext)
            if sensor_pk != rec.sensor_pk:
                raise TransferFailed("sealed state names a different sensor")
            self.chain_lookup[sensor_pk] = replace(
                vstate,
                max_verifications=self.config.policy.max_verifications,
            )
        elif rec.src_aggregator == self.public:
            self.chain_lookup.pop(rec.sensor_pk, None)
