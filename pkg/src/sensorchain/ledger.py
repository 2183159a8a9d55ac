"""Ledger data structures: transactions, blocks, and configuration.

Blocks come in two kinds.  Transaction blocks carry endorsed batches of
sensor data; configuration blocks carry one whole ``SystemConfig``
snapshot and the highest one on the chain is the configuration in
force.  Block digests cover everything except the signature sets, so a
block is identified by its content and replayed deliveries with a
different signature subset stay idempotent.

Whitelists follow the snapshot model: revocation is omission from the
newest configuration block, there is no separate revocation list.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from . import signatures
from .encoding import Reader, Writer
from .errors import AuthError, ConfigError, DecodeError

ZERO_HASH = bytes(32)

DEFAULT_MAX_BLOCK_TXS = 500  # capacity is policy, sized to ~2 MB blocks

ORDERER_COMMIT_DOMAIN = b"orderer-commit:"


def orderer_commit_bytes(digest: bytes) -> bytes:
    """Bytes an orderer signs to commit a block; the commit votes form
    the block's quorum signature set."""
    return ORDERER_COMMIT_DOMAIN + digest


class BlockType(Enum):
    TRANSACTION = 0
    CONFIGURATION = 1


class TxKind(Enum):
    DATA = 0
    TRANSFER = 1


@dataclass(frozen=True)
class Policy:
    """System policy: endorsement threshold tau, verifier walk bound,
    conflict-alarm window delta (simulated time units), block capacity."""

    tau: int = 1
    max_verifications: int = 10_000
    delta: int = 20
    max_block_txs: int = DEFAULT_MAX_BLOCK_TXS

    def encode(self, w: Writer) -> None:
        w.u32(self.tau).u32(self.max_verifications)
        w.u64(self.delta).u32(self.max_block_txs)

    @classmethod
    def decode(cls, r: Reader) -> "Policy":
        return cls(tau=r.u32(), max_verifications=r.u32(),
                   delta=r.u64(), max_block_txs=r.u32())


@dataclass(frozen=True)
class SystemConfig:
    """Whitelists and policy; ``orderers``/``admins``/``aggregators``
    hold the raw public keys of each participant class."""

    msp_pk: bytes = b""
    orderers: tuple[bytes, ...] = ()
    admins: tuple[bytes, ...] = ()
    aggregators: tuple[bytes, ...] = ()
    policy: Policy = field(default_factory=Policy)
    consensus_algorithm: str = "pbft-3phase"

    def validate(self) -> None:
        for name, keys in (("orderers", self.orderers),
                           ("admins", self.admins),
                           ("aggregators", self.aggregators)):
            if len(set(keys)) != len(keys):
                raise ConfigError(f"duplicate keys in {name} whitelist")
        if self.policy.tau < 1:
            raise ConfigError("tau must be at least 1")
        if self.aggregators and self.policy.tau > len(self.aggregators):
            raise ConfigError(
                f"tau={self.policy.tau} exceeds the {len(self.aggregators)} "
                "whitelisted aggregators"
            )
        if self.policy.max_verifications < 1:
            raise ConfigError("max_verifications must be positive")
        if self.policy.max_block_txs < 1:
            raise ConfigError("max_block_txs must be positive")

    @property
    def f(self) -> int:
        """Byzantine orderers tolerated: largest f with 3f+1 <= |orderers|."""
        return max(0, (len(self.orderers) - 1) // 3)

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def encode(self, w: Writer) -> None:
        w.blob(self.msp_pk)
        w.blob_list(list(self.orderers))
        w.blob_list(list(self.admins))
        w.blob_list(list(self.aggregators))
        self.policy.encode(w)
        w.blob(self.consensus_algorithm.encode())

    def encoded(self) -> bytes:
        w = Writer()
        self.encode(w)
        return w.getvalue()

    @classmethod
    def decode(cls, r: Reader) -> "SystemConfig":
        return cls(
            msp_pk=r.blob(),
            orderers=tuple(r.blob_list()),
            admins=tuple(r.blob_list()),
            aggregators=tuple(r.blob_list()),
            policy=Policy.decode(r),
            consensus_algorithm=r.blob().decode(),
        )


@dataclass(frozen=True)
class SensorRecord:
    """One verified broadcast: (sensor pk, payload, encoded signature)."""

    sensor_pk: bytes
    message: bytes
    signature: bytes  # wire-encoded ChainSignature

    def encode(self, w: Writer) -> None:
        w.blob(self.sensor_pk).blob(self.message).blob(self.signature)

    @classmethod
    def decode(cls, r: Reader) -> "SensorRecord":
        return cls(r.blob(), r.blob(), r.blob())


@dataclass(frozen=True)
class TransferRecord:
    """Verifier state sealed to the receiving aggregator's box key."""

    src_aggregator: bytes
    dst_aggregator: bytes
    sensor_pk: bytes
    sealed_state: bytes

    def encode(self, w: Writer) -> None:
        w.blob(self.src_aggregator).blob(self.dst_aggregator)
        w.blob(self.sensor_pk).blob(self.sealed_state)

    @classmethod
    def decode(cls, r: Reader) -> "TransferRecord":
        return cls(r.blob(), r.blob(), r.blob(), r.blob())


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    records: tuple
    nonce: bytes
    submitter: bytes
    endorsements: tuple[tuple[bytes, bytes], ...] = ()

    def signing_bytes(self) -> bytes:
        """Bytes every endorsement covers: payload plus nonce."""
        w = Writer()
        w.u8(self.kind.value)
        w.u32(len(self.records))
        for rec in self.records:
            rec.encode(w)
        w.blob(self.nonce)
        return w.getvalue()

    def with_endorsement(self, pk: bytes, sig: bytes) -> "Transaction":
        return replace(self, endorsements=self.endorsements + ((pk, sig),))

    def encode(self, w: Writer) -> None:
        w.blob(self.signing_bytes())
        w.blob(self.submitter)
        w.u32(len(self.endorsements))
        for pk, sig in self.endorsements:
            w.blob(pk)
            w.blob(sig)

    @classmethod
    def decode(cls, r: Reader) -> "Transaction":
        body = Reader(r.blob())
        kind = TxKind(body.u8())
        count = body.u32()
        rec_cls = SensorRecord if kind is TxKind.DATA else TransferRecord
        records = tuple(rec_cls.decode(body) for _ in range(count))
        nonce = body.blob()
        body.expect_end()
        submitter = r.blob()
        endorsements = tuple(
            (r.blob(), r.blob()) for _ in range(r.u32())
        )
        return cls(kind, records, nonce, submitter, endorsements)


@dataclass(frozen=True)
class Block:
    height: int
    block_type: BlockType
    prev_hash: bytes
    transactions: tuple[Transaction, ...] = ()
    config: SystemConfig | None = None
    orderer_sigs: tuple[tuple[bytes, bytes], ...] = ()
    msp_sig: bytes = b""

    def digest_bytes(self) -> bytes:
        w = Writer()
        w.u64(self.height).u8(self.block_type.value).raw(self.prev_hash)
        if self.block_type is BlockType.CONFIGURATION:
            self.config.encode(w)
        else:
            w.u32(len(self.transactions))
            for tx in self.transactions:
                tx.encode(w)
        return w.getvalue()

    def digest(self) -> bytes:
        cached = getattr(self, "_digest", None)
        if cached is None:
            cached = hashlib.sha256(self.digest_bytes()).digest()
            object.__setattr__(self, "_digest", cached)
        return cached

    def with_orderer_sig(self, pk: bytes, sig: bytes) -> "Block":
        return replace(self, orderer_sigs=self.orderer_sigs + ((pk, sig),))

    def encode(self) -> bytes:
        w = Writer()
        w.blob(self.digest_bytes())
        w.u32(len(self.orderer_sigs))
        for pk, sig in self.orderer_sigs:
            w.blob(pk)
            w.blob(sig)
        w.blob(self.msp_sig)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        body = Reader(r.blob())
        height = body.u64()
        block_type = BlockType(body.u8())
        prev_hash = body.raw(32)
        transactions: tuple[Transaction, ...] = ()
        config = None
        if block_type is BlockType.CONFIGURATION:
            config = SystemConfig.decode(body)
        else:
            transactions = tuple(
                Transaction.decode(body) for _ in range(body.u32())
            )
        body.expect_end()
        orderer_sigs = tuple((r.blob(), r.blob()) for _ in range(r.u32()))
        msp_sig = r.blob()
        r.expect_end()
        return cls(height, block_type, prev_hash, transactions, config,
                   orderer_sigs, msp_sig)


class Reject(Enum):
    OK = "ok"
    BAD_HEIGHT = "bad-height"
    BAD_PREV_HASH = "bad-prev-hash"
    BAD_QUORUM = "bad-orderer-quorum"
    BAD_MSP_SIG = "bad-msp-signature"
    BAD_CONFIG = "bad-config"
    UNKNOWN_SUBMITTER = "submitter-not-whitelisted"
    INSUFFICIENT_ENDORSEMENTS = "insufficient-endorsements"
    BAD_ENDORSEMENT = "bad-endorsement"
    DUPLICATE_NONCE = "duplicate-nonce"
    TOO_MANY_TXS = "block-over-capacity"


def make_genesis(msp_pk: bytes, initial_config: SystemConfig,
                 consensus_algorithm: str = "pbft-3phase") -> Block:
    """Assemble the height-0 configuration block.

    The genesis pins the MSP key and the consensus algorithm identifier;
    later configuration blocks may rotate whitelists and policy but the
    system bootstraps from exactly this snapshot.
    """
    config = replace(initial_config, msp_pk=msp_pk,
                     consensus_algorithm=consensus_algorithm)
    config.validate()
    return Block(height=0, block_type=BlockType.CONFIGURATION,
                 prev_hash=ZERO_HASH, config=config)


def read_config(chain: list[Block]) -> SystemConfig:
    """Configuration in force: the highest configuration block's snapshot."""
    if not chain:
        raise ConfigError("empty chain")
    for block in reversed(chain):
        if block.block_type is BlockType.CONFIGURATION:
            return block.config
    raise ConfigError("chain has no configuration block")


def apply_config_update(chain: list[Block], new_config: SystemConfig,
                        msp_sig: bytes) -> Block:
    """Append-ready configuration block for an MSP-signed update.

    Policy never applies to MSP transactions: no endorsements and no
    orderer quorum are required on the produced block.
    """
    current = read_config(chain)
    if not signatures.verify(current.msp_pk, new_config.encoded(), msp_sig):
        raise AuthError("configuration update not signed by the MSP")
    new_config.validate()
    tip = chain[-1]
    return Block(
        height=tip.height + 1,
        block_type=BlockType.CONFIGURATION,
        prev_hash=tip.digest(),
        config=new_config,
        msp_sig=msp_sig,
    )


def chain_nonces(chain: list[Block]) -> set[bytes]:
    return {
        tx.nonce
        for block in chain
        for tx in block.transactions
    }


def validate_transaction(tx: Transaction, config: SystemConfig,
                         seen_nonces: set[bytes]) -> Reject:
    if tx.nonce in seen_nonces:
        return Reject.DUPLICATE_NONCE
    if tx.submitter not in config.aggregators:
        return Reject.UNKNOWN_SUBMITTER
    payload = tx.signing_bytes()
    valid_endorsers = set()
    for pk, sig in tx.endorsements:
        if pk not in config.aggregators:
            continue  # stale or revoked endorser: not counted
        if not signatures.verify(pk, payload, sig):
            return Reject.BAD_ENDORSEMENT
        valid_endorsers.add(pk)
    if len(valid_endorsers) < config.policy.tau:
        return Reject.INSUFFICIENT_ENDORSEMENTS
    return Reject.OK


def validate_block(chain: list[Block], block: Block,
                   require_quorum: bool = True) -> tuple[bool, Reject]:
    """True iff ``block`` is a valid next block for ``chain``.

    Checks the hash link, the height, the orderer quorum (or the MSP
    signature for configuration blocks), and every transaction's
    endorsement threshold against the configuration in force.
    ``require_quorum=False`` is the proposal-time check: orderer
    signatures accumulate only through the commit phase.
    """
    tip = chain[-1]
    if block.height != tip.height + 1:
        return False, Reject.BAD_HEIGHT
    if block.prev_hash != tip.digest():
        return False, Reject.BAD_PREV_HASH
    config = read_config(chain)
    digest = block.digest()

    if block.block_type is BlockType.CONFIGURATION:
        if block.config is None:
            return False, Reject.BAD_CONFIG
        try:
            block.config.validate()
        except ConfigError:
            return False, Reject.BAD_CONFIG
        if block.msp_sig and signatures.verify(
            config.msp_pk, block.config.encoded(), block.msp_sig
        ):
            return True, Reject.OK
        if _quorum_ok(block, digest, config):
            return True, Reject.OK
        return False, Reject.BAD_MSP_SIG

    if len(block.transactions) > config.policy.max_block_txs:
        return False, Reject.TOO_MANY_TXS
    if require_quorum and not _quorum_ok(block, digest, config):
        return False, Reject.BAD_QUORUM
    seen = chain_nonces(chain)
    for tx in block.transactions:
        outcome = validate_transaction(tx, config, seen)
        if outcome is not Reject.OK:
            return False, outcome
        seen.add(tx.nonce)
    return True, Reject.OK


def _quorum_ok(block: Block, digest: bytes, config: SystemConfig) -> bool:
    payload = orderer_commit_bytes(digest)
    signers = set()
    for pk, sig in block.orderer_sigs:
        if pk not in config.orderers:
            continue
        if not signatures.verify(pk, payload, sig):
            continue
        signers.add(pk)
    return len(signers) >= config.quorum


def append_block_file(path, block: Block) -> None:
    """Append one length-prefixed block record to ``path``."""
    data = block.encode()
    with open(path, "ab") as fh:
        fh.write(len(data).to_bytes(4, "big"))
        fh.write(data)


def write_chain_file(path, chain: list[Block]) -> None:
    with open(path, "wb") as fh:
        for block in chain:
            data = block.encode()
            fh.write(len(data).to_bytes(4, "big"))
            fh.write(data)


def read_chain_file(path) -> list[Block]:
    chain = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError("truncated block record")
        size = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + size > len(data):
            raise DecodeError("truncated block record")
        chain.append(Block.decode(data[pos:pos + size]))
        pos += size
    return chain


def block_to_json(block: Block) -> dict:
    out = {
        "height": block.height,
        "type": block.block_type.name.lower(),
        "prev_hash": block.prev_hash.hex(),
        "digest": block.digest().hex(),
        "orderer_sigs": [pk.hex() for pk, _ in block.orderer_sigs],
    }
    if block.block_type is BlockType.CONFIGURATION:
        cfg = block.config
        out["config"] = {
            "msp_pk": cfg.msp_pk.hex(),
            "orderers": [k.hex() for k in cfg.orderers],
            "admins": [k.hex() for k in cfg.admins],
            "aggregators": [k.hex() for k in cfg.aggregators],
            "policy": {
                "tau": cfg.policy.tau,
                "max_verifications": cfg.policy.max_verifications,
                "delta": cfg.policy.delta,
                "max_block_txs": cfg.policy.max_block_txs,
            },
            "consensus_algorithm": cfg.consensus_algorithm,
        }
    else:
        out["transactions"] = [
            {
                "kind": tx.kind.name.lower(),
                "nonce": tx.nonce.hex(),
                "submitter": tx.submitter.hex(),
                "endorsers": [pk.hex() for pk, _ in tx.endorsements],
                "records": len(tx.records),
            }
            for tx in block.transactions
        ]
    return out


def dump_chain_json(chain: list[Block]) -> str:
    return json.dumps([block_to_json(b) for b in chain], indent=2,
                      sort_keys=True)
