"""Three-phase authenticated consensus among the orderers.

One orderer per view is the leader; it batches endorsed transactions
into a block and broadcasts a signed proposal.  Every orderer that
finds the proposal well-formed broadcasts a prepare vote, switches to
commit votes once ``2f + 1`` distinct prepares are in, and finalizes
the block locally on ``2f + 1`` distinct commits, at which point
delivery messages fan out to every aggregator and orderer.

Commit votes sign the block digest under a commit domain marker, so the
collected commit set doubles as the block's standalone quorum signature
set (see :func:`sensorchain.ledger.orderer_commit_bytes`).

The published protocol family leaves leader replacement out; a minimal
round-robin rotation on a delivery timeout is added here so liveness
survives a silent leader.  View numbers ride on every message and an
orderer adopts any higher view it sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import signatures
from .encoding import Reader, Writer
from .errors import DecodeError, NotLeader
from .ledger import (
    Block,
    BlockType,
    Reject,
    SystemConfig,
    Transaction,
    chain_nonces,
    orderer_commit_bytes,
    read_config,
    validate_block,
    validate_transaction,
)

WIRE_VERSION = 0x01


class MsgKind(Enum):
    PRE_PREPARE = 0
    PREPARE = 1
    COMMIT = 2
    BLOCK_DELIVER = 3


@dataclass(frozen=True)
class ConsensusMsg:
    kind: MsgKind
    view: int
    height: int
    block_digest: bytes
    sender: bytes
    signature: bytes = b""
    block: Block | None = None  # PRE_PREPARE and BLOCK_DELIVER carry it

    def signing_bytes(self) -> bytes:
        if self.kind is MsgKind.COMMIT:
            # commit votes double as the block's quorum signature set
            return orderer_commit_bytes(self.block_digest)
        w = Writer()
        w.u8(WIRE_VERSION).u8(self.kind.value)
        w.u64(self.view).u64(self.height)
        w.raw(self.block_digest)
        return w.getvalue()

    def encode(self) -> bytes:
        w = Writer()
        w.u8(WIRE_VERSION).u8(self.kind.value)
        w.u64(self.view).u64(self.height)
        w.raw(self.block_digest)
        w.blob(self.sender).blob(self.signature)
        w.blob(self.block.encode() if self.block is not None else b"")
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "ConsensusMsg":
        r = Reader(data)
        if r.u8() != WIRE_VERSION:
            raise DecodeError("unknown consensus wire version")
        kind = MsgKind(r.u8())
        view, height = r.u64(), r.u64()
        digest = r.raw(32)
        sender, signature = r.blob(), r.blob()
        raw_block = r.blob()
        block = Block.decode(raw_block) if raw_block else None
        r.expect_end()
        return cls(kind, view, height, digest, sender, signature, block)


@dataclass
class Proposal:
    block: Block
    prepares: dict[bytes, bytes] = field(default_factory=dict)
    commits: dict[bytes, bytes] = field(default_factory=dict)
    prepared: bool = False
    committed: bool = False


Outbound = list[tuple[str, ConsensusMsg]]  # (destination actor id, message)


class OrdererActor:
    """One consensus participant; single-threaded over the event loop."""

    def __init__(self, actor_id: str, keypair: signatures.KeyPair,
                 genesis: Block):
        self.actor_id = actor_id
        self.keypair = keypair
        self.ledger: list[Block] = [genesis]
        self.txl: set[bytes] = set()        # nonces seen, at most once each
        self.pending: list[Transaction] = []
        self.view = 0
        self.slots: dict[tuple[int, int], Proposal] = {}  # (view, height)
        self.preprepared: dict[tuple[int, int], bytes] = {}
        self.delivered_digests: set[bytes] = set()
        # directory of peers, set by the wiring layer
        self.orderer_ids: dict[bytes, str] = {}
        self.aggregator_ids: list[str] = []

    # -- helpers -----------------------------------------------------

    @property
    def config(self) -> SystemConfig:
        return read_config(self.ledger)

    @property
    def height(self) -> int:
        return self.ledger[-1].height + 1  # next height to fill

    def leader_pk(self, view: int | None = None) -> bytes:
        orderers = self.config.orderers
        v = self.view if view is None else view
        return orderers[v % len(orderers)]

    def is_leader(self) -> bool:
        return self.leader_pk() == self.keypair.public

    def _signed(self, kind: MsgKind, height: int, digest: bytes,
                block: Block | None = None) -> ConsensusMsg:
        msg = ConsensusMsg(kind, self.view, height, digest,
                           self.keypair.public, b"", block)
        sig = self.keypair.sign(msg.signing_bytes())
        return ConsensusMsg(kind, self.view, height, digest,
                            self.keypair.public, sig, block)

    def _broadcast_orderers(self, msg: ConsensusMsg) -> Outbound:
        return [
            (oid, msg) for pk, oid in self.orderer_ids.items()
            if pk != self.keypair.public
        ]

    # -- transaction intake ------------------------------------------

    def submit_tx(self, tx: Transaction) -> tuple[bool, bytes | None]:
        """Aggregator-facing intake; validates before queueing.

        Returns ``(accepted, relay_to)`` where ``relay_to`` names the
        current leader when this orderer is a backup, so the wiring
        layer can forward the transaction.
        """
        if tx.nonce in self.txl:
            return False, None
        outcome = validate_transaction(tx, self.config,
                                       chain_nonces(self.ledger))
        if outcome is not Reject.OK:
            return False, None
        self.txl.add(tx.nonce)
        self.pending.append(tx)
        relay = None if self.is_leader() else self.leader_pk()
        return True, relay

    # -- proposal ------------------------------------------------------

    def maybe_propose(self) -> Outbound:
        """Propose when leader with pending work and a free slot."""
        if not self.is_leader() or not self.pending:
            return []
        if (self.view, self.height) in self.slots:
            return []
        _, out = self.propose_block()
        return out

    def propose_block(self, txs: list[Transaction] | None = None
                      ) -> tuple[ConsensusMsg | None, Outbound]:
        """Leader-only: batch endorsement-valid transactions into a
        proposal, filtering duplicates against the chain and TXL."""
        if not self.is_leader():
            raise NotLeader(f"{self.actor_id} is not the view-{self.view} "
                            "leader")
        config = self.config
        seen = chain_nonces(self.ledger)
        batch = []
        for tx in (txs if txs is not None else self.pending):
            if validate_transaction(tx, config, seen) is Reject.OK:
                seen.add(tx.nonce)
                batch.append(tx)
            if len(batch) >= config.policy.max_block_txs:
                break
        if not batch or (self.view, self.height) in self.slots:
            return None, []
        tip = self.ledger[-1]
        block = Block(
            height=tip.height + 1,
            block_type=BlockType.TRANSACTION,
            prev_hash=tip.digest(),
            transactions=tuple(batch),
        )
        return self._propose(block)

    def propose_config_block(self, block: Block
                             ) -> tuple[ConsensusMsg | None, Outbound]:
        """Route an MSP-signed configuration block through consensus."""
        if not self.is_leader():
            raise NotLeader(f"{self.actor_id} is not the view-{self.view} "
                            "leader")
        if (self.view, self.height) in self.slots:
            return None, []
        return self._propose(block)

    def _propose(self, block: Block) -> tuple[ConsensusMsg, Outbound]:
        msg = self._signed(MsgKind.PRE_PREPARE, block.height,
                           block.digest(), block)
        out = self._broadcast_orderers(msg)
        # the leader processes its own proposal like any other orderer
        _, own = self.handle_msg(msg)
        return msg, out + own

    # -- message handling ----------------------------------------------

    def handle_msg(self, msg: ConsensusMsg) -> tuple[bool, Outbound]:
        """Verify and apply one consensus message.

        Returns ``(progressed, outbound)``.  Signature or whitelist
        failures drop the message silently.
        """
        config = self.config
        if msg.sender not in config.orderers:
            return False, []
        if not signatures.verify(msg.sender, msg.signing_bytes(),
                                 msg.signature):
            return False, []
        if msg.view > self.view:
            self.view = msg.view  # adopt newer views
        handler = {
            MsgKind.PRE_PREPARE: self._on_preprepare,
            MsgKind.PREPARE: self._on_prepare,
            MsgKind.COMMIT: self._on_commit,
            MsgKind.BLOCK_DELIVER: self._on_deliver,
        }[msg.kind]
        return handler(msg, config)

    def _on_preprepare(self, msg: ConsensusMsg, config: SystemConfig
                       ) -> tuple[bool, Outbound]:
        if msg.block is None:
            return False, []
        if msg.sender != self.leader_pk(msg.view):
            return False, []
        key = (msg.view, msg.height)
        if key in self.preprepared:
            # at most one proposal per (view, height); later conflicting
            # ones from an equivocating leader are ignored
            return False, []
        if msg.height != self.height:
            return False, []
        ok, _ = validate_block(self.ledger, msg.block, require_quorum=False)
        if not ok:
            # honest orderers withhold their prepare for malformed blocks
            return False, []
        self.preprepared[key] = msg.block_digest
        self.slots[key] = Proposal(block=msg.block)
        prepare = self._signed(MsgKind.PREPARE, msg.height, msg.block_digest)
        out = self._broadcast_orderers(prepare)
        _, own = self._on_prepare(prepare, config)
        return True, out + own

    def _on_prepare(self, msg: ConsensusMsg, config: SystemConfig
                    ) -> tuple[bool, Outbound]:
        key = (msg.view, msg.height)
        slot = self.slots.get(key)
        if slot is None or slot.block.digest() != msg.block_digest:
            return False, []
        slot.prepares[msg.sender] = msg.signature
        if slot.prepared or len(slot.prepares) < config.quorum:
            return False, []
        slot.prepared = True
        commit = self._signed(MsgKind.COMMIT, msg.height, msg.block_digest)
        out = self._broadcast_orderers(commit)
        _, own = self._on_commit(commit, config)
        return True, out + own

    def _on_commit(self, msg: ConsensusMsg, config: SystemConfig
                   ) -> tuple[bool, Outbound]:
        key = (msg.view, msg.height)
        slot = self.slots.get(key)
        if slot is None or slot.block.digest() != msg.block_digest:
            return False, []
        slot.commits[msg.sender] = msg.signature
        if slot.committed or len(slot.commits) < config.quorum:
            return False, []
        slot.committed = True
        block = slot.block
        for pk, sig in sorted(slot.commits.items()):
            block = block.with_orderer_sig(pk, sig)
        return True, self._append_and_deliver(block)

    def _append_and_deliver(self, block: Block) -> Outbound:
        if block.digest() in self.delivered_digests:
            return []
        self.delivered_digests.add(block.digest())
        self._append(block)
        deliver = self._signed(MsgKind.BLOCK_DELIVER, block.height,
                               block.digest(), block)
        out: Outbound = [(aid, deliver) for aid in self.aggregator_ids]
        out += self._broadcast_orderers(deliver)
        return out

    def _append(self, block: Block) -> None:
        self.ledger.append(block)
        for tx in block.transactions:
            self.txl.add(tx.nonce)
            if tx in self.pending:
                self.pending.remove(tx)

    def _on_deliver(self, msg: ConsensusMsg, config: SystemConfig
                    ) -> tuple[bool, Outbound]:
        if msg.block is None or msg.block.height != self.height:
            return False, []
        ok, _ = validate_block(self.ledger, msg.block)
        if not ok:
            return False, []
        self.delivered_digests.add(msg.block.digest())
        self._append(msg.block)
        return True, []

    # -- view change ---------------------------------------------------

    def on_timeout(self) -> tuple[bool, Outbound]:
        """Rotate the leader when progress stalls with work pending.

        Returns ``(rotated, outbound)``.  The wiring layer re-arms the
        timer while transactions are pending.
        """
        if not self.pending:
            return False, []
        self.view += 1
        if self.is_leader():
            return True, self.maybe_propose()
        return True, []
