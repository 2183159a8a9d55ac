"""Scenario construction and execution on the simulator.

A scenario file (TOML) declares topology counts, policy, network
faults, byzantine orderers, and scripted membership events; building it
yields one actor per participant wired over the simulated network.  The
data plane (broadcasts, conflict agreement, endorsement, consensus,
block delivery) rides the faulty links; membership protocols between an
admin and its own group run over the management plane, modeled as
direct calls inside one event.

``run_scenario(config, seed)`` executes to quiescence and emits
``trace.csv``, ``chain.bin``, ``events.jsonl``, and ``report.json``
under the run directory; the trace hash is a pure function of
``(config, seed)``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import signatures
from .chainsig import ChainSignature
from .consensus import ConsensusMsg, MsgKind, OrdererActor
from .devicegroup import (
    FRAME_HASH,
    FRAME_PAYLOAD,
    FRAME_SECRET_KEY,
    AggregatorActor,
    BroadcastFrame,
    SensorActor,
)
from .errors import ConfigError, NotLeader
from .ledger import (
    Block,
    Policy,
    SystemConfig,
    Transaction,
    TxKind,
    apply_config_update,
    make_genesis,
    read_config,
    validate_block,
    write_chain_file,
)
from .membership import LocalAdminState, MspState, OperatorOracle
from .metrics import MetricsLog
from .simnet import Actor, FaultPlan, LinkSpec, NetMessage, Simulator

KNOWN_EVENT_ACTIONS = (
    "revoke_sensor", "revoke_aggregator", "transfer_sensor",
    "msp_offline", "msp_online", "config_publish", "join_sensor",
)


@dataclass
class TamperRule:
    link: tuple[str, str]
    payload_prefix: bytes = b"forged:"
    start: int = 0
    end: int | None = None


@dataclass
class ScenarioConfig:
    seed: int = 7
    horizon_rounds: int = 100
    round_length: int = 10
    groups: int = 1
    sensors_per_group: int = 2
    aggregators_per_group: int = 2
    orderers: int = 4
    chain_length: int = 256
    broadcast_period: int = 10
    lam: int = 256
    policy: Policy = field(default_factory=Policy)
    delta: int | None = None          # None: 2x max one-way latency
    latency: tuple[int, int] = (1, 2)
    loss: float = 0.0
    outages: list[dict] = field(default_factory=list)
    tampers: list[TamperRule] = field(default_factory=list)
    byzantine: int = 0
    byzantine_mode: str = "silent"
    consensus_timeout: int = 30
    drain_rounds: int = 10
    events: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name in ("horizon_rounds", "round_length", "groups",
                     "sensors_per_group", "aggregators_per_group",
                     "orderers", "chain_length", "broadcast_period",
                     "consensus_timeout"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.lam not in (64, 128, 256):
            raise ConfigError(f"unsupported lambda {self.lam}")
        if not 0.0 <= self.loss < 1.0:
            raise ConfigError("loss must be a probability below 1")
        if self.latency[0] < 1 or self.latency[1] < self.latency[0]:
            raise ConfigError("latency range must be [lo, hi] with lo >= 1")
        if self.byzantine_mode not in ("silent", "equivocate"):
            raise ConfigError(
                f"unknown byzantine mode {self.byzantine_mode!r}"
            )
        if 3 * self.byzantine + 1 > self.orderers:
            raise ConfigError(
                f"{self.byzantine} byzantine orderers exceed the "
                f"f-bound for {self.orderers} orderers"
            )
        if self.policy.tau > self.groups * self.aggregators_per_group:
            raise ConfigError("tau exceeds the aggregator population")
        for ev in self.events:
            if ev.get("action") not in KNOWN_EVENT_ACTIONS:
                raise ConfigError(f"unknown event action {ev.get('action')}")
            if not isinstance(ev.get("time"), int) or ev["time"] < 0:
                raise ConfigError("event time must be a non-negative int")

    @property
    def horizon(self) -> int:
        return self.horizon_rounds * self.round_length

    @property
    def effective_delta(self) -> int:
        return self.delta if self.delta is not None else 2 * self.latency[1]

    def canonical_json(self) -> str:
        def default(o):
            if isinstance(o, bytes):
                return o.hex()
            if isinstance(o, (Policy, TamperRule)):
                return o.__dict__
            if isinstance(o, tuple):
                return list(o)
            raise TypeError(type(o))
        return json.dumps(self.__dict__, sort_keys=True, default=default)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a TOML scenario file."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"not valid TOML: {exc}") from exc
    cfg = ScenarioConfig()
    scen = raw.get("scenario", {})
    cfg.seed = scen.get("seed", cfg.seed)
    cfg.horizon_rounds = scen.get("rounds", cfg.horizon_rounds)
    cfg.round_length = scen.get("round_length", cfg.round_length)
    topo = raw.get("topology", {})
    cfg.groups = topo.get("groups", cfg.groups)
    cfg.sensors_per_group = topo.get("sensors_per_group",
                                     cfg.sensors_per_group)
    cfg.aggregators_per_group = topo.get("aggregators_per_group",
                                         cfg.aggregators_per_group)
    cfg.orderers = topo.get("orderers", cfg.orderers)
    cfg.chain_length = topo.get("chain_length", cfg.chain_length)
    cfg.broadcast_period = topo.get("broadcast_period",
                                    cfg.broadcast_period)
    cfg.lam = topo.get("lambda", cfg.lam)
    pol = raw.get("policy", {})
    cfg.policy = Policy(
        tau=pol.get("tau", 1),
        max_verifications=pol.get("max_verifications", 10_000),
        delta=pol.get("delta", 0) or 0,
        max_block_txs=pol.get("max_block_txs", 500),
    )
    cfg.delta = pol.get("delta")
    net = raw.get("network", {})
    lat = net.get("latency", list(cfg.latency))
    if not (isinstance(lat, list) and len(lat) == 2):
        raise ConfigError("network.latency must be [lo, hi]")
    cfg.latency = (int(lat[0]), int(lat[1]))
    cfg.loss = float(net.get("loss", 0.0))
    cfg.outages = list(net.get("outages", []))
    cfg.tampers = [
        TamperRule(
            link=(t["link"][0], t["link"][1]),
            payload_prefix=t.get("payload_prefix", "forged:").encode(),
            start=t.get("start", 0),
            end=t.get("end"),
        )
        for t in net.get("tamper", [])
    ]
    cons = raw.get("consensus", {})
    cfg.byzantine = cons.get("byzantine", 0)
    cfg.byzantine_mode = cons.get("byzantine_mode", "silent")
    cfg.consensus_timeout = cons.get("timeout", cfg.consensus_timeout)
    cfg.events = list(raw.get("events", []))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# node adapters


class SensorNode(Actor):
    def __init__(self, sensor: SensorActor, aggr_ids: list[str],
                 run: "RunState"):
        self.actor_id = sensor.actor_id
        self.sensor = sensor
        self.aggr_ids = aggr_ids
        self.run = run

    def start(self, sim: Simulator) -> None:
        sim.schedule_timer(self.actor_id, self.sensor.period, "broadcast")

    def on_timer(self, sim: Simulator, tag: str, data: Any) -> None:
        if tag != "broadcast" or self.sensor.offline:
            return
        reading = b"%s:r%d" % (self.actor_id.encode(),
                               self.sensor.state.ctr + 1)
        frames = self.sensor.broadcast_round(reading)
        if not frames:
            sim.metrics.record(sim.now, self.actor_id, "sensor-offline",
                               outcome="rejoin-required")
            sim.metrics.log_event(sim.now, "sensor-exhausted",
                                  actor=self.actor_id)
            return
        self.run.broadcasts.append(
            (self.sensor.pk, reading, sim.now)
        )
        sim.metrics.record(
            sim.now, self.actor_id, "broadcast",
            hash_ops=self.sensor.state.last_sign_traversal_ops + 2,
        )
        for aggr_id in self.aggr_ids:
            sim.send(self.actor_id, aggr_id, "frames",
                     (self.sensor.pk, list(frames)))
        if sim.now + self.sensor.period <= self.run.horizon:
            sim.schedule_timer(self.actor_id, self.sensor.period,
                               "broadcast")


class AggregatorNode(Actor):
    def __init__(self, actor: AggregatorActor, run: "RunState"):
        self.actor_id = actor.actor_id
        self.actor = actor
        self.run = run
        self.peer_ids: list[str] = []       # same-group aggregators
        self.pl_ids: dict[bytes, str] = {}  # all aggregators, pk -> id
        self.orderer_ids: list[str] = []
        self.collecting: dict[bytes, dict] = {}    # nonce -> state
        self.submitted: dict[bytes, dict] = {}     # nonce -> state
        self.pending_blocks: dict[int, ConsensusMsg] = {}
        self._submit_rr = 0

    def start(self, sim: Simulator) -> None:
        sim.schedule_timer(self.actor_id, self.run.config.broadcast_period,
                           "batch")

    # -- message handling ---------------------------------------------

    def handle(self, sim: Simulator, msg: NetMessage) -> None:
        handler = {
            "frames": self._on_frames,
            "agree-announce": self._on_announce,
            "agree-alarm": self._on_alarm,
            "endorse-request": self._on_endorse_request,
            "endorse-reply": self._on_endorse_reply,
            "block-deliver": self._on_deliver,
        }.get(msg.kind)
        if handler is not None:
            handler(sim, msg)

    def _on_frames(self, sim: Simulator, msg: NetMessage) -> None:
        sensor_pk, frames = msg.payload
        out = self.actor.receive_round(sensor_pk, frames, now=sim.now)
        sim.metrics.record(sim.now, self.actor_id, "receive",
                           hash_ops=out.hash_ops,
                           walk_length=out.walk_length,
                           outcome="ok" if out.accepted else out.reason)
        if out.reason == "AnchorNotReached":
            sim.metrics.log_event(sim.now, "rejoin-flag",
                                  actor=self.actor_id,
                                  sensor=sensor_pk.hex())
        if not out.accepted:
            return
        payload, sig = self.actor.announce(sensor_pk, out.message,
                                           out.signature)
        for peer in self.peer_ids:
            sim.send(self.actor_id, peer, "agree-announce",
                     (self.actor.public, payload, sig))
        sim.schedule_timer(self.actor_id, self.run.delta, "agree-close",
                           (sensor_pk, out.message, out.signature))

    def _on_announce(self, sim: Simulator, msg: NetMessage) -> None:
        announcer_pk, payload, sig = msg.payload
        alarm, _alarm_sig = self.actor.check_announcement(
            announcer_pk, payload, sig, now=sim.now
        )
        if alarm:
            sim.metrics.record(sim.now, self.actor_id, "alarm",
                               outcome="conflict")
            sim.metrics.log_event(sim.now, "mitm-alarm",
                                  actor=self.actor_id,
                                  entry=self.actor.alarm_log[-1])
            # tell the announcer its copy is disputed
            from .encoding import Reader
            r = Reader(payload)
            sensor_pk = r.blob()
            r.blob()
            from . import chainwire
            sig2 = chainwire.decode_signature(r.blob()).sigma2
            announcer_id = self.pl_ids.get(announcer_pk)
            if announcer_id is not None:
                sim.send(self.actor_id, announcer_id, "agree-alarm",
                         (sensor_pk, sig2))

    def _on_alarm(self, sim: Simulator, msg: NetMessage) -> None:
        sensor_pk, sig2 = msg.payload
        self.actor.record_alarm(sensor_pk, sig2, now=sim.now)
        sim.metrics.record(sim.now, self.actor_id, "alarm",
                           outcome="reported")
        sim.metrics.log_event(sim.now, "mitm-alarm", actor=self.actor_id,
                              sensor=sensor_pk.hex())

    def _on_endorse_request(self, sim: Simulator, msg: NetMessage) -> None:
        tx: Transaction = msg.payload
        endorsement = self.actor.endorse(tx)
        if endorsement is None:
            return
        submitter_id = self.pl_ids.get(tx.submitter)
        if submitter_id is not None:
            sim.send(self.actor_id, submitter_id, "endorse-reply",
                     (tx.nonce, endorsement[0], endorsement[1]))

    def _on_endorse_reply(self, sim: Simulator, msg: NetMessage) -> None:
        nonce, pk, sig = msg.payload
        state = self.collecting.get(nonce)
        if state is None:
            return
        state["endorsements"][pk] = sig
        tau = read_config(self.actor.ledger).policy.tau
        if len(state["endorsements"]) >= tau:
            tx = state["tx"]
            for epk, esig in sorted(state["endorsements"].items()):
                if epk != tx.submitter:
                    tx = tx.with_endorsement(epk, esig)
            del self.collecting[nonce]
            self._submit(sim, tx)

    def _submit(self, sim: Simulator, tx: Transaction) -> None:
        self.actor.txset.append(tx)
        self.submitted[tx.nonce] = {"tx": tx, "time": sim.now}
        target = self.orderer_ids[self._submit_rr % len(self.orderer_ids)]
        self._submit_rr += 1
        sim.send(self.actor_id, target, "submit-tx", tx)
        sim.metrics.record(sim.now, self.actor_id, "submit",
                           outcome=tx.kind.name.lower())

    def submit_transfer(self, sim: Simulator, tx: Transaction) -> None:
        """Entry point for scripted sensor transfers."""
        tau = read_config(self.actor.ledger).policy.tau
        if len(tx.endorsements) >= tau:
            self._submit(sim, tx)
            return
        self.collecting[tx.nonce] = {
            "tx": tx,
            "endorsements": {tx.submitter: tx.endorsements[0][1]},
            "records": [],
            "deadline": sim.now + 2 * self.run.config.broadcast_period,
        }
        for pk, aid in self.pl_ids.items():
            if pk != self.actor.public:
                sim.send(self.actor_id, aid, "endorse-request", tx)

    def _on_deliver(self, sim: Simulator, msg: NetMessage) -> None:
        cmsg: ConsensusMsg = msg.payload
        if cmsg.kind is not MsgKind.BLOCK_DELIVER or cmsg.block is None:
            return
        self.pending_blocks[cmsg.block.height] = cmsg
        self._drain_deliveries(sim)

    def _drain_deliveries(self, sim: Simulator) -> None:
        while True:
            next_height = self.actor.ledger[-1].height + 1
            cmsg = self.pending_blocks.get(next_height)
            stale = [h for h in self.pending_blocks if h < next_height]
            for h in stale:
                del self.pending_blocks[h]
            if cmsg is None:
                return
            del self.pending_blocks[next_height]
            ok = self.actor.update_bc(cmsg.block)
            sim.metrics.record(sim.now, self.actor_id, "commit",
                               outcome="ok" if ok else "rejected")
            if ok:
                self.run.note_commit(cmsg.block)
            if not ok:
                return

    # -- timers ----------------------------------------------------------

    def on_timer(self, sim: Simulator, tag: str, data: Any) -> None:
        if tag == "agree-close":
            sensor_pk, message, sig = data
            cleared = self.actor.clear_round(sensor_pk, message, sig)
            sim.metrics.record(
                sim.now, self.actor_id, "agree",
                outcome="cleared" if cleared else "discarded",
            )
            return
        if tag == "batch":
            self._expire_collections(sim)
            self._retry_submissions(sim)
            self._build_batch(sim)
            self.actor.prune_observations(
                sim.now, 4 * self.run.delta + 4 * self.run.config.broadcast_period
            )
            if sim.now + self.run.config.broadcast_period <= \
                    self.run.drain_until:
                sim.schedule_timer(self.actor_id,
                                   self.run.config.broadcast_period, "batch")

    def _build_batch(self, sim: Simulator) -> None:
        rng = sim.rng(f"nonce:{self.actor_id}")
        nonce = rng.randbytes(self.run.config.lam // 8)
        tx = self.actor.build_transaction(nonce)
        if tx is None:
            return
        tau = read_config(self.actor.ledger).policy.tau
        if len(tx.endorsements) >= tau:
            self._submit(sim, tx)
            return
        self.collecting[nonce] = {
            "tx": tx,
            "endorsements": {self.actor.public: tx.endorsements[0][1]},
            "records": list(tx.records),
            "deadline": sim.now + 2 * self.run.config.broadcast_period,
        }
        for pk, aid in self.pl_ids.items():
            if pk != self.actor.public:
                sim.send(self.actor_id, aid, "endorse-request", tx)

    def _expire_collections(self, sim: Simulator) -> None:
        for nonce in list(self.collecting):
            state = self.collecting[nonce]
            if sim.now < state["deadline"]:
                continue
            del self.collecting[nonce]
            sim.metrics.record(sim.now, self.actor_id, "tx-stalled",
                               outcome="insufficient-endorsements")
            # data returns to the pending set for the next batch
            self.actor.pset.extend(state["records"])

    def _retry_submissions(self, sim: Simulator) -> None:
        committed = {
            tx.nonce for b in self.actor.ledger for tx in b.transactions
        }
        timeout = 4 * self.run.config.broadcast_period
        for nonce in list(self.submitted):
            state = self.submitted[nonce]
            if nonce in committed:
                del self.submitted[nonce]
                continue
            if sim.now - state["time"] >= timeout:
                del self.submitted[nonce]
                tx = state["tx"]
                self.actor.txset = [
                    t for t in self.actor.txset if t.nonce != nonce
                ]
                if tx.kind is TxKind.DATA:
                    self.actor.pset.extend(tx.records)
                sim.metrics.record(sim.now, self.actor_id, "tx-stalled",
                                   outcome="no-commit")


class OrdererNode(Actor):
    def __init__(self, actor: OrdererActor, run: "RunState",
                 byz_mode: str | None = None):
        self.actor_id = actor.actor_id
        self.actor = actor
        self.run = run
        self.byz_mode = byz_mode
        self.node_ids: dict[bytes, str] = {}

    def handle(self, sim: Simulator, msg: NetMessage) -> None:
        if self.byz_mode == "silent":
            return
        if msg.kind in ("submit-tx", "relay-tx"):
            self._on_tx(sim, msg.payload)
        elif msg.kind == "consensus":
            self._on_consensus(sim, msg.payload)
        elif msg.kind == "config-update":
            self._on_config_update(sim, msg.payload)

    def _dispatch(self, sim: Simulator, outbound) -> None:
        for dest, cmsg in outbound:
            kind = ("block-deliver"
                    if cmsg.kind is MsgKind.BLOCK_DELIVER
                    and dest not in self.actor.orderer_ids.values()
                    else "consensus")
            sim.send(self.actor_id, dest, kind, cmsg)

    def _arm_timeout(self, sim: Simulator) -> None:
        if self.actor.pending and sim.now < self.run.drain_until:
            sim.schedule_timer(self.actor_id,
                               self.run.config.consensus_timeout,
                               "consensus-timeout", self.actor.height)

    def _on_tx(self, sim: Simulator, tx: Transaction) -> None:
        accepted, relay = self.actor.submit_tx(tx)
        if not accepted:
            sim.metrics.record(sim.now, self.actor_id, "tx-intake",
                               outcome="rejected")
            return
        sim.metrics.record(sim.now, self.actor_id, "tx-intake",
                           outcome="queued")
        if relay is not None:
            leader_id = self.node_ids.get(relay)
            if leader_id is not None:
                sim.send(self.actor_id, leader_id, "relay-tx", tx)
        self._propose(sim)
        self._arm_timeout(sim)

    def _propose(self, sim: Simulator) -> None:
        if self.byz_mode == "equivocate" and self.actor.is_leader():
            self._equivocate(sim)
            return
        self._dispatch(sim, self.actor.maybe_propose())

    def _equivocate(self, sim: Simulator) -> None:
        """Send conflicting proposals to disjoint halves of the peers
        and vote for both digests."""
        import dataclasses

        from .ledger import BlockType
        actor = self.actor
        if not actor.pending or (actor.view, actor.height) in actor.slots:
            return
        tip = actor.ledger[-1]
        batch = tuple(actor.pending)
        block_a = Block(height=tip.height + 1,
                        block_type=BlockType.TRANSACTION,
                        prev_hash=tip.digest(), transactions=batch)
        alt = tuple(reversed(batch)) if len(batch) > 1 else ()
        block_b = Block(height=tip.height + 1,
                        block_type=BlockType.TRANSACTION,
                        prev_hash=tip.digest(),
                        transactions=alt) if alt else None
        actor.slots[(actor.view, actor.height)] = None  # poison own slot

        def signed(kind, block, digest):
            msg = ConsensusMsg(kind, actor.view, block.height
                               if block else tip.height + 1, digest,
                               actor.keypair.public, b"", block)
            return dataclasses.replace(
                msg, signature=actor.keypair.sign(msg.signing_bytes())
            )

        peers = [oid for pk, oid in sorted(actor.orderer_ids.items())
                 if pk != actor.keypair.public]
        half = len(peers) // 2
        for dest in peers[:half] if block_b else peers:
            sim.send(self.actor_id, dest, "consensus",
                     signed(MsgKind.PRE_PREPARE, block_a, block_a.digest()))
        if block_b:
            for dest in peers[half:]:
                sim.send(self.actor_id, dest, "consensus",
                         signed(MsgKind.PRE_PREPARE, block_b,
                                block_b.digest()))
        for block in (block_a, block_b):
            if block is None:
                continue
            for kind in (MsgKind.PREPARE, MsgKind.COMMIT):
                vote = signed(kind, None, block.digest())
                for dest in peers:
                    sim.send(self.actor_id, dest, "consensus", vote)

    def _on_consensus(self, sim: Simulator, cmsg: ConsensusMsg) -> None:
        if self.byz_mode == "equivocate" and \
                cmsg.kind is MsgKind.PRE_PREPARE:
            # byzantine orderers never help someone else's proposal
            return
        progressed, outbound = self.actor.handle_msg(cmsg)
        self._dispatch(sim, outbound)
        if progressed and cmsg.kind is MsgKind.COMMIT:
            sim.metrics.record(sim.now, self.actor_id, "consensus-commit",
                               outcome=f"height-{cmsg.height}")
        self._propose(sim)
        self._arm_timeout(sim)

    def _on_config_update(self, sim: Simulator, payload) -> None:
        new_config, msp_sig = payload
        if not self.actor.is_leader():
            leader_id = self.node_ids.get(self.actor.leader_pk())
            if leader_id is not None:
                sim.send(self.actor_id, leader_id, "config-update", payload)
            return
        try:
            block = apply_config_update(self.actor.ledger, new_config,
                                        msp_sig)
        except Exception:
            sim.metrics.record(sim.now, self.actor_id, "config-update",
                               outcome="rejected")
            return
        try:
            _, outbound = self.actor.propose_config_block(block)
        except NotLeader:
            return
        sim.metrics.record(sim.now, self.actor_id, "config-update",
                           outcome="proposed")
        self._dispatch(sim, outbound)

    def on_timer(self, sim: Simulator, tag: str, data: Any) -> None:
        if self.byz_mode == "silent" or tag != "consensus-timeout":
            return
        if not self.actor.pending or self.actor.height != data:
            return  # progressed since the timer was armed
        rotated, outbound = self.actor.on_timeout()
        if rotated:
            sim.metrics.record(sim.now, self.actor_id, "view-change",
                               outcome=f"view-{self.actor.view}")
        self._dispatch(sim, outbound)
        self._propose(sim)
        self._arm_timeout(sim)


class LedgerFollower(Actor):
    """MSP and admin nodes keep a replica via block deliveries."""

    def __init__(self, actor_id: str, genesis: Block):
        self.actor_id = actor_id
        self.ledger = [genesis]
        self.pending_blocks: dict[int, Block] = {}

    def handle(self, sim: Simulator, msg: NetMessage) -> None:
        if msg.kind != "block-deliver":
            return
        cmsg: ConsensusMsg = msg.payload
        if cmsg.block is None:
            return
        self.pending_blocks[cmsg.block.height] = cmsg.block
        while True:
            block = self.pending_blocks.pop(
                self.ledger[-1].height + 1, None
            )
            if block is None:
                break
            ok, _ = validate_block(self.ledger, block)
            if not ok:
                break
            self.ledger.append(block)


class MspNode(LedgerFollower):
    def __init__(self, actor_id: str, msp: MspState, genesis: Block):
        super().__init__(actor_id, genesis)
        self.msp = msp

    def publish_config(self, sim: Simulator, orderer_ids: list[str]) -> None:
        config, sig = self.msp.build_config_update(self.ledger)
        sim.metrics.log_event(sim.now, "config-update",
                              actor=self.actor_id)
        sim.send(self.actor_id, orderer_ids[0], "config-update",
                 (config, sig))


class AdminNode(LedgerFollower):
    def __init__(self, actor_id: str, admin: LocalAdminState,
                 genesis: Block):
        super().__init__(actor_id, genesis)
        self.admin = admin


# ---------------------------------------------------------------------------
# system assembly


@dataclass
class RunState:
    config: ScenarioConfig
    horizon: int
    drain_until: int
    delta: int
    broadcasts: list[tuple[bytes, bytes, int]] = field(default_factory=list)
    committed: dict[tuple[bytes, bytes], int] = field(default_factory=dict)
    commit_heights: dict[int, int] = field(default_factory=dict)

    def note_commit(self, block: Block) -> None:
        if block.height not in self.commit_heights:
            self.commit_heights[block.height] = 0
        for tx in block.transactions:
            if tx.kind is not TxKind.DATA:
                continue
            for rec in tx.records:
                key = (rec.sensor_pk, rec.message)
                self.committed.setdefault(key, 0)


@dataclass
class BuiltSystem:
    sim: Simulator
    run: RunState
    msp_node: MspNode
    admin_nodes: list[AdminNode]
    sensor_nodes: list[SensorNode]
    aggregator_nodes: list[AggregatorNode]
    orderer_nodes: list[OrdererNode]
    genesis: Block

    def honest_orderers(self) -> list[OrdererNode]:
        return [n for n in self.orderer_nodes if n.byz_mode is None]

    def honest_ledgers(self) -> list[list[Block]]:
        chains = [n.actor.ledger for n in self.honest_orderers()]
        chains += [n.actor.ledger for n in self.aggregator_nodes]
        return chains


def _derive_seed(sim_seed: int, name: str) -> bytes:
    return hashlib.sha256(f"{sim_seed}:key:{name}".encode()).digest()


def build_system(cfg: ScenarioConfig, seed: int | None = None
                 ) -> BuiltSystem:
    cfg.validate()
    sim_seed = cfg.seed if seed is None else seed
    metrics = MetricsLog()
    run = RunState(
        config=cfg,
        horizon=cfg.horizon_rounds * cfg.round_length,
        drain_until=(cfg.horizon_rounds + cfg.drain_rounds)
        * cfg.round_length,
        delta=cfg.effective_delta,
    )

    oracle = OperatorOracle(secret=_derive_seed(sim_seed, "operator"))
    msp = MspState(
        keypair=signatures.KeyPair.generate(_derive_seed(sim_seed, "msp")),
        oracle=oracle,
    )

    orderer_keys = [
        signatures.KeyPair.generate(_derive_seed(sim_seed, f"ord{k}"))
        for k in range(cfg.orderers)
    ]
    admin_keys = [
        signatures.KeyPair.generate(_derive_seed(sim_seed, f"admin{g}"))
        for g in range(cfg.groups)
    ]
    aggr_keys = {
        (g, a): signatures.KeyPair.generate(
            _derive_seed(sim_seed, f"aggr{g}-{a}"))
        for g in range(cfg.groups)
        for a in range(cfg.aggregators_per_group)
    }

    policy = replace(cfg.policy, delta=run.delta)
    genesis_config = SystemConfig(
        orderers=tuple(k.public for k in orderer_keys),
        admins=tuple(k.public for k in admin_keys),
        aggregators=tuple(aggr_keys[key].public for key in sorted(aggr_keys)),
        policy=policy,
    )
    genesis = make_genesis(msp.public, genesis_config)

    faults = FaultPlan(default_link=LinkSpec(
        loss=cfg.loss, latency_min=cfg.latency[0],
        latency_max=cfg.latency[1],
    ))
    for out in cfg.outages:
        spec = faults.link_override(out["link"][0], out["link"][1])
        spec.outages.append((int(out["start"]), int(out["end"])))
    sim = Simulator(master_seed=sim_seed, faults=faults, metrics=metrics)

    msp_node = MspNode("msp", msp, genesis)
    sim.add_actor(msp_node)

    orderer_nodes = []
    byz_count = cfg.byzantine
    orderer_dir = {
        k.public: f"ord-{i}" for i, k in enumerate(orderer_keys)
    }
    for i, key in enumerate(orderer_keys):
        actor = OrdererActor(actor_id=f"ord-{i}", keypair=key,
                             genesis=genesis)
        actor.orderer_ids = dict(orderer_dir)
        # byzantine assignments take the highest-indexed orderers so the
        # view-0 leader is honest unless every orderer is byzantine
        mode = cfg.byzantine_mode if i >= cfg.orderers - byz_count else None
        node = OrdererNode(actor, run, byz_mode=mode)
        node.node_ids = dict(orderer_dir)
        if mode is not None:
            sim.faults.byzantine[node.actor_id] = mode
        orderer_nodes.append(node)
        sim.add_actor(node)

    admin_nodes = []
    aggregator_nodes = []
    sensor_nodes = []
    all_pl_ids: dict[bytes, str] = {}
    orderer_ids = [n.actor_id for n in orderer_nodes]

    for g in range(cfg.groups):
        admin = LocalAdminState(keypair=admin_keys[g], group_id=f"g{g}")
        admin_node = AdminNode(f"admin-g{g}", admin, genesis)
        admin_nodes.append(admin_node)
        sim.add_actor(admin_node)
        group_nodes = []
        for a in range(cfg.aggregators_per_group):
            key = aggr_keys[(g, a)]
            actor = AggregatorActor(
                actor_id=f"aggr-g{g}-{a}", keypair=key,
                box_keypair=signatures.BoxKeyPair.generate(
                    _derive_seed(sim_seed, f"box{g}-{a}")),
                group_id=f"g{g}", admin_pk=admin.public, genesis=genesis,
            )
            admin.aggregator_list.append(key.public)
            node = AggregatorNode(actor, run)
            node.orderer_ids = orderer_ids
            group_nodes.append(node)
            aggregator_nodes.append(node)
            all_pl_ids[key.public] = node.actor_id
            sim.add_actor(node)
        roster = [n.actor.public for n in group_nodes]
        for node in group_nodes:
            node.actor.roster = roster
            node.peer_ids = [n.actor_id for n in group_nodes
                             if n is not node]
        for s in range(cfg.sensors_per_group):
            pk, state = admin.sensor_join(
                [n.actor for n in group_nodes], n=cfg.chain_length,
                seed=_derive_seed(sim_seed, f"sensor{g}-{s}"),
                lam=cfg.lam,
            )
            sensor = SensorActor(
                actor_id=f"sensor-g{g}-{s}", pk=pk, state=state,
                group_id=f"g{g}", period=cfg.broadcast_period,
            )
            node = SensorNode(sensor,
                              [n.actor_id for n in group_nodes], run)
            sensor_nodes.append(node)
            sim.add_actor(node)

    for node in aggregator_nodes:
        node.pl_ids = dict(all_pl_ids)
    delivery_ids = ([n.actor_id for n in aggregator_nodes]
                    + [msp_node.actor_id]
                    + [n.actor_id for n in admin_nodes])
    for node in orderer_nodes:
        node.actor.aggregator_ids = delivery_ids

    for rule in cfg.tampers:
        spec = faults.link_override(*rule.link)
        spec.tamper = _payload_forger(rule)

    return BuiltSystem(
        sim=sim, run=run, msp_node=msp_node, admin_nodes=admin_nodes,
        sensor_nodes=sensor_nodes, aggregator_nodes=aggregator_nodes,
        orderer_nodes=orderer_nodes, genesis=genesis,
    )


def _payload_forger(rule: TamperRule):
    """`frames` payload substitution with a correctly re-bound digest:
    the adversary on the link knows the revealed chain key."""

    def mutate(msg: NetMessage):
        if msg.kind != "frames":
            return None
        if msg.sent_at < rule.start:
            return None
        if rule.end is not None and msg.sent_at >= rule.end:
            return None
        sensor_pk, frames = msg.payload
        by_type = {f.frame_type: f for f in frames}
        if set(by_type) != {FRAME_PAYLOAD, FRAME_HASH, FRAME_SECRET_KEY}:
            return None
        forged = rule.payload_prefix + by_type[FRAME_PAYLOAD].data
        key = by_type[FRAME_SECRET_KEY].data
        prev = hashlib.sha256(key).digest()
        sigma1 = hashlib.sha256(
            struct.pack(">Q", len(forged)) + forged + prev
        ).digest()
        seq = by_type[FRAME_PAYLOAD].round_seq
        new_frames = [
            BroadcastFrame(FRAME_PAYLOAD, forged, seq),
            BroadcastFrame(FRAME_HASH, sigma1, seq),
            BroadcastFrame(FRAME_SECRET_KEY, key, seq),
        ]
        return NetMessage(src=msg.src, dst=msg.dst, kind=msg.kind,
                          payload=(sensor_pk, new_frames),
                          sent_at=msg.sent_at)

    return mutate


# ---------------------------------------------------------------------------
# scripted events and execution


def _schedule_scripted(system: BuiltSystem) -> None:
    sim = system.sim
    by_id = {n.actor_id: n for n in (
        system.sensor_nodes + system.aggregator_nodes
        + system.admin_nodes + [system.msp_node]
    )}

    class Scriptor(Actor):
        actor_id = "scriptor"

        def on_timer(self, sim_, tag, data):
            run_scripted_event(system, by_id, data)

    sim.add_actor(Scriptor())
    for ev in system.run.config.events:
        sim.schedule_timer("scriptor", ev["time"], "scripted", ev)


def run_scripted_event(system: BuiltSystem, by_id, ev: dict) -> None:
    sim = system.sim
    action = ev["action"]
    if action == "msp_offline":
        system.msp_node.msp.online = False
        sim.metrics.log_event(sim.now, "msp-offline")
    elif action == "msp_online":
        system.msp_node.msp.online = True
        sim.metrics.log_event(sim.now, "msp-online")
    elif action == "config_publish":
        system.msp_node.publish_config(
            sim, [n.actor_id for n in system.orderer_nodes]
        )
    elif action == "revoke_sensor":
        sensor_node = by_id[ev["sensor"]]
        admin_node = next(
            a for a in system.admin_nodes
            if a.admin.group_id == sensor_node.sensor.group_id
        )
        group_aggrs = [
            n.actor for n in system.aggregator_nodes
            if n.actor.group_id == sensor_node.sensor.group_id
        ]
        admin_node.admin.group_revoke(sensor_node.sensor.pk,
                                      group_aggregators=group_aggrs)
        sim.metrics.log_event(sim.now, "revocation", kind="sensor",
                              target=ev["sensor"])
    elif action == "revoke_aggregator":
        aggr_node = by_id[ev["aggregator"]]
        admin_node = next(
            a for a in system.admin_nodes
            if a.admin.group_id == aggr_node.actor.group_id
        )
        admin_node.admin.group_revoke(
            aggr_node.actor.public, msp=system.msp_node.msp,
            chain=admin_node.ledger,
        )
        sim.metrics.log_event(sim.now, "revocation", kind="aggregator",
                              target=ev["aggregator"])
        system.msp_node.publish_config(
            sim, [n.actor_id for n in system.orderer_nodes]
        )
    elif action == "transfer_sensor":
        sensor_node = by_id[ev["sensor"]]
        dst_node = by_id[ev["to_aggregator"]]
        src_node = next(
            n for n in system.aggregator_nodes
            if sensor_node.sensor.pk in n.actor.chain_lookup
            and n.actor_id != dst_node.actor_id
        )
        rng = sim.rng(f"transfer:{ev['sensor']}")
        tx = src_node.actor.build_transfer(
            dst_node.actor.public, dst_node.actor.box_keypair.public,
            sensor_node.sensor.pk, nonce=rng.randbytes(32),
            ephemeral_seed=rng.randbytes(32),
        )
        src_node.submit_transfer(sim, tx)
        sim.metrics.log_event(sim.now, "sensor-transfer",
                              sensor=ev["sensor"],
                              to=ev["to_aggregator"])
    elif action == "join_sensor":
        # enrollment after the run started: new sensor in the group
        admin_node = next(a for a in system.admin_nodes
                          if a.admin.group_id == ev["group"])
        group_nodes = [n for n in system.aggregator_nodes
                       if n.actor.group_id == ev["group"]]
        label = ev.get("label", f"late-{sim.now}")
        pk, state = admin_node.admin.sensor_join(
            [n.actor for n in group_nodes],
            n=ev.get("chain_length", system.run.config.chain_length),
            seed=_derive_seed(sim.master_seed, f"late:{label}"),
            lam=system.run.config.lam,
        )
        sensor = SensorActor(
            actor_id=f"sensor-{ev['group']}-{label}", pk=pk, state=state,
            group_id=ev["group"], period=system.run.config.broadcast_period,
        )
        node = SensorNode(sensor, [n.actor_id for n in group_nodes],
                          system.run)
        system.sensor_nodes.append(node)
        sim.add_actor(node)
        node.start(sim)
        sim.metrics.log_event(sim.now, "sensor-join",
                              sensor=sensor.actor_id)


def prefix_consistent(chains: list[list[Block]]) -> bool:
    digests = [[b.digest() for b in chain] for chain in chains]
    for i, a in enumerate(digests):
        for b in digests[i + 1:]:
            short, long_ = (a, b) if len(a) <= len(b) else (b, a)
            if long_[: len(short)] != short:
                return False
    return True


@dataclass
class TraceReport:
    trace_hash: str
    report: dict
    metrics: MetricsLog
    chain: list[Block]


def execute(system: BuiltSystem) -> TraceReport:
    sim = system.sim
    for node in system.sensor_nodes:
        node.start(sim)
    for node in system.aggregator_nodes:
        node.start(sim)
    _schedule_scripted(system)
    sim.run(system.run.drain_until)
    return summarize(system)


def summarize(system: BuiltSystem) -> TraceReport:
    sim, run = system.sim, system.run
    reference = system.aggregator_nodes[0].actor.ledger
    committed = {
        (rec.sensor_pk, rec.message)
        for block in reference
        for tx in block.transactions
        if tx.kind is TxKind.DATA
        for rec in tx.records
    }
    broadcast_keys = {(pk, m) for pk, m, _ in run.broadcasts}
    forged_committed = sorted(
        m.hex() for pk, m in committed if (pk, m) not in broadcast_keys
    )
    honest = [(pk, m, t) for pk, m, t in run.broadcasts]
    committed_honest = [x for x in honest if (x[0], x[1]) in committed]
    report = {
        "seed": sim.master_seed,
        "horizon": run.horizon,
        "time_end": sim.now,
        "trace_rows": len(sim.metrics.rows),
        "broadcast_readings": len(honest),
        "committed_readings": len(committed_honest),
        "committed_fraction": (
            len(committed_honest) / len(honest) if honest else 1.0
        ),
        "uncommitted": [
            {"sensor": pk.hex()[:16], "time": t}
            for pk, m, t in honest if (pk, m) not in committed
        ][:20],
        "forged_payloads_committed": forged_committed,
        "alarms": sim.metrics.count("alarm"),
        "chain_height": reference[-1].height,
        "tamper_audit": len(sim.tamper_audit),
        "dropped_messages": len(sim.dropped),
        "prefix_consistent": prefix_consistent(system.honest_ledgers()),
        "trace_hash": sim.metrics.trace_hash(),
    }
    return TraceReport(trace_hash=report["trace_hash"], report=report,
                       metrics=sim.metrics, chain=list(reference))


def run_scenario(cfg: ScenarioConfig, seed: int | None = None,
                 out_dir: str | Path | None = None,
                 check_consistency: bool = False) -> TraceReport:
    """Build, execute, and optionally persist one scenario run."""
    system = build_system(cfg, seed=seed)
    if check_consistency:
        def checker(sim):
            if not prefix_consistent(system.honest_ledgers()):
                raise AssertionError(
                    f"prefix consistency violated at t={sim.now}"
                )
        system.sim.consistency_check = checker
    result = execute(system)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_bytes(result.metrics.csv_bytes())
        (out / "events.jsonl").write_bytes(result.metrics.jsonl_bytes())
        write_chain_file(out / "chain.bin", result.chain)
        (out / "report.json").write_text(
            json.dumps(result.report, indent=2, sort_keys=True) + "\n"
        )
    return result
