"""Membership service, local administrators, and join/revoke protocols.

The MSP is the sole authority over the on-chain whitelists; additions
are staged in its pending lists and become effective only when a signed
configuration update lands on the chain.  Local administrators own
their group's aggregator and sensor lists, the latter never touching
the chain at all: sensor enrollment fans the new public key out to the
group aggregators.

Physical identity proofs are modeled as operator-approved tokens: a
scenario-level operator secret mints them, so only parties the scenario
marks as approved can produce a token that verifies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from . import signatures
from .chainsig import ChainKeyState, ot_keygen
from .errors import AuthError, DuplicateError, MspUnavailable
from .ledger import Block, Policy, SystemConfig, read_config


@dataclass(frozen=True)
class IdentityProof:
    """Opaque operator approval for one subject key."""

    subject_pk: bytes
    operator_approval: bytes


class OperatorOracle:
    """Mints and checks identity proofs from a scenario-level secret."""

    def __init__(self, secret: bytes):
        self._secret = secret

    def issue(self, subject_pk: bytes) -> IdentityProof:
        token = hashlib.sha256(self._secret + subject_pk).digest()
        return IdentityProof(subject_pk=subject_pk, operator_approval=token)

    def check(self, proof: IdentityProof) -> bool:
        expected = hashlib.sha256(
            self._secret + proof.subject_pk
        ).digest()
        return proof.operator_approval == expected


def _aggr_add_payload(group_id: str, aggr_pk: bytes) -> bytes:
    # binding the group id blocks cross-group replays of admin approvals
    return b"aggr-add:" + group_id.encode() + b":" + aggr_pk


def _sensor_update_payload(op: bytes, group_id: str, sensor_pk: bytes
                           ) -> bytes:
    return b"sensor-" + op + b":" + group_id.encode() + b":" + sensor_pk


class MspState:
    """Pending whitelist changes awaiting the next configuration block.

    ``pending_*`` stay disjoint from the on-chain lists; ``oper`` holds
    staged removals of on-chain keys.  While ``online`` is false every
    operation raises ``MspUnavailable`` -- the data path does not come
    through here, so it keeps running.
    """

    def __init__(self, keypair: signatures.KeyPair, oracle: OperatorOracle):
        self.keypair = keypair
        self.oracle = oracle
        self.pending_orderers: list[bytes] = []
        self.pending_admins: list[bytes] = []
        self.pending_aggregators: list[bytes] = []
        self.oper: list[bytes] = []     # staged removals ("rm" operations)
        self.policy_override: Policy | None = None
        self.online = True
        self.admin_groups: dict[bytes, str] = {}  # admin pk -> group id

    @property
    def public(self) -> bytes:
        return self.keypair.public

    def _require_online(self):
        if not self.online:
            raise MspUnavailable("membership service is offline")

    # -- joins ---------------------------------------------------------

    def orderer_add(self, chain: list[Block], proof: IdentityProof,
                    orderer_pk: bytes) -> bool:
        self._require_online()
        if not self.oracle.check(proof) or proof.subject_pk != orderer_pk:
            raise AuthError("invalid identity proof")
        on_chain = read_config(chain).orderers
        if orderer_pk in on_chain or orderer_pk in self.pending_orderers:
            raise DuplicateError("orderer key already enrolled")
        self.pending_orderers.append(orderer_pk)
        return True

    def ladmin_add(self, chain: list[Block], proof: IdentityProof,
                   admin_pk: bytes, group_id: str) -> bool:
        self._require_online()
        if not self.oracle.check(proof) or proof.subject_pk != admin_pk:
            raise AuthError("invalid identity proof")
        on_chain = read_config(chain).admins
        if admin_pk in on_chain or admin_pk in self.pending_admins:
            raise DuplicateError("admin key already enrolled")
        self.pending_admins.append(admin_pk)
        self.admin_groups[admin_pk] = group_id
        return True

    def aggr_add(self, chain: list[Block], admin_pk: bytes, group_id: str,
                 aggr_pk: bytes, admin_sig: bytes) -> bool:
        """Admin-sponsored aggregator enrollment.

        The admin signature covers the group id, so an approval signed
        for group A cannot be replayed to enroll the key in group B.
        """
        self._require_online()
        config = read_config(chain)
        if admin_pk not in config.admins and \
                admin_pk not in self.pending_admins:
            raise AuthError("sponsoring admin is not enrolled")
        if self.admin_groups.get(admin_pk, group_id) != group_id:
            raise AuthError("admin does not manage this group")
        payload = _aggr_add_payload(group_id, aggr_pk)
        if not signatures.verify(admin_pk, payload, admin_sig):
            raise AuthError("bad admin signature on aggregator enrollment")
        if aggr_pk in config.aggregators or \
                aggr_pk in self.pending_aggregators:
            raise DuplicateError("aggregator key already enrolled")
        self.pending_aggregators.append(aggr_pk)
        return True

    # -- revocation ------------------------------------------------------

    def node_revoke(self, chain: list[Block], target_pk: bytes,
                    admin_sig: bytes | None = None,
                    admin_pk: bytes | None = None) -> bool:
        """Stage removal of any participant key.

        Aggregator removals may be initiated by the group admin, in
        which case the admin's signature over the removal is required.
        """
        self._require_online()
        config = read_config(chain)
        if admin_pk is not None:
            if admin_pk not in config.admins:
                raise AuthError("revoking admin is not enrolled")
            payload = b"node-revoke:" + target_pk
            if not signatures.verify(admin_pk, payload, admin_sig or b""):
                raise AuthError("bad admin signature on revocation")
        on_chain = (target_pk in config.orderers
                    or target_pk in config.admins
                    or target_pk in config.aggregators)
        if on_chain:
            if target_pk not in self.oper:
                self.oper.append(target_pk)
            return True
        for pending in (self.pending_orderers, self.pending_admins,
                        self.pending_aggregators):
            if target_pk in pending:
                pending.remove(target_pk)
                return True
        return False

    def policy_update(self, policy: Policy) -> None:
        self._require_online()
        self.policy_override = policy

    # -- configuration publication ----------------------------------------

    def build_config_update(self, chain: list[Block]
                            ) -> tuple[SystemConfig, bytes]:
        """Snapshot (current - staged removals) + staged additions and
        sign it; clears the pending state."""
        self._require_online()
        current = read_config(chain)
        removals = set(self.oper)

        def merged(existing: tuple[bytes, ...], pending: list[bytes]
                   ) -> tuple[bytes, ...]:
            kept = [k for k in existing if k not in removals]
            return tuple(kept + [k for k in pending if k not in removals])

        new_config = replace(
            current,
            orderers=merged(current.orderers, self.pending_orderers),
            admins=merged(current.admins, self.pending_admins),
            aggregators=merged(current.aggregators,
                               self.pending_aggregators),
            policy=self.policy_override or current.policy,
        )
        new_config.validate()
        sig = self.keypair.sign(new_config.encoded())
        self.pending_orderers.clear()
        self.pending_admins.clear()
        self.pending_aggregators.clear()
        self.oper.clear()
        self.policy_override = None
        return new_config, sig


@dataclass
class LocalAdminState:
    """Per-group authority over aggregators (AL) and sensors (SL).

    Revoked sensor keys are tombstoned: the public key of a revoked
    sensor can never re-join, which keeps old chain state unreplayable.
    """

    keypair: signatures.KeyPair
    group_id: str
    aggregator_list: list[bytes] = field(default_factory=list)
    sensor_list: list[bytes] = field(default_factory=list)
    sensor_tombstones: set[bytes] = field(default_factory=set)

    @property
    def public(self) -> bytes:
        return self.keypair.public

    def sponsor_aggregator(self, msp: MspState, chain: list[Block],
                           proof: IdentityProof, aggr_pk: bytes) -> bool:
        """AggrSetup followed by the MSP-side AggrAdd check."""
        if not msp.oracle.check(proof) or proof.subject_pk != aggr_pk:
            raise AuthError("invalid identity proof")
        if aggr_pk in self.aggregator_list:
            raise DuplicateError("aggregator already in this group")
        sig = self.keypair.sign(_aggr_add_payload(self.group_id, aggr_pk))
        msp.aggr_add(chain, self.public, self.group_id, aggr_pk, sig)
        self.aggregator_list.append(aggr_pk)
        return True

    def sensor_join(self, group_aggregators, n: int,
                    seed: bytes | None = None, lam: int = 256
                    ) -> tuple[bytes, ChainKeyState]:
        """Enroll a new sensor: generate its chain on the admin side and
        push the public key to every group aggregator (idempotent
        fan-out with per-aggregator acks)."""
        pk, state = ot_keygen(n, seed, lam=lam)
        if pk in self.sensor_list or pk in self.sensor_tombstones:
            raise DuplicateError("sensor key already enrolled or retired")
        payload = _sensor_update_payload(b"add", self.group_id, pk)
        sig = self.keypair.sign(payload)
        acks = []
        for aggr in group_aggregators:
            acks.append(aggr.install_sensor(self.public, pk, sig))
        if not all(acks):
            raise AuthError("a group aggregator rejected the enrollment")
        self.sensor_list.append(pk)
        return pk, state

    def group_revoke(self, target_pk: bytes, msp: MspState | None = None,
                     chain: list[Block] | None = None,
                     group_aggregators=()) -> bool:
        """Revoke one of this group's aggregators or sensors."""
        if target_pk in self.aggregator_list:
            if msp is None or chain is None:
                raise AuthError("aggregator revocation requires the MSP")
            payload = b"node-revoke:" + target_pk
            msp.node_revoke(chain, target_pk,
                            admin_sig=self.keypair.sign(payload),
                            admin_pk=self.public)
            self.aggregator_list.remove(target_pk)
            return True
        if target_pk in self.sensor_list:
            for aggr in group_aggregators:
                self.agg_revoke_sensor(aggr, target_pk)
            self.sensor_list.remove(target_pk)
            self.sensor_tombstones.add(target_pk)
            return True
        raise AuthError("target key is not managed by this group")

    def agg_revoke_sensor(self, aggr, sensor_pk: bytes) -> bool:
        payload = _sensor_update_payload(b"rm", self.group_id, sensor_pk)
        sig = self.keypair.sign(payload)
        return aggr.remove_sensor(self.public, sensor_pk, sig)


def verify_sensor_update(admin_pk: bytes, group_id: str, op: bytes,
                         sensor_pk: bytes, sig: bytes) -> bool:
    payload = _sensor_update_payload(op, group_id, sensor_pk)
    return signatures.verify(admin_pk, payload, sig)
