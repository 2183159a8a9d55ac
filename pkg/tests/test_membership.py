"""Membership protocol tests: joins, revocations, group safety."""

import pytest

from sensorchain import signatures
from sensorchain.errors import AuthError, DuplicateError, MspUnavailable
from sensorchain.ledger import Policy, SystemConfig, apply_config_update, \
    make_genesis, read_config
from sensorchain.membership import (
    IdentityProof,
    LocalAdminState,
    MspState,
    OperatorOracle,
)


def kp(tag: str) -> signatures.KeyPair:
    return signatures.KeyPair.generate(tag.encode().ljust(32, b"\0"))


@pytest.fixture
def oracle():
    return OperatorOracle(secret=b"scenario-operator-secret")


@pytest.fixture
def msp(oracle):
    return MspState(keypair=kp("msp"), oracle=oracle)


@pytest.fixture
def chain(msp):
    return [make_genesis(msp.public, SystemConfig(policy=Policy(tau=1)))]


def publish(msp, chain):
    config, sig = msp.build_config_update(chain)
    chain.append(apply_config_update(chain, config, sig))
    return config


class FakeAggregator:
    """Just enough of the aggregator surface for fan-out tests."""

    def __init__(self, admin_pk, group_id):
        self.admin_pk = admin_pk
        self.group_id = group_id
        self.sensors = set()

    def install_sensor(self, admin_pk, sensor_pk, sig):
        from sensorchain.membership import verify_sensor_update
        if admin_pk != self.admin_pk:
            return False
        if not verify_sensor_update(admin_pk, self.group_id, b"add",
                                    sensor_pk, sig):
            return False
        self.sensors.add(sensor_pk)
        return True

    def remove_sensor(self, admin_pk, sensor_pk, sig):
        from sensorchain.membership import verify_sensor_update
        if admin_pk != self.admin_pk:
            return False
        if not verify_sensor_update(admin_pk, self.group_id, b"rm",
                                    sensor_pk, sig):
            return False
        self.sensors.discard(sensor_pk)
        return True


class TestOrdererAdd:
    def test_fresh_key_with_valid_proof(self, msp, chain, oracle):
        new = kp("orderer-new")
        assert msp.orderer_add(chain, oracle.issue(new.public), new.public)
        publish(msp, chain)
        assert new.public in read_config(chain).orderers

    def test_duplicate_on_chain_key(self, msp, chain, oracle):
        new = kp("orderer-dup")
        msp.orderer_add(chain, oracle.issue(new.public), new.public)
        publish(msp, chain)
        with pytest.raises(DuplicateError):
            msp.orderer_add(chain, oracle.issue(new.public), new.public)

    def test_duplicate_staged_key(self, msp, chain, oracle):
        new = kp("orderer-staged")
        msp.orderer_add(chain, oracle.issue(new.public), new.public)
        with pytest.raises(DuplicateError):
            msp.orderer_add(chain, oracle.issue(new.public), new.public)

    def test_bad_proof(self, msp, chain):
        new = kp("orderer-unproven")
        rogue = OperatorOracle(secret=b"not-the-operator")
        with pytest.raises(AuthError):
            msp.orderer_add(chain, rogue.issue(new.public), new.public)

    def test_proof_subject_must_match(self, msp, chain, oracle):
        a, b = kp("subject-a"), kp("subject-b")
        with pytest.raises(AuthError):
            msp.orderer_add(chain, oracle.issue(a.public), b.public)


class TestLadminAdd:
    def test_fresh_then_can_sponsor(self, msp, chain, oracle):
        admin = LocalAdminState(keypair=kp("ladmin-1"), group_id="g1")
        assert msp.ladmin_add(chain, oracle.issue(admin.public),
                              admin.public, "g1")
        publish(msp, chain)
        assert admin.public in read_config(chain).admins
        aggr = kp("aggr-1")
        assert admin.sponsor_aggregator(msp, chain,
                                        oracle.issue(aggr.public),
                                        aggr.public)

    def test_duplicate(self, msp, chain, oracle):
        admin = kp("ladmin-dup")
        msp.ladmin_add(chain, oracle.issue(admin.public), admin.public, "g1")
        with pytest.raises(DuplicateError):
            msp.ladmin_add(chain, oracle.issue(admin.public),
                           admin.public, "g1")


class TestAggrAdd:
    def test_unenrolled_admin_rejected(self, msp, chain, oracle):
        ghost = LocalAdminState(keypair=kp("ghost-admin"), group_id="g9")
        aggr = kp("aggr-x")
        with pytest.raises(AuthError):
            ghost.sponsor_aggregator(msp, chain, oracle.issue(aggr.public),
                                     aggr.public)

    def test_cross_group_signature_replay_fails(self, msp, chain, oracle):
        admin_a = LocalAdminState(keypair=kp("admin-a"), group_id="gA")
        admin_b = LocalAdminState(keypair=kp("admin-b"), group_id="gB")
        msp.ladmin_add(chain, oracle.issue(admin_a.public),
                       admin_a.public, "gA")
        msp.ladmin_add(chain, oracle.issue(admin_b.public),
                       admin_b.public, "gB")
        publish(msp, chain)
        aggr = kp("aggr-roamer")
        admin_a.sponsor_aggregator(msp, chain, oracle.issue(aggr.public),
                                   aggr.public)
        # B replays A's enrollment signature under its own group
        from sensorchain.membership import _aggr_add_payload
        sig_a = admin_a.keypair.sign(_aggr_add_payload("gA", aggr.public))
        with pytest.raises(AuthError):
            msp.aggr_add(chain, admin_b.public, "gB", aggr.public, sig_a)

    def test_admin_cannot_claim_foreign_group(self, msp, chain, oracle):
        admin = LocalAdminState(keypair=kp("admin-g1"), group_id="g1")
        msp.ladmin_add(chain, oracle.issue(admin.public), admin.public, "g1")
        publish(msp, chain)
        from sensorchain.membership import _aggr_add_payload
        aggr = kp("aggr-y")
        sig = admin.keypair.sign(_aggr_add_payload("g2", aggr.public))
        with pytest.raises(AuthError):
            msp.aggr_add(chain, admin.public, "g2", aggr.public, sig)


class TestSensorJoin:
    def test_join_registers_everywhere(self, oracle):
        admin = LocalAdminState(keypair=kp("admin-join"), group_id="g1")
        aggrs = [FakeAggregator(admin.public, "g1") for _ in range(3)]
        pk, state = admin.sensor_join(aggrs, n=16, seed=b"\x41" * 32)
        assert pk in admin.sensor_list
        assert all(pk in a.sensors for a in aggrs)
        assert state.n == 16 and state.ctr == 0

    def test_cross_group_install_rejected(self, oracle):
        admin1 = LocalAdminState(keypair=kp("admin-one"), group_id="g1")
        foreign = FakeAggregator(kp("admin-two").public, "g2")
        with pytest.raises(AuthError):
            admin1.sensor_join([foreign], n=4, seed=b"\x42" * 32)

    def test_duplicate_and_tombstoned_keys_rejected(self, oracle):
        admin = LocalAdminState(keypair=kp("admin-ts"), group_id="g1")
        aggrs = [FakeAggregator(admin.public, "g1")]
        pk, _ = admin.sensor_join(aggrs, n=4, seed=b"\x43" * 32)
        with pytest.raises(DuplicateError):
            admin.sensor_join(aggrs, n=4, seed=b"\x43" * 32)
        admin.group_revoke(pk, group_aggregators=aggrs)
        # the same key may never re-join after revocation
        with pytest.raises(DuplicateError):
            admin.sensor_join(aggrs, n=4, seed=b"\x43" * 32)

    def test_sensor_receives_only_pebbles(self, oracle):
        admin = LocalAdminState(keypair=kp("admin-peb"), group_id="g1")
        aggrs = [FakeAggregator(admin.public, "g1")]
        n = 1 << 10
        _, state = admin.sensor_join(aggrs, n=n, seed=b"\x44" * 32)
        assert len(state.traversal.pebbles) <= 11  # ceil(log2 n) + 1


class TestRevocation:
    def test_msp_revokes_orderer(self, msp, chain, oracle):
        new = kp("orderer-gone")
        msp.orderer_add(chain, oracle.issue(new.public), new.public)
        publish(msp, chain)
        assert msp.node_revoke(chain, new.public)
        publish(msp, chain)
        assert new.public not in read_config(chain).orderers

    def test_admin_revokes_own_aggregator(self, msp, chain, oracle):
        admin = LocalAdminState(keypair=kp("admin-rv"), group_id="g1")
        msp.ladmin_add(chain, oracle.issue(admin.public), admin.public, "g1")
        publish(msp, chain)
        aggr = kp("aggr-rv")
        admin.sponsor_aggregator(msp, chain, oracle.issue(aggr.public),
                                 aggr.public)
        publish(msp, chain)
        assert aggr.public in read_config(chain).aggregators
        admin.group_revoke(aggr.public, msp=msp, chain=chain)
        publish(msp, chain)
        assert aggr.public not in read_config(chain).aggregators

    def test_foreign_admin_cannot_revoke(self, msp, chain, oracle):
        admin_a = LocalAdminState(keypair=kp("admin-own"), group_id="gA")
        admin_b = LocalAdminState(keypair=kp("admin-other"), group_id="gB")
        for admin, g in ((admin_a, "gA"), (admin_b, "gB")):
            msp.ladmin_add(chain, oracle.issue(admin.public),
                           admin.public, g)
        publish(msp, chain)
        aggrs = [FakeAggregator(admin_a.public, "gA")]
        pk, _ = admin_a.sensor_join(aggrs, n=4, seed=b"\x45" * 32)
        with pytest.raises(AuthError):
            admin_b.group_revoke(pk, group_aggregators=aggrs)
        assert pk in aggrs[0].sensors

    def test_unauthorized_revoker_signature_rejected(self, msp, chain,
                                                     oracle):
        victim = kp("orderer-victim")
        msp.orderer_add(chain, oracle.issue(victim.public), victim.public)
        publish(msp, chain)
        rogue = kp("rogue")
        with pytest.raises(AuthError):
            msp.node_revoke(chain, victim.public,
                            admin_sig=rogue.sign(b"node-revoke:" +
                                                 victim.public),
                            admin_pk=rogue.public)


class TestMspOffline:
    def test_membership_ops_fail_gracefully(self, msp, chain, oracle):
        msp.online = False
        new = kp("orderer-offline")
        with pytest.raises(MspUnavailable):
            msp.orderer_add(chain, oracle.issue(new.public), new.public)
        with pytest.raises(MspUnavailable):
            msp.build_config_update(chain)
        msp.online = True
        assert msp.orderer_add(chain, oracle.issue(new.public), new.public)


class TestMonotoneAuthority:
    def test_only_msp_changes_config(self, msp, chain, oracle):
        # no sequence of non-MSP messages changes read_config output
        before = read_config(chain)
        intruder = kp("intruder")
        import dataclasses

        from sensorchain.ledger import apply_config_update
        cfg = dataclasses.replace(
            before, orderers=before.orderers + (intruder.public,)
        )
        with pytest.raises(AuthError):
            apply_config_update(chain, cfg, intruder.sign(cfg.encoded()))
        assert read_config(chain) == before
