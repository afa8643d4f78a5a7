"""Scenario harness: config parsing, the full simulation loop, attack
wrappers, and run artifacts."""

import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poefed import scenarios
from poefed.errors import InvalidAttack, InvalidConfig
from poefed.harness import (
    TAMPER_FIELDS,
    Classification,
    ColludingVerifiers,
    FakeWitnessRelay,
    Impersonate,
    ScenarioConfig,
    TamperEvent,
    TranscriptEntry,
    build_registry,
    classify_outcome,
    default_key_seed,
    derive_federation_seed,
    inject_attack,
    load_attack,
    load_scenario,
    log_mode,
    parse_attack,
    parse_scenario,
    run_scenario,
    transcript_lines,
    write_outcome,
)
from poefed.ledger import (
    UnconfirmedReason,
    encode_block,
    load_ledger_file,
    load_unconfirmed_file,
    verify_chain,
)
from poefed.protocol import EventGenerationRequest, VerifierValidation

MINIMAL = {
    "world": {
        "base_stations": [{"cell_id": 0, "x": 0.0, "y": 0.0}],
        "vehicles": [
            {"id": 1, "x": -5.0, "y": 0.0},
            {"id": 2, "x": 5.0, "y": 0.0},
        ],
    },
    "accident": {"colliding": [1, 2], "time": 1000},
}


def _minimal(**overrides) -> dict:
    data = json.loads(json.dumps(MINIMAL))
    data.update(overrides)
    return data


# --- config parsing ------------------------------------------------------------

def test_parse_scenario_fills_defaults():
    cfg = parse_scenario(_minimal())
    assert cfg.seed == 0
    assert cfg.world.dsrc_range == 300.0
    assert cfg.world.edr_capacity == 600
    assert cfg.world.edr_sample_interval == 100
    assert cfg.params.m == 5
    assert cfg.params.threshold_n is None
    assert cfg.params.min_reputation == 30.0
    assert cfg.params.reply_window == 500
    assert cfg.params.validation_deadline == 2000
    assert cfg.params.window_half_width == 5000
    assert cfg.latency.dsrc == 10
    assert cfg.latency.cellular == 50
    assert cfg.attacks == ()
    assert cfg.world.vehicles[0].reputation == 50.0


@pytest.mark.parametrize("mutate,path_fragment", [
    (lambda d: d.pop("world"), "world"),
    (lambda d: d["world"].pop("vehicles"), "world.vehicles"),
    (lambda d: d["world"]["vehicles"].append(
        {"id": 1, "x": 0.0, "y": 0.0}), "world.vehicles[2].id"),
    (lambda d: d["accident"].update(colliding=[1, 9]), "accident.colliding"),
    (lambda d: d["accident"].update(time=-5), "accident.time"),
    (lambda d: d["world"]["vehicles"][0].update(reputation=101),
     "world.vehicles[0].reputation"),
    (lambda d: d["world"]["vehicles"][0].update(x="east"),
     "world.vehicles[0].x"),
    (lambda d: d["world"]["vehicles"][0].update(key_seed="zz"),
     "world.vehicles[0].key_seed"),
    (lambda d: d.update(protocol={"m": 0}), "protocol.m"),
    (lambda d: d.update(latency={"dsrc_ms": -1}), "latency.dsrc_ms"),
    (lambda d: d["world"].update(dsrc_range=0), "world.dsrc_range"),
])
def test_parse_scenario_reports_the_failing_field(mutate, path_fragment):
    data = _minimal()
    mutate(data)
    with pytest.raises(InvalidConfig) as exc:
        parse_scenario(data)
    assert path_fragment in str(exc.value)


def test_parse_scenario_reads_observed_speeds_and_key_seed():
    data = _minimal()
    data["world"]["vehicles"][0]["observed_speeds"] = {"2": 12.5}
    data["world"]["vehicles"][1]["key_seed"] = "ab" * 32
    cfg = parse_scenario(data)
    assert cfg.world.vehicles[0].observed_speeds == ((2, 12.5),)
    assert cfg.world.vehicles[1].key_seed == b"\xab" * 32


def test_parse_attack_kinds():
    assert parse_attack({"kind": "tamper_event", "attacker": 1,
                         "field": "speed", "delta": 5.0}) == \
        TamperEvent(attacker=1, field="speed", delta=5.0)
    assert parse_attack({"kind": "impersonate", "attacker": 1,
                         "claimed_id": 2}) == \
        Impersonate(attacker=1, claimed_id=2)
    assert parse_attack({"kind": "fake_witness_relay", "relayer": 1,
                         "fake_witnesses": [2, 3],
                         "relay_delay_ms": 600}) == \
        FakeWitnessRelay(relayer=1, fake_witnesses=(2, 3), relay_delay=600)
    assert parse_attack({"kind": "colluding_verifiers",
                         "members": [4, 5]}) == \
        ColludingVerifiers(members=(4, 5), behavior="approve_tampered")
    with pytest.raises(InvalidConfig):
        parse_attack({"kind": "jam_everything"})


def test_inject_attack_validates_against_the_world():
    cfg = parse_scenario(_minimal())
    ok = inject_attack(cfg, TamperEvent(attacker=1, field="speed", delta=1.0))
    assert len(ok.attacks) == 1 and cfg.attacks == ()
    with pytest.raises(InvalidAttack):
        inject_attack(cfg, TamperEvent(attacker=77, field="speed", delta=1.0))
    with pytest.raises(InvalidAttack):
        inject_attack(cfg, TamperEvent(attacker=1, field="vin", delta=1.0))
    with pytest.raises(InvalidAttack):
        inject_attack(cfg, FakeWitnessRelay(relayer=1, fake_witnesses=(),
                                            relay_delay=0))
    with pytest.raises(InvalidAttack):
        inject_attack(cfg, ColludingVerifiers(members=(1,),
                                              behavior="sign_anything"))


def test_scenario_files_round_trip(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(_minimal()))
    assert load_scenario(str(path)) == parse_scenario(_minimal())
    attack_path = tmp_path / "a.json"
    attack_path.write_text(json.dumps({"kind": "impersonate", "attacker": 1,
                                       "claimed_id": 2}))
    assert load_attack(str(attack_path)) == Impersonate(1, 2)
    with pytest.raises(InvalidConfig):
        load_scenario(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(InvalidAttack):
        load_attack(str(bad))


# --- classification -------------------------------------------------------------

def _entry(sender, receiver, message):
    return TranscriptEntry(send_time=1000, deliver_time=1010, sender=sender,
                           receiver=receiver, message=message)


def test_classify_outcome_from_synthetic_transcripts():
    cfg = parse_scenario(_minimal())
    aid = b"\x01" * 16
    request = EventGenerationRequest(accident_id=aid, origin=1, sent_at=1000)
    validation = VerifierValidation(accident_id=aid, verifier=9,
                                    verdicts={}, signature=bytes(64))
    witness_hop = _entry(1, 3, request)
    verifier_word = _entry(9, 9, validation)
    assert classify_outcome([witness_hop, verifier_word],
                            cfg) == Classification.NORMAL
    assert classify_outcome([witness_hop], cfg) == Classification.NO_VERIFIER
    assert classify_outcome([verifier_word], cfg) == Classification.NO_WITNESS
    assert classify_outcome([], cfg) == Classification.NO_WITNESS_NO_VERIFIER
    # a request logged to the authority is not a witness contact
    dmv_copy = _entry(1, "dmv", request)
    assert classify_outcome([dmv_copy],
                            cfg) == Classification.NO_WITNESS_NO_VERIFIER
    # nor is a request between the colliding vehicles themselves
    peer_copy = _entry(1, 2, request)
    assert classify_outcome(
        [peer_copy], cfg) == Classification.NO_WITNESS_NO_VERIFIER


def test_classify_ignores_requests_from_non_colliding_senders():
    cfg = parse_scenario(_minimal())
    aid = b"\x01" * 16
    stray = _entry(7, 3, EventGenerationRequest(accident_id=aid, origin=7,
                                                sent_at=1000))
    assert classify_outcome([stray],
                            cfg) == Classification.NO_WITNESS_NO_VERIFIER


def test_classify_counts_witnesses_of_any_colliding_vehicle():
    cfg = parse_scenario(_minimal())
    aid = b"\x01" * 16
    hop = _entry(2, 5, EventGenerationRequest(accident_id=aid, origin=2,
                                              sent_at=1000))
    assert classify_outcome([hop], cfg) == Classification.NO_VERIFIER


# --- deterministic identities ----------------------------------------------------

def test_build_registry_is_deterministic_and_seed_independent():
    cfg_a = scenarios.build("fig2_normal")
    cfg_b = dataclasses.replace(cfg_a, seed=999)
    reg_a, keys_a = build_registry(cfg_a.world)
    reg_b, keys_b = build_registry(cfg_b.world)
    assert reg_a.vehicle_ids() == reg_b.vehicle_ids()
    for vid in reg_a.vehicle_ids():
        assert reg_a.public_key(vid) == reg_b.public_key(vid)
        assert keys_a[vid].secret == default_key_seed(vid)
    assert reg_a.get(1).plate == "P000001"
    assert reg_a.get(1).vin == "VIN0000000001"


def test_key_seed_override_changes_identity():
    data = _minimal()
    data["world"]["vehicles"][0]["key_seed"] = "cd" * 32
    cfg = parse_scenario(data)
    registry, keys = build_registry(cfg.world)
    assert keys[1].secret == b"\xcd" * 32
    assert registry.public_key(1) != build_registry(
        parse_scenario(_minimal()).world)[0].public_key(1)


def test_federation_seed_mixes_run_seed_and_accident():
    aid_a, aid_b = b"\x01" * 16, b"\x02" * 16
    assert derive_federation_seed(1, aid_a) != derive_federation_seed(2, aid_a)
    assert derive_federation_seed(1, aid_a) != derive_federation_seed(1, aid_b)
    assert derive_federation_seed(1, aid_a) == derive_federation_seed(1, aid_a)


def test_reseeding_moves_the_federation_not_the_facts():
    base = scenarios.build("fig2_normal")
    out_a = run_scenario(base)
    out_b = run_scenario(dataclasses.replace(base, seed=base.seed + 1))
    assert out_a.accident_id == out_b.accident_id
    of = lambda o: sorted(e.reporter for e in o.ledger.blocks[0].events)
    assert of(out_a) == of(out_b)  # evidence identical either way


# --- end-to-end behavior ----------------------------------------------------------

def test_normal_run_produces_one_verified_block():
    cfg = scenarios.build("fig2_normal")
    outcome = run_scenario(cfg)
    assert outcome.classification == Classification.NORMAL
    assert len(outcome.ledger.blocks) == 1
    block = outcome.ledger.blocks[0]
    assert sorted(e.reporter for e in block.events) == [1, 2, 3, 4, 5]
    registry, _ = build_registry(cfg.world)
    assert verify_chain(outcome.ledger, registry).valid
    assert outcome.ledger.unconfirmed == []
    assert outcome.metrics.unexpected_messages == 0
    assert outcome.federation is not None
    assert len(outcome.federation.members) == 4
    leader_rep = registry.reputation(outcome.federation.leader)
    assert leader_rep == max(registry.reputation(v)
                             for v in outcome.federation.members)


def test_incentives_raise_participant_reputations():
    cfg = scenarios.build("fig2_normal")
    outcome = run_scenario(cfg)
    registry, _ = build_registry(cfg.world)
    changes = outcome.metrics.reputation_changes
    witnesses = {3, 4, 5}
    signers = set(outcome.ledger.blocks[0].multisig.signatures)
    for vid in witnesses | signers:
        assert changes[vid] > 0
    for vid, delta in changes.items():
        assert outcome.final_registry.reputation(vid) == pytest.approx(
            min(100.0, max(0.0, registry.reputation(vid) + delta)))


@settings(max_examples=25, deadline=None)
@given(
    n_witnesses=st.integers(min_value=0, max_value=3),
    community_reps=st.lists(
        st.floats(min_value=0.0, max_value=100.0, allow_nan=False),
        min_size=0, max_size=6),
    seed=st.integers(min_value=0, max_value=2 ** 32),
)
def test_every_honest_run_reaches_a_recorded_verdict(n_witnesses,
                                                     community_reps, seed):
    vehicles = [
        {"id": 1, "x": -5.0, "y": 0.0, "vx": 10.0},
        {"id": 2, "x": 5.0, "y": 0.0, "vx": -10.0},
    ]
    for i in range(n_witnesses):
        vehicles.append({"id": 10 + i, "x": 30.0 + 10 * i, "y": -20.0})
    for i, rep in enumerate(community_reps):
        vehicles.append({"id": 50 + i, "x": 500.0 + 20 * i, "y": 0.0,
                         "reputation": rep})
    cfg = parse_scenario({
        "seed": seed,
        "world": {"base_stations": [{"cell_id": 0, "x": 0.0, "y": 0.0}],
                  "vehicles": vehicles},
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 3},
    })
    outcome = run_scenario(cfg)

    federated = any(rep >= 30.0 for rep in community_reps)
    expected = {
        (True, True): Classification.NORMAL,
        (True, False): Classification.NO_VERIFIER,
        (False, True): Classification.NO_WITNESS,
        (False, False): Classification.NO_WITNESS_NO_VERIFIER,
    }[(n_witnesses > 0, federated)]
    assert outcome.classification == expected

    if federated:
        assert len(outcome.ledger.blocks) == 1
        assert outcome.ledger.unconfirmed == []
        reporters = sorted(e.reporter for e in outcome.ledger.blocks[0].events)
        assert reporters == [1, 2] + [10 + i for i in range(n_witnesses)]
    else:
        assert outcome.ledger.blocks == []
        assert len(outcome.ledger.unconfirmed) == 1
        record = outcome.ledger.unconfirmed[0]
        assert record.reason == UnconfirmedReason.NO_FEDERATION
        assert sorted(e.reporter for e in record.events) == \
            [1, 2] + [10 + i for i in range(n_witnesses)]


def test_two_accidents_chain_on_one_ledger():
    cfg1 = scenarios.build("fig2_normal")
    out1 = run_scenario(cfg1)
    later = scenarios.SCENARIOS["fig2_normal"]()
    later["accident"]["time"] = 9000
    cfg2 = parse_scenario(later)
    out2 = run_scenario(cfg2, ledger=out1.ledger)
    assert out2.accident_id != out1.accident_id
    assert [b.height for b in out2.ledger.blocks] == [0, 1]
    assert out2.ledger.blocks[1].prev_hash == \
        out2.ledger.blocks[0].block_hash
    registry, _ = build_registry(cfg1.world)
    assert verify_chain(out2.ledger, registry).valid


# --- attacks ---------------------------------------------------------------------

@pytest.mark.parametrize("field", TAMPER_FIELDS)
def test_tampered_events_never_reach_a_block(field):
    base = scenarios.build("fig2_normal")
    for seed in range(12):
        cfg = dataclasses.replace(
            base, seed=seed,
            attacks=(TamperEvent(attacker=3, field=field, delta=4.5),))
        outcome = run_scenario(cfg)
        for block in outcome.ledger.blocks:
            assert 3 not in {e.reporter for e in block.events}
            for e in block.events:
                assert e.content_digest() == e.digest
        kinds = dict((a.kind, a.outcome)
                     for a in outcome.metrics.attack_outcomes)
        assert kinds["tamper_event"] == "mitigated: digest mismatch"
        assert outcome.metrics.events_rejected.get("bad_digest", 0) >= 1


def test_impersonation_fails_the_signature_check():
    cfg = inject_attack(scenarios.build("fig2_normal"),
                        Impersonate(attacker=3, claimed_id=4))
    outcome = run_scenario(cfg)
    block = outcome.ledger.blocks[0]
    # the forgery claims vehicle 4's identity and, arriving first, also
    # shadows the real vehicle 4's broadcast out of the cache
    assert sorted(e.reporter for e in block.events) == [1, 2, 5]
    kinds = dict((a.kind, a.outcome) for a in outcome.metrics.attack_outcomes)
    assert kinds["impersonate"] == "mitigated: signature check"
    assert outcome.metrics.events_rejected.get("bad_signature", 0) >= 1


def test_relay_timing_decides_fake_witness_acceptance():
    base = scenarios.build("fig2_normal")
    accepted = {}
    for delay in (0, 240, 479, 480, 520, 600, 800):
        cfg = inject_attack(base, FakeWitnessRelay(
            relayer=3, fake_witnesses=(30, 31), relay_delay=delay))
        outcome = run_scenario(cfg)
        in_block = any(e.reporter in (30, 31)
                       for b in outcome.ledger.blocks for e in b.events)
        accepted[delay] = in_block
        kinds = dict((a.kind, a.outcome)
                     for a in outcome.metrics.attack_outcomes)
        expected = "succeeded" if in_block else "mitigated: reply window"
        assert kinds["fake_witness_relay"] == expected
    # the relayed reply must reach the verifiers before they emit at
    # t_acc + reply_window + one cellular hop; with the request hop (10),
    # the relay hop (10) and the broadcast hop (50) that leaves delay < 480
    assert accepted[0] and accepted[240] and accepted[479]
    assert not accepted[480] and not accepted[520] and not accepted[800]
    flags = [accepted[d] for d in sorted(accepted)]
    assert flags == sorted(flags, reverse=True)  # monotone in the delay


def test_collusion_below_both_bars_only_jams_consensus():
    base = scenarios.build("attack_collusion")
    cfg = dataclasses.replace(
        base, attacks=(TamperEvent(attacker=3, field="speed", delta=5.0),
                       ColludingVerifiers(members=(20, 21))))
    outcome = run_scenario(cfg)
    assert outcome.ledger.blocks == []
    assert [r.reason for r in outcome.ledger.unconfirmed] == \
        [UnconfirmedReason.THRESHOLD_NOT_MET]
    kinds = dict((a.kind, a.outcome) for a in outcome.metrics.attack_outcomes)
    assert kinds["colluding_verifiers"] == "mitigated: threshold"


def test_collusion_at_threshold_forges_the_block():
    cfg = scenarios.build("attack_collusion")  # four of five verifiers collude
    outcome = run_scenario(cfg)
    assert len(outcome.ledger.blocks) == 1
    block = outcome.ledger.blocks[0]
    tampered = [e for e in block.events if e.content_digest() != e.digest]
    assert [e.reporter for e in tampered] == [3]
    kinds = dict((a.kind, a.outcome) for a in outcome.metrics.attack_outcomes)
    assert kinds["colluding_verifiers"] == "succeeded"
    assert kinds["tamper_event"] == "succeeded"


# --- artifacts -------------------------------------------------------------------

def test_write_outcome_emits_the_run_artifacts(tmp_path):
    cfg = scenarios.build("fig2_normal")
    outcome = run_scenario(cfg)
    paths = write_outcome(outcome, str(tmp_path / "out"), mode="summary")
    assert set(paths) == {"ledger", "unconfirmed", "transcript", "metrics",
                          "outcome"}
    loaded = load_ledger_file(paths["ledger"])
    assert [encode_block(b) for b in loaded.blocks] == \
        [encode_block(b) for b in outcome.ledger.blocks]
    assert load_unconfirmed_file(paths["unconfirmed"]) == []
    doc = json.loads(open(paths["outcome"]).read())
    assert doc["classification"] == "Normal"
    assert doc["seed"] == cfg.seed
    metrics = open(paths["metrics"]).read().splitlines()
    assert any(line.startswith("blocks_produced\t1") for line in metrics)
    transcript = open(paths["transcript"]).read().splitlines()
    assert len(transcript) == len(outcome.transcript)


def test_write_outcome_log_modes(tmp_path):
    cfg = scenarios.build("extreme_1")
    outcome = run_scenario(cfg)
    silent = write_outcome(outcome, str(tmp_path / "off"), mode="off")
    assert "transcript" not in silent
    summary = write_outcome(outcome, str(tmp_path / "s"), mode="summary")
    full = write_outcome(outcome, str(tmp_path / "f"), mode="full")
    short = open(summary["transcript"]).read()
    long = open(full["transcript"]).read()
    assert len(long) > len(short)  # full mode appends the encoded bytes
    assert transcript_lines(outcome.transcript, "summary") == \
        short.splitlines()


def test_log_mode_reads_environment(monkeypatch):
    monkeypatch.delenv("POE_LOG", raising=False)
    assert log_mode() == "summary"
    monkeypatch.setenv("POE_LOG", "full")
    assert log_mode() == "full"
