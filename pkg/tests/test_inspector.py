"""Inspection pipeline, EVE output, rule files, scheduler, socket daemon."""

import json
import random
import socket
import threading

import pytest

from wsdetect.inspector import (
    Blacklist,
    GeneratedRule,
    InspectorConfig,
    InspectorDaemon,
    StubPredictor,
    emit_eve,
    inspect_pcap,
    load_config,
    parse_rule_line,
    schedule,
    serve,
    write_rules,
)
from wsdetect.inspector.config import ConfigError, ENV_CONFIG_PATH


class TestConfig:
    def test_defaults_match_operating_ranges(self):
        config = InspectorConfig()
        assert config.inspection_frequency == 120_000
        assert (config.frequency_min, config.frequency_max) == (60_000, 300_000)
        assert config.inspection_interval == 20_000
        assert (config.interval_min, config.interval_max) == (10_000, 30_000)
        assert config.rules_dir == "/etc/NetIDPS/rules"

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ConfigError):
            InspectorConfig(frequency_min=500, frequency_max=100)
        with pytest.raises(ConfigError):
            InspectorConfig(interval_min=0)

    def test_ids_mode_degrades_drop_to_alert(self):
        assert InspectorConfig(mode="ips").rule_action == "drop"
        assert InspectorConfig(mode="ids").rule_action == "alert"

    def test_load_from_file_with_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"inspection_frequency": 5000,
                                    "mode": "ids"}))
        config = load_config(path, overrides={"sid_start": 42})
        assert config.inspection_frequency == 5000
        assert config.mode == "ids"
        assert config.sid_start == 42

    def test_env_fallback(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"inspection_interval": 777}))
        monkeypatch.setenv(ENV_CONFIG_PATH, str(path))
        assert load_config().inspection_interval == 777

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(ConfigError, match="nonsense"):
            load_config(path)


class TestSchedule:
    def test_fixed_frequency_and_interval(self):
        config = InspectorConfig()
        gen = schedule(config, start_ms=0.0)
        windows = [next(gen) for _ in range(4)]
        assert [w.start_ms for w in windows] == [0, 120_000, 240_000, 360_000]
        assert all(w.duration_ms == 20_000 for w in windows)

    def test_randomized_gaps_within_range_and_mean(self):
        config = InspectorConfig(inspection_frequency=0)
        gen = schedule(config, rng=random.Random(0))
        starts = [next(gen).start_ms for _ in range(1001)]
        gaps = [b - a for a, b in zip(starts, starts[1:])]
        assert all(60_000 <= g <= 300_000 for g in gaps)
        mean = sum(gaps) / len(gaps)
        assert abs(mean - 180_000) / 180_000 < 0.05

    def test_randomized_durations_within_range(self):
        config = InspectorConfig(inspection_interval=0)
        gen = schedule(config, rng=random.Random(1))
        durations = [next(gen).duration_ms for _ in range(500)]
        assert all(10_000 <= d <= 30_000 for d in durations)

    def test_deterministic_with_seeded_rng(self):
        config = InspectorConfig(inspection_frequency=0, inspection_interval=0)
        a = [next(schedule(config, rng=random.Random(7))) for _ in range(1)]
        gen1 = schedule(config, rng=random.Random(7))
        gen2 = schedule(config, rng=random.Random(7))
        assert [next(gen1) for _ in range(10)] == [next(gen2) for _ in range(10)]


class TestInspectPcap:
    def test_empty_capture_nothing(self, tmp_path):
        from tests.conftest import pcap_bytes

        path = tmp_path / "empty.pcap"
        path.write_bytes(pcap_bytes([]))
        result = inspect_pcap(path, StubPredictor(1), InspectorConfig())
        assert result.alerts == [] and result.rules == []

    def test_benign_stub_produces_nothing(self, two_flow_pcap):
        result = inspect_pcap(two_flow_pcap, StubPredictor(0), InspectorConfig())
        assert result.alerts == [] and result.rules == []
        assert result.flows == 2
        assert result.benign == 2

    def test_webshell_stub_alerts_every_flow(self, two_flow_pcap):
        config = InspectorConfig()
        result = inspect_pcap(two_flow_pcap, StubPredictor(1), config)
        assert len(result.alerts) == 2  # one alert per classified flow
        assert len(result.rules) == 2  # two distinct source IPs
        alert = result.alerts[0]
        assert alert.src_ip == "192.168.1.10"
        assert alert.dest_ip == "10.0.0.2"
        assert alert.dest_port == 80
        assert alert.proto == "TCP"
        eve = alert.to_eve()
        assert eve["alert"]["category"] == "Webshell"
        assert eve["alert"]["severity"] == 1
        assert eve["alert"]["signature"] == "Webshell Attacking"

    def test_one_rule_per_source_ip(self, tmp_path):
        from tests.conftest import ethernet_ipv4_tcp, pcap_bytes

        # two flows from the same source: 2 alerts, 1 rule
        frames = [
            (0, ethernet_ipv4_tcp("192.168.1.10", 1111, "10.0.0.2", 80, 10)),
            (200_000, ethernet_ipv4_tcp("192.168.1.10", 2222, "10.0.0.2", 80, 10)),
        ]
        path = tmp_path / "same_src.pcap"
        path.write_bytes(pcap_bytes(frames))
        blacklist = Blacklist()
        result = inspect_pcap(path, StubPredictor(1), InspectorConfig(),
                              blacklist=blacklist)
        assert len(result.alerts) == 2
        assert len(result.rules) == 1
        assert blacklist.entries["192.168.1.10"].hit_count == 2

    def test_sids_stable_across_runs(self, two_flow_pcap):
        config = InspectorConfig()
        sid_for = {}
        first = inspect_pcap(two_flow_pcap, StubPredictor(1), config,
                             sid_for=sid_for)
        second = inspect_pcap(two_flow_pcap, StubPredictor(1), config,
                              sid_for=sid_for)
        assert [r.sid for r in first.rules] == [r.sid for r in second.rules]

    def test_ids_mode_generates_alert_rules(self, two_flow_pcap):
        result = inspect_pcap(two_flow_pcap, StubPredictor(1),
                              InspectorConfig(mode="ids"))
        assert all(r.action == "alert" for r in result.rules)


class TestEve:
    def _alerts(self, result):
        return result.alerts

    def test_one_line_per_alert(self, two_flow_pcap, tmp_path):
        result = inspect_pcap(two_flow_pcap, StubPredictor(1), InspectorConfig())
        sink = tmp_path / "eve.json"
        emit_eve(result.alerts, sink)
        lines = sink.read_text().splitlines()
        assert len(lines) == 2
        parsed = json.loads(lines[0])
        assert parsed["event_type"] == "alert"
        assert parsed["alert"]["severity"] == 1

    def test_zero_alerts_zero_bytes(self, tmp_path):
        sink = tmp_path / "eve.json"
        sink.write_bytes(b"")
        emit_eve([], sink)
        assert sink.read_bytes() == b""

    def test_roundtrip_parse_back(self, two_flow_pcap, tmp_path):
        result = inspect_pcap(two_flow_pcap, StubPredictor(1), InspectorConfig())
        sink = tmp_path / "eve.json"
        emit_eve(result.alerts, sink)
        emit_eve(result.alerts, sink)  # append mode
        lines = [json.loads(l) for l in sink.read_text().splitlines()]
        assert len(lines) == 4
        assert lines[0] == lines[2]
        assert lines[0] == result.alerts[0].to_eve()

    def test_timestamp_has_microseconds(self, two_flow_pcap):
        result = inspect_pcap(two_flow_pcap, StubPredictor(1), InspectorConfig())
        stamp = result.alerts[0].to_eve()["timestamp"]
        assert "." in stamp and "+0000" in stamp


class TestRuleFile:
    def test_render_matches_template(self):
        rule = GeneratedRule(action="drop", src_ip="10.0.0.5", sid=3000001)
        assert rule.render() == (
            'drop ip 10.0.0.5 any -> $HOME_NET any (msg:"Webshell Attacking"; '
            'classtype:web-application-attack; sid:3000001; rev:1;)')

    def test_parse_roundtrip(self):
        rule = GeneratedRule(action="alert", src_ip="1.2.3.4", sid=77, rev=3)
        assert parse_rule_line(rule.render()) == rule

    def test_write_then_reparse(self, tmp_path):
        rules = [GeneratedRule("drop", "10.0.0.5", 3000001)]
        path = write_rules(rules, tmp_path)
        assert path.name == "webshell-generated.rules"
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert parse_rule_line(lines[0]).src_ip == "10.0.0.5"

    def test_empty_list_touches_nothing(self, tmp_path):
        assert write_rules([], tmp_path) is None
        assert list(tmp_path.iterdir()) == []

    def test_same_source_bumps_rev_not_sid(self, tmp_path):
        rules = [GeneratedRule("drop", "10.0.0.5", 3000001)]
        write_rules(rules, tmp_path)
        path = write_rules(rules, tmp_path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        parsed = parse_rule_line(lines[0])
        assert parsed.rev == 2
        assert parsed.sid == 3000001

    def test_new_source_gets_fresh_sid_on_collision(self, tmp_path):
        write_rules([GeneratedRule("drop", "10.0.0.5", 3000001)], tmp_path)
        path = write_rules([GeneratedRule("drop", "10.0.0.6", 3000001)], tmp_path)
        parsed = [parse_rule_line(l) for l in path.read_text().splitlines()]
        assert len({r.sid for r in parsed}) == 2

    def test_missing_directory_errors(self, tmp_path):
        with pytest.raises(Exception, match="does not exist"):
            write_rules([GeneratedRule("drop", "1.1.1.1", 1)], tmp_path / "nope")


class TestBlacklist:
    def test_expiry(self):
        blacklist = Blacklist(ttl_s=10.0)
        blacklist.hit("1.1.1.1", now=100.0)
        assert "1.1.1.1" in blacklist.active(now=105.0)
        assert "1.1.1.1" not in blacklist.active(now=111.0)

    def test_hit_refreshes_and_counts(self):
        blacklist = Blacklist(ttl_s=10.0)
        blacklist.hit("1.1.1.1", now=0.0)
        blacklist.hit("1.1.1.1", now=8.0)
        entry = blacklist.active(now=15.0)["1.1.1.1"]
        assert entry.hit_count == 2


class TestDaemon:
    @pytest.fixture
    def running_daemon(self, tmp_path):
        config = InspectorConfig(
            socket_path=str(tmp_path / "inspector.sock"),
            rules_dir=str(tmp_path), model_path="stub")
        ready = threading.Event()
        thread = threading.Thread(
            target=serve, args=(config,), kwargs={"ready": ready}, daemon=True)
        thread.start()
        assert ready.wait(timeout=5.0)
        yield config

    def _request(self, config, lines):
        client = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        client.connect(config.socket_path)
        client.sendall(("\n".join(lines) + "\n").encode())
        client.shutdown(socket.SHUT_WR)
        data = b""
        while True:
            chunk = client.recv(65536)
            if not chunk:
                break
            data += chunk
        client.close()
        return [json.loads(l) for l in data.decode().splitlines()]

    def test_ping(self, running_daemon):
        assert self._request(running_daemon, ['{"op":"ping"}']) == [{"ok": True}]

    def test_inspect_equals_direct_call(self, running_daemon, two_flow_pcap):
        direct = inspect_pcap(two_flow_pcap, StubPredictor(1), running_daemon)
        responses = self._request(
            running_daemon,
            [json.dumps({"op": "inspect", "pcap_path": str(two_flow_pcap)})])
        response = responses[0]
        assert response["stats"]["flows"] == 2
        assert response["stats"]["webshell"] == 2
        assert response["alerts"] == [a.to_eve() for a in direct.alerts]
        assert response["rules"] == [r.render() for r in direct.rules]

    def test_malformed_then_next_request_still_served(self, running_daemon):
        responses = self._request(running_daemon, ["{", '{"op":"ping"}'])
        assert responses == [{"error": "parse"}, {"ok": True}]

    def test_unknown_op(self, running_daemon):
        responses = self._request(running_daemon, ['{"op":"dance"}'])
        assert "error" in responses[0]

    def test_deep_inspecting_off_refuses_inspect(self, tmp_path, two_flow_pcap):
        config = InspectorConfig(deep_inspecting=False, model_path="stub")
        daemon = InspectorDaemon(config)
        response = daemon.handle_request(
            {"op": "inspect", "pcap_path": str(two_flow_pcap)})
        assert "disabled" in response["error"]
        assert daemon.handle_request({"op": "ping"}) == {"ok": True}

    def test_blacklist_reported_after_inspection(self, running_daemon,
                                                 two_flow_pcap):
        self._request(running_daemon, [
            json.dumps({"op": "inspect", "pcap_path": str(two_flow_pcap)})])
        responses = self._request(running_daemon, ['{"op":"blacklist"}'])
        assert set(responses[0]["blacklist"]) == {"192.168.1.10", "192.168.1.20"}

    def test_concurrent_connections(self, running_daemon):
        results = []

        def worker():
            results.append(self._request(running_daemon, ['{"op":"ping"}']))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=5)
        assert results == [[{"ok": True}]] * 8

    def test_rules_written_through_daemon(self, running_daemon, two_flow_pcap,
                                          tmp_path):
        self._request(running_daemon, [
            json.dumps({"op": "inspect", "pcap_path": str(two_flow_pcap)})])
        rule_file = tmp_path / "webshell-generated.rules"
        assert rule_file.exists()
        assert len(rule_file.read_text().splitlines()) == 2
