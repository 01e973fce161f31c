// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "honeytrace/common/digest.hpp"
#include "honeytrace/eventstore/event_store.hpp"
#include "honeytrace/fsvault/vault.hpp"
#include "honeytrace/gateway/gateway.hpp"
#include "honeytrace/monitor/server.hpp"
#include "honeytrace/netcap/capture.hpp"
#include "support.hpp"

using namespace honeytrace;
namespace fs = std::filesystem;
using SteadyClock = std::chrono::steady_clock;

namespace {

/// Collects failed expectations for one criterion.
class Verdict {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && failures_.size() < 8) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(const std::string& s) { notes_.push_back(s); }
    bool ok() const { return failed_ == 0; }
    std::string summary() const {
        std::string out;
        for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
        for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + std::string("failed: ") + f;
        if (failed_ > failures_.size()) out += "; +" + std::to_string(failed_ - failures_.size()) + " more";
        return out;
    }

private:
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
    std::size_t failed_ = 0;
};

double seconds_since(SteadyClock::time_point t0) { return std::chrono::duration<double>(SteadyClock::now() - t0).count(); }

std::string fmt(double v, int digits = 2) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(digits);
    out << v;
    return out.str();
}

gateway::RuntimeOptions runtime_options(const fs::path& dir) {
    gateway::RuntimeOptions o;
    o.data_dir = dir;
    o.pool = {2, 64, std::chrono::milliseconds(5000)};
    o.fs_debounce = std::chrono::milliseconds(20);
    return o;
}

const gateway::ServiceConfig kSsh{"ssh", 22, "linux-basic", {}};

std::vector<testing::RefTcp> decode_pcap(const fs::path& path) {
    std::vector<testing::RefTcp> out;
    for (const auto& r : testing::reference_parse_pcap(testing::slurp(path)).records) {
        auto t = testing::reference_decode_tcp(r.data);
        if (!t) throw std::runtime_error("undecodable frame in " + path.string());
        out.push_back(std::move(*t));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

void malware_scenario(Verdict& v) {
    testing::TempDir dir;
    gateway::Runtime rt(runtime_options(dir.path()));
    rt.register_template_dir(testing::template_dir());
    gateway::Gateway gw(rt);
    const auto script = sandbox::AttackScript::load(testing::scenario("ftp-exfil-malware.script"));
    const auto bystander_script = sandbox::AttackScript::load(testing::scenario("ssh-bruteforce.script"));

    const auto t0 = SteadyClock::now();
    auto bystander = std::async(std::launch::async, [&] {
        return gw.run_scripted_session(kSsh, bystander_script, *Endpoint::parse("192.0.2.200:41000"));
    });
    const auto result = gw.run_scripted_session(kSsh, script, *Endpoint::parse("198.51.100.77:52113"));
    const double elapsed = seconds_since(t0);
    const auto other = bystander.get();
    const auto& rec = result.record;
    const auto sid = rec.session.session_id;
    v.note("runtime " + fmt(elapsed) + " s");
    v.expect(elapsed < 10.0, "scenario took " + fmt(elapsed) + " s");
    v.expect(result.run.failed_steps == 0, "script steps failed: " + std::to_string(result.run.failed_steps));

    // the brute force: three refusals, then a welcome, all relayed to the attacker
    std::size_t denied = 0, welcomed = 0;
    std::string to_attacker;
    for (const auto& p : decode_pcap(rec.pcap))
        if (p.sport == 22) to_attacker.append(p.payload.begin(), p.payload.end());
    for (std::size_t at = 0; (at = to_attacker.find("Permission denied", at)) != std::string::npos; ++at) ++denied;
    welcomed = to_attacker.find("Welcome admin") != std::string::npos;
    v.expect(denied >= 3 && welcomed == 1, "brute force visible in capture");

    // (a) create and delete commits for the malware path; the pre-delete commit recovers it
    const auto history = rt.vault().history(sid);
    std::optional<std::size_t> created, deleted;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (history[i].message == "create /tmp/.x/m") created = i;
        if (history[i].message == "delete /tmp/.x/m") deleted = i;
    }
    v.expect(created && deleted && *created < *deleted, "(a) create and delete commits for /tmp/.x/m");
    if (created && deleted) {
        const auto out = dir / "checkout";
        rt.vault().checkout(history[*deleted - 1].commit_id, out);
        const auto recovered = testing::slurp(out / "tmp/.x/m");
        const auto original = testing::slurp(testing::scenario("payloads/dropper.bin"));
        v.expect(recovered == original, "(a) pre-delete checkout is byte identical");
        v.expect(!fs::exists(dir / "after"), "scratch");
        rt.vault().checkout(history[*deleted].commit_id, dir / "after");
        v.expect(!fs::exists(dir / "after" / "tmp/.x/m"), "(a) binary absent after the delete commit");
    }

    // (b) the outbound FTP control and data flows, and nothing from the other session
    const auto packets = decode_pcap(rec.pcap);
    const auto env_ip = rec.session.env_identity.str();
    const auto other_ip = other.record.session.env_identity.str();
    std::size_t ftp_ctrl = 0, ftp_data = 0, foreign = 0;
    std::string uploaded;
    for (const auto& p : packets) {
        if (p.src != env_ip && p.dst != env_ip) ++foreign;
        if (p.src == other_ip || p.dst == other_ip || p.src == "192.0.2.200" || p.dst == "192.0.2.200") ++foreign;
        if (p.dst == "203.0.113.50" && p.dport == 21) ++ftp_ctrl;
        if (p.dst == "203.0.113.50" && p.dport == 20020) {
            ++ftp_data;
            uploaded.append(p.payload.begin(), p.payload.end());
        }
    }
    v.expect(ftp_ctrl > 0, "(b) FTP control flow to 203.0.113.50:21 captured");
    v.expect(ftp_data > 0, "(b) FTP data flow captured");
    v.expect(to_bytes(uploaded) == testing::slurp(testing::template_dir() / "rootfs/home/admin/docs/report.pdf"),
             "(b) uploaded bytes equal the stolen document");
    v.expect(foreign == 0, "(b) " + std::to_string(foreign) + " packets of other traffic in the session capture");
    v.note(std::to_string(packets.size()) + " packets");

    // (c) exactly one alien execution and an opened trace
    eventstore::Query q;
    q.session = sid;
    std::size_t alien = 0, opened = 0;
    for (const auto& e : rt.events().query(q)) {
        if (e.kind == EventKind::exec && e.body.at("verdict") == "alien") ++alien;
        if (e.kind == EventKind::trace_opened) ++opened;
    }
    v.expect(alien == 1, "(c) alien exec count " + std::to_string(alien));
    v.expect(opened == 1 && rec.traces.size() == 1, "(c) one trace opened");

    // (d) snapshots match mem_writes; the last one holds the decrypted extensions
    if (rec.traces.size() == 1) {
        const auto log = tracer::read_trace_file(rt.trace_dir() / (rec.traces[0] + ".trace"));
        v.expect(log.sealed, "(d) trace sealed");
        v.expect(log.mem_write_count() == rec.snapshots.size(),
                 "(d) " + std::to_string(log.mem_write_count()) + " mem_writes vs " +
                     std::to_string(rec.snapshots.size()) + " snapshots");
        v.note(std::to_string(rec.snapshots.size()) + " snapshots");
        if (!rec.snapshots.empty()) {
            const auto snap = rt.snapshots().fetch(rec.snapshots.back());
            std::set<std::string> strings;
            for (const auto& r : snap.state.regions)
                for (const auto& s : checkpointd::printable_strings(r.content)) strings.insert(s);
            v.expect(strings.contains(".doc") && strings.contains(".pdf"), "(d) .doc and .pdf in snapshot memory");
        }
    }
}

// ---------------------------------------------------------------------------------------------

struct FixedProvider : checkpointd::ProcessStateProvider {
    std::optional<checkpointd::ProcessState> read_process(const std::string&) override {
        checkpointd::ProcessState s;
        s.regions.push_back({0x600000, "rw-", Bytes(64, 0)});
        return s;
    }
};

void alternation(Verdict& v) {
    testing::TempDir dir;
    checkpointd::SnapshotStore store(dir / "snaps");
    FixedProvider provider;
    checkpointd::Daemon daemon(store, provider);
    tracer::WhitelistRegistry whitelists;
    whitelists.add(tracer::build_whitelist("t", {}));
    testing::LoopbackChannel::Plan plan;
    testing::LoopbackChannel* channel = nullptr;
    fs::create_directories(dir / "traces");
    tracer::Tracer tracer(
        whitelists,
        [&] {
            auto c = std::make_unique<testing::LoopbackChannel>(daemon, plan);
            channel = c.get();
            return c;
        },
        {dir / "traces", std::chrono::milliseconds(1000)});

    constexpr int kCases = 1200;
    std::size_t total_events = 0, total_writes = 0, total_gaps = 0, faulty_cases = 0;
    for (int n = 0; n < kCases; ++n) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(n) * 7919 + 1);
        const bool faults = n % 2 == 1;
        faulty_cases += faults;
        auto fault_rng = std::make_shared<std::mt19937_64>(rng());
        plan = [faults, fault_rng](std::uint64_t) {
            if (!faults) return testing::LoopbackChannel::Fault::none;
            switch ((*fault_rng)() % 5) {
                case 0: return testing::LoopbackChannel::Fault::unreachable;
                case 1: return testing::LoopbackChannel::Fault::drop;
                case 2: return testing::LoopbackChannel::Fault::stray_first;
                default: return testing::LoopbackChannel::Fault::none;
            }
        };
        MemorySink sink;
        const auto trace_id =
            *tracer.on_exec("S" + std::to_string(n), "t", "/tmp/m", to_bytes("case" + std::to_string(n)), "p", sink)
                 .trace_id;
        const std::size_t len = 1 + rng() % 80;
        std::size_t writes = 0;
        for (std::size_t i = 0; i < len; ++i) {
            tracer::TraceEvent ev;
            switch (rng() % 4) {
                case 0: ev.kind = tracer::TraceKind::mem_write; ev.size = 4; ev.data = to_bytes("abcd"); ++writes; break;
                case 1: ev.kind = tracer::TraceKind::mem_read; ev.size = 8; break;
                default: ev.kind = tracer::TraceKind::instruction; ev.detail = "nop"; break;
            }
            ev.address = 0x600000 + rng() % 60;
            tracer.consume(trace_id, ev);
        }
        const auto log = tracer.seal(trace_id);
        total_events += log.events.size();
        total_writes += writes;
        v.expect(log.events.size() == len, "case " + std::to_string(n) + ": tracing stopped early");
        v.expect(log.snapshot_refs.size() == writes, "case " + std::to_string(n) + ": one handshake per mem_write");

        std::map<std::uint64_t, std::size_t> index;
        for (std::size_t i = 0; i < log.events.size(); ++i) index[log.events[i].seq] = i;
        std::size_t dump = 0, gaps = 0;
        for (const auto& ref : log.snapshot_refs) {
            const auto i = index.at(ref.trigger_seq);
            v.expect(log.events[i].kind == tracer::TraceKind::mem_write, "snapshot triggered by a mem_write");
            v.expect(log.append_ticks[i] < ref.requested_tick, "request after its mem_write");
            if (i + 1 < log.events.size())
                v.expect(ref.resolved_tick < log.append_ticks[i + 1],
                         "case " + std::to_string(n) + ": event appended before the notice");
            if (ref.status != tracer::SnapshotStatus::unreachable) {
                const auto tick = channel->dump_ticks.at(dump++);
                v.expect(ref.requested_tick < tick && tick < ref.resolved_tick, "dump inside the pause");
            }
            if (!ref.snapshot_id) ++gaps;
            else v.expect(store.contains(*ref.snapshot_id), "snapshot persisted");
        }
        total_gaps += gaps;
        if (!faults) v.expect(gaps == 0, "case " + std::to_string(n) + ": gap without injected failure");
        std::size_t gap_events = 0;
        for (const auto& e : sink.events()) gap_events += e.body.value("what", "") == "snapshot_gap";
        v.expect(gap_events == gaps, "every gap recorded as an event");
    }
    v.note(std::to_string(kCases) + " cases (" + std::to_string(faulty_cases) + " with injected failures), " +
           std::to_string(total_events) + " events, " + std::to_string(total_writes) + " mem_writes, " +
           std::to_string(total_gaps) + " gaps");
}

// ---------------------------------------------------------------------------------------------

void fsvault_roundtrip(Verdict& v) {
    const std::vector<std::string> dirs{"/tmp", "/tmp/.x", "/var/log", "/home/admin", "/etc"};
    const std::vector<std::string> names{"a.txt", "m", ".hidden", "data.bin", "passwd"};
    constexpr int kCases = 520;
    std::size_t commits_checked = 0;
    testing::TempDir dir;
    fsvault::Vault vault(dir / "vault");
    for (int n = 0; n < kCases; ++n) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(n) + 1000);
        const auto sid = "s" + std::to_string(n);
        fsvault::FileTree baseline{{"/etc/passwd", to_bytes("root:x:0:0\n")}, {"/bin/sh", to_bytes("sh")}};
        vault.record_baseline(sid, baseline);
        const std::size_t ops = 1 + rng() % 16;
        for (std::size_t i = 0; i < ops; ++i) {
            const auto kind = static_cast<fsvault::ChangeKind>(rng() % 3);
            const auto path = dirs[rng() % dirs.size()] + "/" + names[rng() % names.size()];
            std::optional<ObjectId> digest;
            if (kind != fsvault::ChangeKind::remove) {
                std::string content(rng() % 100, '\0');
                for (auto& c : content) c = static_cast<char>('a' + rng() % 4);
                digest = vault.put_blob(content);
            }
            vault.record_event({sid, kind, path, digest, Timestamp{static_cast<std::int64_t>(i)}});
        }
        const auto history = vault.history(sid);
        for (std::size_t i = 0; i < history.size(); ++i) {
            const auto out = dir / ("co-" + std::to_string(n) + "-" + std::to_string(i));
            vault.checkout(history[i].commit_id, out);
            const auto files = testing::read_tree(out);
            v.expect(testing::reference_tree_digest(files) == fsvault::tree_digest(history[i].tree).hex(),
                     "case " + std::to_string(n) + " commit " + std::to_string(i) + ": checkout digest");
            if (i > 0) {
                const auto d = vault.diff(history[i - 1].commit_id, history[i].commit_id);
                v.expect(fsvault::apply_changes(history[i - 1].tree, d, history[i].tree) == history[i].tree,
                         "case " + std::to_string(n) + " commit " + std::to_string(i) + ": diff application");
            }
            fs::remove_all(out);
            ++commits_checked;
        }
    }
    v.note(std::to_string(kCases) + " cases, " + std::to_string(commits_checked) + " commits checked out");
}

// ---------------------------------------------------------------------------------------------

void pcap_validity(Verdict& v) {
    testing::TempDir dir;
    netcap::CaptureHub hub(dir.path());
    std::mt19937_64 rng(5);
    for (const std::size_t n : {0u, 1u, 750u}) {
        const auto identity = Ipv4{0x0a4d0100u + static_cast<std::uint32_t>(n)};
        auto h = hub.open_capture("cap" + std::to_string(n), identity);
        std::vector<Bytes> payloads;
        for (std::size_t i = 0; i < n; ++i) {
            netcap::PacketRecord r;
            r.timestamp = Timestamp{1'700'000'000'000'000 + static_cast<std::int64_t>(i) * 1000};
            r.payload.resize(1 + rng() % 1500);
            for (auto& b : r.payload) b = static_cast<std::uint8_t>(rng());
            r.original_len = static_cast<std::uint32_t>(r.payload.size());
            r.src = Endpoint{identity, 22};
            r.dst = *Endpoint::parse("203.0.113.9:40000");
            payloads.push_back(r.payload);
            hub.publish(r);
        }
        const auto summary = hub.close_capture(h);
        const auto bytes = testing::slurp(summary.path);
        try {
            const auto parsed = testing::reference_parse_pcap(bytes);
            v.expect(parsed.records.size() == n, std::to_string(n) + "-record capture count");
            bool same = parsed.records.size() == n;
            for (std::size_t i = 0; same && i < n; ++i) same = parsed.records[i].data == payloads[i];
            v.expect(same, std::to_string(n) + "-record payload bytes");
            v.expect(parsed.version_major == 2 && parsed.version_minor == 4 && parsed.network == 101, "header fields");
        } catch (const std::exception& e) {
            v.expect(false, std::string("independent reader rejected the file: ") + e.what());
        }
        if (n == 0) v.expect(bytes.size() == 24, "empty capture is " + std::to_string(bytes.size()) + " bytes");
        v.note(std::to_string(n) + " records: " + std::to_string(bytes.size()) + " bytes");
    }
}

// ---------------------------------------------------------------------------------------------

void sha512_conformance(Verdict& v) {
    std::vector<Bytes> corpus;
    for (const char* s : {"", "a", "abc", "message digest", "abcdefghijklmnopqrstuvwxyz",
                          "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
                          "abcdefghbcdefghicdefghijdefghijkefghijklfghijklmghijklmnhijklmnoijklmnopjklmnopqklmnopqrlmnopqrsmnopqrstnopqrstu"})
        corpus.push_back(to_bytes(s));
    for (const std::size_t len : {55u, 56u, 63u, 64u, 111u, 112u, 127u, 128u, 129u, 255u, 256u, 1000u, 4096u})
        corpus.push_back(Bytes(len, static_cast<std::uint8_t>(len)));
    corpus.push_back(Bytes(1'000'000, 'a'));
    std::mt19937_64 rng(512);
    Bytes big(6u << 20);
    for (auto& b : big) b = static_cast<std::uint8_t>(rng());
    corpus.push_back(big);
    corpus.push_back(testing::slurp(testing::scenario("payloads/dropper.bin")));

    std::size_t agree = 0;
    for (const auto& m : corpus) {
        const bool ok = tracer::hash_image(m).hex() == testing::hex(testing::reference_sha512(m));
        agree += ok;
        v.expect(ok, "vector of " + std::to_string(m.size()) + " bytes");
    }
    // published answers for the empty string, "abc" and a million 'a'
    v.expect(tracer::hash_image(corpus[0]).hex() ==
                 "cf83e1357eefb8bdf1542850d66d8007d620e4050b5715dc83f4a921d36ce9ce47d0d13c5d85f2b0ff8318d2877eec2f63b931bd47417a81a538327af927da3e",
             "empty input known answer");
    v.expect(tracer::hash_image(corpus[2]).hex() ==
                 "ddaf35a193617abacc417349ae20413112e6fa4e89a97ea20a9eeee64b55d39a2192992a274fc1a836ba3c23a3feebbd454d4423643ce80e2a9ac94fa54ca49f",
             "abc known answer");
    v.expect(tracer::hash_image(Bytes(1'000'000, 'a')).hex() ==
                 "e718483d0ce769644e2e42c7bc15b4638e1f98b13b2044285632a803afa973ebde0ff244877ea60a4cb0432ce577c31beb009c5c2c49aa2e4eadb217ad8cc09b",
             "million a known answer");
    v.note(std::to_string(agree) + "/" + std::to_string(corpus.size()) + " vectors match OpenSSL, largest " +
           std::to_string(big.size() >> 20) + " MiB");
}

// ---------------------------------------------------------------------------------------------

void session_partition(Verdict& v) {
    testing::TempDir dir;
    auto opts = runtime_options(dir.path());
    opts.pool.warm_target = 3;
    gateway::Runtime rt(opts);
    rt.register_template_dir(testing::template_dir());
    gateway::Gateway gw(rt);
    constexpr int kSessions = 6;
    std::vector<std::future<gateway::Gateway::ScriptedResult>> runs;
    for (int i = 0; i < kSessions; ++i) {
        const auto name = i % 2 ? "ssh-bruteforce.script" : "ftp-exfil-malware.script";
        runs.push_back(std::async(std::launch::async, [&gw, name, i] {
            return gw.run_scripted_session(kSsh, sandbox::AttackScript::load(testing::scenario(name)),
                                           Endpoint{Ipv4{0xc0000200u + static_cast<std::uint32_t>(i + 1)},
                                                    static_cast<std::uint16_t>(45000 + i)});
        }));
    }
    std::vector<gateway::SessionRecord> records;
    for (auto& r : runs) records.push_back(r.get().record);

    std::map<std::string, std::string> commit_owner, trace_owner, snapshot_owner, identity_owner, pcap_owner;
    std::size_t packets = 0;
    for (const auto& rec : records) {
        const auto sid = rec.session.session_id;
        auto claim = [&](std::map<std::string, std::string>& owners, const std::string& key, const char* what) {
            const auto [it, fresh] = owners.emplace(key, sid);
            v.expect(fresh, std::string(what) + " " + key + " shared by " + it->second + " and " + sid);
        };
        claim(identity_owner, rec.session.env_identity.str(), "identity");
        claim(pcap_owner, rec.pcap.string(), "capture file");
        std::vector<std::string> commits{rec.baseline_commit};
        commits.insert(commits.end(), rec.commits.begin(), rec.commits.end());
        for (const auto& c : commits) {
            claim(commit_owner, c, "commit");
            v.expect(rt.vault().get_commit(ObjectId::from_hex(c)).session_id == sid, "commit keyed by its session");
        }
        for (const auto& t : rec.traces) {
            claim(trace_owner, t, "trace");
            v.expect(tracer::read_trace_file(rt.trace_dir() / (t + ".trace")).session_id == sid, "trace keyed by session");
        }
        for (const auto& s : rec.snapshots) {
            claim(snapshot_owner, s, "snapshot");
            v.expect(rt.snapshots().fetch(s).session_id == sid, "snapshot keyed by session");
        }
        const auto ip = rec.session.env_identity.str();
        const auto src = rec.session.source.addr.str();
        for (const auto& p : decode_pcap(rec.pcap)) {
            ++packets;
            v.expect(p.src == ip || p.dst == ip, "packet outside the session identity in " + sid);
            const bool peer_ok = p.src == src || p.dst == src || p.src.starts_with("203.0.113.") ||
                                 p.dst.starts_with("203.0.113.");
            v.expect(peer_ok, "packet with a foreign peer in " + sid);
        }
    }
    v.expect(records.size() == kSessions, "all sessions finished");
    v.note(std::to_string(kSessions) + " concurrent sessions, " + std::to_string(commit_owner.size()) + " commits, " +
           std::to_string(trace_owner.size()) + " traces, " + std::to_string(snapshot_owner.size()) + " snapshots, " +
           std::to_string(packets) + " packets");
}

// ---------------------------------------------------------------------------------------------

void store_throughput(Verdict& v) {
    testing::TempDir dir;
    constexpr int kSeconds = 30;
    constexpr int kRate = 2000;
    constexpr int kTotal = kSeconds * kRate;
    std::vector<int> per_second(kSeconds + 2, 0);
    double elapsed = 0;
    {
        eventstore::EventStore store(dir / "events");
        const auto t0 = SteadyClock::now();
        for (int i = 0; i < kTotal; ++i) {
            std::this_thread::sleep_until(t0 + std::chrono::microseconds(static_cast<std::int64_t>(i) * 1'000'000 / kRate));
            store.append({EventKind::connection, "sess-" + std::to_string(i % 97),
                          json{{"n", i}, {"source", "198.51.100." + std::to_string(i % 250) + ":4000"}, {"service", "ssh"}},
                          std::nullopt});
            const auto s = static_cast<std::size_t>(seconds_since(t0));
            if (s < per_second.size()) ++per_second[s];
        }
        elapsed = seconds_since(t0);
    }
    const int slowest = *std::min_element(per_second.begin(), per_second.begin() + kSeconds - 1);
    {
        eventstore::EventStore reopened(dir / "events");
        const auto all = reopened.scan();
        bool intact = all.size() == static_cast<std::size_t>(kTotal);
        for (std::size_t i = 0; intact && i < all.size(); ++i)
            intact = all[i].event_id == i + 1 && all[i].body.at("n") == static_cast<int>(i);
        v.expect(intact, "reopened store holds " + std::to_string(all.size()) + " of " + std::to_string(kTotal));
    }
    const double rate = kTotal / elapsed;
    v.expect(elapsed >= kSeconds - 1, "run shorter than " + std::to_string(kSeconds) + " s");
    v.expect(rate >= 1000, "rate " + fmt(rate, 0) + "/s");
    v.expect(slowest >= 1000, "slowest full second " + std::to_string(slowest) + " events");
    v.note(std::to_string(kTotal) + " events in " + fmt(elapsed, 1) + " s (" + fmt(rate, 0) +
           "/s, slowest second " + std::to_string(slowest) + "), zero loss after reopen");

    // query/scan equivalence on a randomized corpus
    constexpr std::size_t kCorpus = 120'000;
    eventstore::EventStore store(dir / "corpus");
    std::mt19937_64 rng(1234);
    const std::int64_t epoch = 1'790'000'000'000'000;
    const std::int64_t span = 3 * 86'400'000'000ll;
    for (std::size_t i = 0; i < kCorpus; ++i) {
        EventDraft d;
        d.kind = static_cast<EventKind>(rng() % kEventKindCount);
        if (rng() % 10) d.session_id = "s" + std::to_string(rng() % 40);
        d.timestamp = Timestamp{epoch + static_cast<std::int64_t>(rng() % span)};
        d.body = json{{"i", i}, {"source", "203.0.113." + std::to_string(rng() % 200) + ":1"}, {"service", "ssh"}};
        store.append(std::move(d));
    }
    const auto all = store.scan();
    v.expect(all.size() == kCorpus, "corpus size");
    std::size_t queries = 0, matched = 0;
    for (; queries < 300; ++queries) {
        eventstore::Query q;
        if (rng() % 2) q.from = Timestamp{epoch + static_cast<std::int64_t>(rng() % span)};
        if (rng() % 2) q.to = Timestamp{epoch + static_cast<std::int64_t>(rng() % span)};
        if (rng() % 2) q.session = "s" + std::to_string(rng() % 45);
        for (std::size_t k = rng() % 4; k > 0; --k) q.kinds.push_back(static_cast<EventKind>(rng() % kEventKindCount));
        if (rng() % 2) q.limit = rng() % 500;
        q.order = rng() % 2 ? eventstore::SortOrder::ascending : eventstore::SortOrder::descending;

        std::vector<std::uint64_t> expected;
        for (const auto& e : all) {
            if (q.from && e.timestamp.micros < q.from->micros) continue;
            if (q.to && e.timestamp.micros >= q.to->micros) continue;
            if (q.session && e.session_id != q.session) continue;
            if (!q.kinds.empty() && std::find(q.kinds.begin(), q.kinds.end(), e.kind) == q.kinds.end()) continue;
            expected.push_back(e.event_id);
        }
        if (q.order == eventstore::SortOrder::descending) std::reverse(expected.begin(), expected.end());
        if (q.limit && expected.size() > *q.limit) expected.resize(*q.limit);
        std::vector<std::uint64_t> got;
        for (const auto& e : store.query(q)) got.push_back(e.event_id);
        v.expect(got == expected, "query " + std::to_string(queries) + " differs from scan");
        matched += got.size();
    }
    const auto day = utc_day(Timestamp{epoch + span / 2});
    const auto stats = store.stats(day);
    std::uint64_t in_day = 0;
    const auto [lo, hi] = utc_day_bounds(day);
    for (const auto& e : all) in_day += e.timestamp.micros >= lo.micros && e.timestamp.micros < hi.micros;
    std::uint64_t counted = 0;
    for (const auto& [k, n] : stats.counts) counted += n;
    v.expect(counted == in_day, "stats for " + day + " count every event of the day");
    v.note(std::to_string(kCorpus) + "-event corpus, " + std::to_string(queries) + " queries (" +
           std::to_string(matched) + " rows) equal to scan");
}

// ---------------------------------------------------------------------------------------------

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return xs.empty() ? 0 : xs[xs.size() / 2];
}

/// Appends paced events and returns per-append latencies in microseconds.
std::vector<double> paced_appends(eventstore::EventStore& store, int count, const std::vector<std::string>& sessions) {
    std::vector<double> lat;
    lat.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const auto t = SteadyClock::now();
        store.append({EventKind::system, sessions[static_cast<std::size_t>(i) % sessions.size()], json{{"i", i}},
                      std::nullopt});
        lat.push_back(std::chrono::duration<double, std::micro>(SteadyClock::now() - t).count());
        if (i % 10 == 9) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    return lat;
}

struct Subscription {
    std::string name;
    std::string query;  // without cursor
    std::optional<std::string> session;
    std::chrono::milliseconds stall{0};  // first connection only
    std::vector<std::uint64_t> ids;
    std::size_t gaps = 0;
    std::size_t out_of_order = 0;
    std::size_t not_stored = 0;
    std::size_t mismatched = 0;
};

void feed(Verdict& v) {
    testing::TempDir dir;
    const std::vector<std::string> sessions{"A", "B", "C"};
    constexpr int kEvents = 8000;
    constexpr int kBurst = 20000;

    std::vector<double> without;
    {
        eventstore::EventStore baseline(dir / "baseline");
        without = paced_appends(baseline, kEvents, sessions);
    }

    eventstore::EventStore store(dir / "events");
    monitor::MonitorOptions opts;
    opts.client_queue = 64;
    monitor::Monitor mon(monitor::Sources{store}, opts);
    mon.start("127.0.0.1", 0);
    std::vector<Subscription> subs{{"fast-all", "/feed?x=1", std::nullopt, std::chrono::milliseconds(0)},
                                   {"fast-session-B", "/feed?session=B", "B", std::chrono::milliseconds(0)},
                                   {"slow-all", "/feed?x=1", std::nullopt, std::chrono::milliseconds(6000)}};
    std::atomic<bool> done{false};
    std::atomic<int> connected{0};
    std::vector<std::thread> consumers;
    for (auto& sub : subs) {
        consumers.emplace_back([&, s = &sub] {
            std::uint64_t last = 0;
            bool first = true;
            while (true) {
                const auto target = first ? s->query : s->query + "&cursor=" + std::to_string(last);
                testing::FeedClient client(mon.port(), target, std::chrono::microseconds(0),
                                           first ? s->stall : std::chrono::milliseconds(0));
                if (first) ++connected;
                first = false;
                bool reconnect = false;
                while (true) {
                    const auto msg = client.next(std::chrono::milliseconds(300));
                    if (!msg) {
                        if (client.finished()) {
                            reconnect = true;
                            break;
                        }
                        if (done) break;
                        continue;
                    }
                    const auto doc = json::parse(*msg);
                    if (doc.value("type", "") == "gap") {
                        ++s->gaps;
                        if (doc.at("last_event_id").get<std::uint64_t>() != last) ++s->out_of_order;
                        continue;
                    }
                    const auto ev = Event::from_json(doc);
                    if (ev.event_id <= last) ++s->out_of_order;
                    last = ev.event_id;
                    const auto stored = store.get(ev.event_id);
                    if (!stored) ++s->not_stored;
                    else if (!(*stored == ev)) ++s->mismatched;
                    s->ids.push_back(ev.event_id);
                }
                if (!reconnect) return;
            }
        });
    }
    const auto deadline = SteadyClock::now() + std::chrono::seconds(10);
    while ((connected < 3 || mon.subscriber_count() < 3) && SteadyClock::now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    v.expect(mon.subscriber_count() == 3, "three subscribers connected");

    const auto with = paced_appends(store, kEvents, sessions);
    // a burst larger than any socket buffer, while the slow subscriber is stalled
    const std::string padding(800, 'x');
    for (int i = 0; i < kBurst; ++i) {
        store.append({EventKind::system, sessions[static_cast<std::size_t>(i) % sessions.size()],
                      json{{"burst", i}, {"pad", padding}}, std::nullopt});
        if (i % 10 == 9) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    std::vector<std::uint64_t> all_ids, b_ids;
    for (const auto& e : store.scan()) {
        all_ids.push_back(e.event_id);
        if (e.session_id == "B") b_ids.push_back(e.event_id);
    }
    auto complete = [&] {
        return subs[0].ids.size() >= all_ids.size() && subs[1].ids.size() >= b_ids.size() &&
               subs[2].ids.size() >= all_ids.size();
    };
    const auto drain_deadline = SteadyClock::now() + std::chrono::seconds(60);
    while (!complete() && SteadyClock::now() < drain_deadline) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    done = true;
    for (auto& t : consumers) t.join();
    mon.stop();

    for (const auto& s : subs) {
        const auto& expected = s.session ? b_ids : all_ids;
        v.expect(s.ids == expected, s.name + " received " + std::to_string(s.ids.size()) + " of " +
                                        std::to_string(expected.size()) + " in order without duplicates");
        v.expect(s.out_of_order == 0, s.name + " ordering");
        v.expect(s.not_stored == 0 && s.mismatched == 0, s.name + " saw an event the store did not hold");
    }
    v.expect(subs[2].gaps > 0, "slow subscriber never fell behind; test too gentle");
    v.expect(subs[0].gaps == 0, "fast subscriber was cut off");

    const double m0 = median(without), m1 = median(with);
    v.expect(m1 <= 2 * m0 + 25, "median append latency " + fmt(m0) + " us without subscribers, " + fmt(m1) + " us with");
    v.note(std::to_string(kEvents + kBurst) + " events to 3 subscribers; slow one cut off " + std::to_string(subs[2].gaps) + "x and caught up by cursor");
    v.note("median append " + fmt(m0) + " us alone, " + fmt(m1) + " us with subscribers");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria{
        {"malware-scenario-end-to-end", malware_scenario},
        {"alternation-protocol", alternation},
        {"fsvault-round-trip", fsvault_roundtrip},
        {"pcap-validity", pcap_validity},
        {"sha512-conformance", sha512_conformance},
        {"session-partition", session_partition},
        {"event-store-throughput", store_throughput},
        {"feed-store-before-broadcast", feed},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Verdict v;
        const auto t0 = SteadyClock::now();
        try {
            check(v);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        const auto line = (v.ok() ? "PASS " : "FAIL ") + name + " [" + fmt(seconds_since(t0), 1) + " s] " + v.summary();
        std::cout << line << std::endl;
        failed += !v.ok();
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
    return failed ? 1 : 0;
}
