#include <doctest.h>

#include "honeytrace/gateway/gateway.hpp"
#include "honeytrace/monitor/server.hpp"
#include "support.hpp"

using namespace honeytrace;
using namespace honeytrace::monitor;

namespace {

/// Runtime with one finished malware session and one brute-force session.
struct Populated {
    testing::TempDir dir;
    std::unique_ptr<gateway::Runtime> rt;
    std::unique_ptr<gateway::Gateway> gw;
    gateway::Gateway::ScriptedResult malware;
    gateway::Gateway::ScriptedResult brute;

    Populated() {
        gateway::RuntimeOptions o;
        o.data_dir = dir.path();
        o.pool = {1, 16, std::chrono::milliseconds(3000)};
        rt = std::make_unique<gateway::Runtime>(o);
        rt->register_template_dir(testing::template_dir());
        gw = std::make_unique<gateway::Gateway>(*rt);
        const gateway::ServiceConfig ssh{"ssh", 22, "linux-basic", {}};
        malware = gw->run_scripted_session(ssh, sandbox::AttackScript::load(testing::scenario("ftp-exfil-malware.script")),
                                           *Endpoint::parse("198.51.100.7:50000"));
        brute = gw->run_scripted_session(ssh, sandbox::AttackScript::load(testing::scenario("ssh-bruteforce.script")),
                                         *Endpoint::parse("198.51.100.8:50001"));
    }

    Sources sources() {
        return {rt->events(), &rt->vault(), &rt->snapshots(), rt->trace_dir(), rt->sessions_dir()};
    }
};

json get_json(std::uint16_t port, const std::string& target, int expected_status = 200) {
    const auto r = testing::http_get(port, target);
    CHECK(r.status == expected_status);
    CHECK(r.allow_origin == "*");
    return json::parse(r.body);
}

bool wait_for(const std::function<bool()>& cond, std::chrono::milliseconds limit = std::chrono::seconds(5)) {
    const auto deadline = std::chrono::steady_clock::now() + limit;
    while (!cond()) {
        if (std::chrono::steady_clock::now() > deadline) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return true;
}

std::vector<Event> drain(testing::FeedClient& c, std::size_t n, std::chrono::milliseconds per = std::chrono::seconds(5)) {
    std::vector<Event> out;
    while (out.size() < n) {
        const auto msg = c.next(per);
        if (!msg) break;
        out.push_back(Event::from_json(json::parse(*msg)));
    }
    return out;
}

}  // namespace

TEST_SUITE("monitor") {
    TEST_CASE("read endpoints agree with the stores") {
        Populated p;
        Monitor m(p.sources());
        m.start("127.0.0.1", 0);
        const auto port = m.port();
        const auto& rec = p.malware.record;
        const auto sid = rec.session.session_id;

        // oracle: session ids in the order their session_created events were stored
        std::vector<std::string> created;
        for (const auto& e : p.rt->events().scan())
            if (e.kind == EventKind::session_created) created.push_back(*e.session_id);
        const auto list = get_json(port, "/sessions");
        REQUIRE(list.size() == created.size());
        for (std::size_t i = 0; i < created.size(); ++i) CHECK(list[i].at("session_id") == created[i]);

        const auto session = get_json(port, "/sessions/" + sid);
        CHECK(session.dump().find("archived") != std::string::npos);

        const auto history = get_json(port, "/sessions/" + sid + "/history").at("commits");
        REQUIRE(history.is_array());
        CHECK(history.size() == rec.commits.size() + 1);
        CHECK(history.back().at("commit_id") == rec.head_commit);

        const auto commit = get_json(port, "/commits/" + rec.commits.front().substr(0, 16));
        CHECK(commit.at("commit_id") == rec.commits.front());

        const auto blob = testing::http_get(port, "/blobs/" + object_id(testing::slurp(testing::scenario("payloads/dropper.bin"))).hex());
        CHECK(blob.status == 200);
        CHECK(blob.content_type == "application/octet-stream");
        CHECK(to_bytes(blob.body) == testing::slurp(testing::scenario("payloads/dropper.bin")));

        REQUIRE(rec.traces.size() == 1);
        const auto trace = get_json(port, "/traces/" + rec.traces[0]);
        CHECK(trace.dump().find(rec.traces[0]) != std::string::npos);

        REQUIRE(rec.snapshots.size() == 2);
        const auto snap = get_json(port, "/snapshots/" + rec.snapshots[1]);
        const auto dumped = snap.dump();
        CHECK(dumped.find(".doc") != std::string::npos);
        CHECK(dumped.find(".pdf") != std::string::npos);
        const auto stored = p.rt->snapshots().fetch(rec.snapshots[1]);
        for (std::size_t i = 0; i < stored.state.regions.size(); ++i) {
            const auto r = testing::http_get(port, "/snapshots/" + rec.snapshots[1] + "/regions/" + std::to_string(i));
            CHECK(r.status == 200);
            CHECK(to_bytes(r.body) == stored.state.regions[i].content);
        }

        eventstore::Query q;
        q.kinds = {EventKind::exec, EventKind::fs_commit};
        q.limit = 5;
        q.order = eventstore::SortOrder::descending;
        CHECK(get_json(port, "/events?kind=exec,fs_commit&limit=5&order=desc") == m.api().query_events(q));

        eventstore::Query qs;
        qs.session = sid;
        const auto session_events = get_json(port, "/sessions/" + sid + "/events");
        CHECK(session_events.size() == p.rt->events().query(qs).size());

        const auto day = utc_day(p.rt->events().scan().front().timestamp);
        CHECK(get_json(port, "/stats?day=" + day) == p.rt->events().stats(day).to_json());
        m.stop();
    }

    TEST_CASE("errors carry status codes and CORS headers") {
        Populated p;
        Monitor m(p.sources());
        m.start("127.0.0.1", 0);
        const auto port = m.port();
        CHECK(get_json(port, "/sessions/sess-nope", 404).contains("error"));
        CHECK(get_json(port, "/nothing/here", 404).contains("error"));
        CHECK(get_json(port, "/commits/ffffffffffffffff", 404).contains("error"));
        CHECK(get_json(port, "/snapshots/snap-nope", 404).contains("error"));
        CHECK(get_json(port, "/snapshots/" + p.malware.record.snapshots[0] + "/regions/99", 404).contains("error"));
        CHECK(get_json(port, "/events?kind=bogus", 400).contains("error"));
        CHECK(get_json(port, "/events?limit=many", 400).contains("error"));
        CHECK(get_json(port, "/stats?day=yesterday", 400).contains("error"));
        CHECK(get_json(port, "/blobs/xyz", 404).contains("error"));
        CHECK(testing::http_get(port, "/feed").status == 426);
        m.stop();
    }

    TEST_CASE("broadcast with no subscribers reaches nobody") {
        testing::TempDir dir;
        eventstore::EventStore store(dir.path());
        Monitor m(Sources{store});
        Event ev;
        ev.event_id = 1;
        CHECK(m.broadcast(ev) == 0);
        m.start("127.0.0.1", 0);
        store.append({EventKind::system, std::nullopt, json{{"what", "ping"}}, std::nullopt});
        CHECK(m.subscriber_count() == 0);
        m.stop();
    }

    TEST_CASE("feed with a cursor replays exactly what the store holds") {
        Populated p;
        Monitor m(p.sources());
        m.start("127.0.0.1", 0);
        const auto sid = p.malware.record.session.session_id;
        eventstore::Query q;
        q.session = sid;
        const auto expected = p.rt->events().query(q);
        testing::FeedClient client(m.port(), "/feed?cursor=0&session=" + sid);
        const auto got = drain(client, expected.size());
        CHECK(got == expected);
        CHECK_FALSE(client.next(std::chrono::milliseconds(200)));

        eventstore::Query qk;
        qk.kinds = {EventKind::snapshot, EventKind::exec};
        const auto kinds_expected = p.rt->events().query(qk);
        testing::FeedClient by_kind(m.port(), "/feed?cursor=0&kind=snapshot,exec");
        CHECK(drain(by_kind, kinds_expected.size()) == kinds_expected);
        m.stop();
    }

    TEST_CASE("live feed delivers stored events in order, filtered, without duplicates") {
        testing::TempDir dir;
        eventstore::EventStore store(dir.path());
        Monitor m(Sources{store});
        m.start("127.0.0.1", 0);
        testing::FeedClient all(m.port(), "/feed");
        testing::FeedClient only_b(m.port(), "/feed?session=B&kind=exec");
        REQUIRE(wait_for([&] { return m.subscriber_count() == 2; }));
        std::vector<std::uint64_t> ids, b_exec;
        for (int i = 0; i < 300; ++i) {
            const auto kind = i % 3 == 0 ? EventKind::exec : EventKind::system;
            const std::string session = i % 2 ? "A" : "B";
            ids.push_back(store.append({kind, session, json{{"i", i}}, std::nullopt}));
            if (kind == EventKind::exec && session == "B") b_exec.push_back(ids.back());
        }
        const auto got = drain(all, ids.size());
        REQUIRE(got.size() == ids.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].event_id == ids[i]);
            CHECK(got[i] == *store.get(ids[i]));
        }
        const auto filtered = drain(only_b, b_exec.size());
        REQUIRE(filtered.size() == b_exec.size());
        for (std::size_t i = 0; i < filtered.size(); ++i) CHECK(filtered[i].event_id == b_exec[i]);
        CHECK_FALSE(only_b.next(std::chrono::milliseconds(200)));
        m.stop();
    }

    TEST_CASE("a client that falls behind gets a gap notice and catches up by cursor") {
        testing::TempDir dir;
        eventstore::EventStore store(dir.path());
        MonitorOptions opts;
        opts.client_queue = 16;
        Monitor m(Sources{store}, opts);
        m.start("127.0.0.1", 0);
        std::vector<std::uint64_t> ids;
        std::uint64_t last = 0;
        std::vector<std::uint64_t> seen;
        {
            testing::FeedClient slow(m.port(), "/feed", std::chrono::milliseconds(20));
            REQUIRE(wait_for([&] { return m.subscriber_count() == 1; }));
            for (int i = 0; i < 400; ++i) ids.push_back(store.append({EventKind::system, "S", json{{"i", i}}, std::nullopt}));
            bool gap = false;
            while (auto msg = slow.next(std::chrono::seconds(5))) {
                const auto doc = json::parse(*msg);
                if (doc.value("type", "") == "gap") {
                    gap = true;
                    last = doc.at("last_event_id").get<std::uint64_t>();
                    break;
                }
                seen.push_back(doc.at("id").get<std::uint64_t>());
            }
            CHECK(gap);
            CHECK(wait_for([&] { return slow.finished(); }));
        }
        CHECK(seen.size() < ids.size());
        CHECK((seen.empty() ? 0 : seen.back()) == last);
        testing::FeedClient again(m.port(), "/feed?cursor=" + std::to_string(last));
        const auto rest = drain(again, ids.size() - seen.size());
        for (const auto& e : rest) seen.push_back(e.event_id);
        CHECK(seen == ids);
        m.stop();
    }

    TEST_CASE("bad feed parameters are refused") {
        testing::TempDir dir;
        eventstore::EventStore store(dir.path());
        Monitor m(Sources{store});
        m.start("127.0.0.1", 0);
        CHECK_THROWS(testing::FeedClient(m.port(), "/feed?cursor=abc"));
        CHECK_THROWS(testing::FeedClient(m.port(), "/feed?kind=nope"));
        m.stop();
    }
}
