#include "honeytrace/monitor/server.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <cctype>
#include <condition_variable>
#include <deque>
#include <map>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace honeytrace::monitor {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct Monitor::Subscriber {
    std::uint64_t id = 0;
    FeedFilter filter;
    std::size_t bound = 0;

    std::mutex mu;
    std::condition_variable cv;
    std::deque<Event> queue;
    bool overflow = false;
    bool closed = false;
};

namespace {

std::string url_decode(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') {
            out.push_back(' ');
        } else if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
                   std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

struct Target {
    std::vector<std::string> path;
    std::map<std::string, std::string> query;
};

Target parse_target(std::string_view target) {
    Target t;
    const auto q = target.find('?');
    const auto path = target.substr(0, q);
    std::size_t pos = 0;
    while (pos < path.size()) {
        auto next = path.find('/', pos);
        if (next == std::string_view::npos) next = path.size();
        if (next > pos) t.path.push_back(url_decode(path.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (q != std::string_view::npos) {
        auto rest = target.substr(q + 1);
        while (!rest.empty()) {
            auto amp = rest.find('&');
            const auto pair = rest.substr(0, amp);
            const auto eq = pair.find('=');
            if (eq == std::string_view::npos)
                t.query[url_decode(pair)] = "";
            else
                t.query[url_decode(pair.substr(0, eq))] = url_decode(pair.substr(eq + 1));
            if (amp == std::string_view::npos) break;
            rest = rest.substr(amp + 1);
        }
    }
    return t;
}

class BadRequest : public Error {
public:
    using Error::Error;
};

std::vector<EventKind> parse_kinds(const std::string& list) {
    std::vector<EventKind> kinds;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        auto comma = list.find(',', pos);
        if (comma == std::string::npos) comma = list.size();
        const auto name = list.substr(pos, comma - pos);
        if (!name.empty()) {
            const auto k = parse_event_kind(name);
            if (!k) throw BadRequest("unknown event kind '" + name + "'");
            kinds.push_back(*k);
        }
        pos = comma + 1;
    }
    return kinds;
}

std::uint64_t parse_uint(const std::string& text, const char* what) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (text.empty() || used != text.size() || text.front() == '-')
        throw BadRequest(std::string("bad ") + what + " '" + text + "'");
    return v;
}

Timestamp parse_time(const std::string& text, const char* what) {
    try {
        return Timestamp::parse_iso8601(text);
    } catch (const std::exception&) {
        throw BadRequest(std::string("bad ") + what + " '" + text + "'");
    }
}

std::optional<std::string> param(const Target& t, const std::string& key) {
    const auto it = t.query.find(key);
    if (it == t.query.end()) return std::nullopt;
    return it->second;
}

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

}  // namespace

struct Monitor::Impl {
    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread accept_thread;

    std::mutex conns_mu;
    std::map<std::uint64_t, int> conn_fds;
    std::vector<std::thread> conn_threads;
    std::uint64_t next_conn = 1;

    Monitor* self = nullptr;

    void accept_loop();
    void serve_connection(std::uint64_t conn_id, tcp::socket sock);
    Response handle(const Request& req);
    void run_feed(tcp::socket& sock, Request req);
    void decorate(Response& res) const;
};

Monitor::Monitor(Sources sources, MonitorOptions options)
    : api_(std::move(sources)), options_(std::move(options)), impl_(std::make_unique<Impl>()) {
    impl_->self = this;
}

Monitor::~Monitor() { stop(); }

void Monitor::start(const std::string& address, std::uint16_t port) {
    if (impl_->accept_thread.joinable()) throw Error("monitor already started");
    stopping_ = false;
    beast::error_code ec;
    const auto addr = net::ip::make_address(address, ec);
    if (ec) throw Error("bad monitor address '" + address + "'");
    const tcp::endpoint ep{addr, port};
    auto& acc = impl_->acceptor;
    acc.open(ep.protocol(), ec);
    if (!ec) acc.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acc.bind(ep, ec);
    if (!ec) acc.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
        acc.close();
        throw Error("monitor cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
    }
    port_ = acc.local_endpoint().port();
    listener_ = api_.sources().events.add_listener([this](const Event& ev) { broadcast(ev); });
    impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
}

void Monitor::stop() {
    if (!impl_->accept_thread.joinable()) return;
    stopping_ = true;
    if (listener_) {
        api_.sources().events.remove_listener(*listener_);
        listener_.reset();
    }
    impl_->accept_thread.join();
    {
        std::lock_guard lock(subs_mu_);
        for (const auto& s : subs_) {
            std::lock_guard sl(s->mu);
            s->closed = true;
            s->cv.notify_all();
        }
    }
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(impl_->conns_mu);
        for (const auto& [id, fd] : impl_->conn_fds) ::shutdown(fd, SHUT_RDWR);
        threads.swap(impl_->conn_threads);
    }
    for (auto& t : threads) t.join();
    beast::error_code ec;
    impl_->acceptor.close(ec);
}

std::size_t Monitor::broadcast(const Event& ev) {
    std::size_t queued = 0;
    std::lock_guard lock(subs_mu_);
    for (const auto& s : subs_) {
        if (!s->filter.matches(ev)) continue;
        std::lock_guard sl(s->mu);
        if (s->closed || s->overflow) continue;
        if (s->queue.size() >= s->bound) {
            s->overflow = true;
        } else {
            s->queue.push_back(ev);
            ++queued;
        }
        s->cv.notify_one();
    }
    return queued;
}

std::size_t Monitor::subscriber_count() const {
    std::lock_guard lock(subs_mu_);
    return subs_.size();
}

void Monitor::Impl::accept_loop() {
    while (!self->stopping_) {
        pollfd p{acceptor.native_handle(), POLLIN, 0};
        if (::poll(&p, 1, 100) <= 0) continue;
        beast::error_code ec;
        tcp::socket sock{ioc};
        acceptor.accept(sock, ec);
        if (ec) continue;
        std::lock_guard lock(conns_mu);
        const auto id = next_conn++;
        conn_fds[id] = sock.native_handle();
        conn_threads.emplace_back([this, id, s = std::move(sock)]() mutable { serve_connection(id, std::move(s)); });
    }
}

void Monitor::Impl::decorate(Response& res) const {
    res.set(http::field::server, "honeytrace-monitor");
    res.set(http::field::access_control_allow_origin, self->options_.cors_origin);
}

void Monitor::Impl::serve_connection(std::uint64_t conn_id, tcp::socket sock) {
    beast::flat_buffer buffer;
    while (!self->stopping_) {
        Request req;
        beast::error_code ec;
        http::read(sock, buffer, req, ec);
        if (ec) break;
        if (websocket::is_upgrade(req) && parse_target(std::string_view(req.target().data(), req.target().size())).path == std::vector<std::string>{"feed"}) {
            run_feed(sock, std::move(req));
            break;
        }
        auto res = handle(req);
        const bool keep = res.keep_alive();
        http::write(sock, res, ec);
        if (ec || !keep) break;
    }
    {
        // Deregister before closing so stop() never shuts down a reused descriptor.
        std::lock_guard lock(conns_mu);
        conn_fds.erase(conn_id);
    }
    beast::error_code ec;
    sock.shutdown(tcp::socket::shutdown_both, ec);
    sock.close(ec);
}

Response Monitor::Impl::handle(const Request& req) {
    Response res;
    res.version(req.version());
    res.keep_alive(req.keep_alive());
    decorate(res);

    const auto json_reply = [&](http::status status, const json& body) {
        res.result(status);
        res.set(http::field::content_type, "application/json");
        res.body() = body.dump();
    };
    const auto bytes_reply = [&](const Bytes& b) {
        res.result(http::status::ok);
        res.set(http::field::content_type, "application/octet-stream");
        res.body().assign(b.begin(), b.end());
    };

    if (req.method() == http::verb::options) {
        res.result(http::status::no_content);
        res.set(http::field::access_control_allow_methods, "GET, OPTIONS");
        res.set(http::field::access_control_allow_headers, "*");
        res.prepare_payload();
        return res;
    }
    if (req.method() != http::verb::get) {
        json_reply(http::status::method_not_allowed, {{"error", "only GET is supported"}});
        res.prepare_payload();
        return res;
    }

    const auto t = parse_target(std::string_view(req.target().data(), req.target().size()));
    const auto& p = t.path;
    const auto& api = self->api_;
    try {
        if (p.size() == 1 && p[0] == "sessions") {
            std::optional<Timestamp> from, to;
            if (auto v = param(t, "from")) from = parse_time(*v, "from");
            if (auto v = param(t, "to")) to = parse_time(*v, "to");
            json_reply(http::status::ok, api.list_sessions(from, to));
        } else if (p.size() == 2 && p[0] == "sessions") {
            json_reply(http::status::ok, api.get_session(p[1]));
        } else if (p.size() == 3 && p[0] == "sessions" && p[2] == "history") {
            json_reply(http::status::ok, api.get_history(p[1]));
        } else if (p.size() == 3 && p[0] == "sessions" && p[2] == "events") {
            eventstore::Query q;
            q.session = p[1];
            json_reply(http::status::ok, api.query_events(q));
        } else if (p.size() == 2 && p[0] == "commits") {
            json_reply(http::status::ok, api.get_commit(p[1]));
        } else if (p.size() == 2 && p[0] == "blobs") {
            bytes_reply(api.get_blob(p[1]));
        } else if (p.size() == 2 && p[0] == "traces") {
            json_reply(http::status::ok, api.get_trace(p[1]));
        } else if (p.size() == 2 && p[0] == "snapshots") {
            json_reply(http::status::ok, api.get_snapshot(p[1]));
        } else if (p.size() == 4 && p[0] == "snapshots" && p[2] == "regions") {
            bytes_reply(api.get_snapshot_region(p[1], parse_uint(p[3], "region index")));
        } else if (p.size() == 1 && p[0] == "events") {
            eventstore::Query q;
            if (auto v = param(t, "kind")) q.kinds = parse_kinds(*v);
            if (auto v = param(t, "session")) q.session = *v;
            if (auto v = param(t, "from")) q.from = parse_time(*v, "from");
            if (auto v = param(t, "to")) q.to = parse_time(*v, "to");
            if (auto v = param(t, "limit")) q.limit = parse_uint(*v, "limit");
            if (auto v = param(t, "order")) {
                if (*v == "asc")
                    q.order = eventstore::SortOrder::ascending;
                else if (*v == "desc")
                    q.order = eventstore::SortOrder::descending;
                else
                    throw BadRequest("bad order '" + *v + "'");
            }
            json_reply(http::status::ok, api.query_events(q));
        } else if (p.size() == 1 && p[0] == "stats") {
            auto day = param(t, "day");
            if (!day) day = utc_day(Clock::process().now());
            if (day->size() != 10) throw BadRequest("bad day '" + *day + "'");
            json_reply(http::status::ok, api.stats(*day));
        } else if (p.size() == 1 && p[0] == "feed") {
            json_reply(http::status::upgrade_required, {{"error", "feed requires a WebSocket upgrade"}});
        } else {
            json_reply(http::status::not_found, {{"error", "no such endpoint"}});
        }
    } catch (const NotFound& e) {
        json_reply(http::status::not_found, {{"error", e.what()}});
    } catch (const BadRequest& e) {
        json_reply(http::status::bad_request, {{"error", e.what()}});
    } catch (const std::exception& e) {
        json_reply(http::status::internal_server_error, {{"error", e.what()}});
    }
    res.prepare_payload();
    return res;
}

void Monitor::Impl::run_feed(tcp::socket& sock, Request req) {
    FeedFilter filter;
    std::optional<std::uint64_t> cursor;
    const auto t = parse_target(std::string_view(req.target().data(), req.target().size()));
    std::string rejection;
    try {
        if (auto v = param(t, "session")) filter.session = *v;
        if (auto v = param(t, "kind"))
            for (const auto k : parse_kinds(*v)) filter.kinds.insert(k);
        if (auto v = param(t, "cursor")) cursor = parse_uint(*v, "cursor");
    } catch (const BadRequest& e) {
        rejection = e.what();
    }
    if (!rejection.empty()) {
        Response res{http::status::bad_request, req.version()};
        decorate(res);
        res.set(http::field::content_type, "application/json");
        res.body() = json{{"error", rejection}}.dump();
        res.keep_alive(false);
        res.prepare_payload();
        beast::error_code ec;
        http::write(sock, res, ec);
        return;
    }

    websocket::stream<tcp::socket&> ws{sock};
    const auto origin = self->options_.cors_origin;
    ws.set_option(websocket::stream_base::decorator([origin](websocket::response_type& res) {
        res.set(http::field::server, "honeytrace-monitor");
        res.set(http::field::access_control_allow_origin, origin);
    }));
    beast::error_code ec;
    ws.accept(req, ec);
    if (ec) return;
    ws.text(true);

    auto sub = std::make_shared<Subscriber>();
    sub->filter = filter;
    sub->bound = std::max<std::size_t>(1, self->options_.client_queue);
    std::uint64_t head = 0;
    {
        // Registration and the head read happen together: every event after `head` reaches
        // the queue, every event up to it is in the store.
        std::lock_guard lock(self->subs_mu_);
        sub->id = self->next_sub_++;
        head = self->api_.sources().events.head();
        self->subs_.push_back(sub);
    }
    const auto unregister = [&] {
        std::lock_guard lock(self->subs_mu_);
        std::erase(self->subs_, sub);
    };

    std::uint64_t sent = head;
    if (cursor && *cursor < head) {
        std::uint64_t c = *cursor;
        bool done = false;
        while (!done && c < head && !self->stopping_) {
            const auto batch = self->api_.sources().events.since(c, 512);
            if (batch.empty()) break;
            for (const auto& ev : batch) {
                if (ev.event_id > head) {
                    done = true;
                    break;
                }
                c = ev.event_id;
                if (!filter.matches(ev)) continue;
                ws.write(net::buffer(ev.to_json().dump()), ec);
                if (ec) {
                    unregister();
                    return;
                }
            }
        }
    }

    for (;;) {
        std::unique_lock lock(sub->mu);
        sub->cv.wait(lock, [&] { return !sub->queue.empty() || sub->overflow || sub->closed; });
        if (sub->closed) break;
        if (sub->queue.empty()) {
            lock.unlock();
            const json gap{{"v", 1}, {"type", "gap"}, {"last_event_id", sent}};
            ws.write(net::buffer(gap.dump()), ec);
            break;
        }
        auto ev = std::move(sub->queue.front());
        sub->queue.pop_front();
        lock.unlock();
        if (ev.event_id <= sent) continue;
        ws.write(net::buffer(ev.to_json().dump()), ec);
        if (ec) break;
        sent = ev.event_id;
    }
    unregister();
    if (!ec) ws.close(websocket::close_code::normal, ec);
}

}  // namespace honeytrace::monitor
