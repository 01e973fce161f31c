#include "support.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "honeytrace/tracer/trace.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace honeytrace::testing {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

TempDir::TempDir() {
    std::string pattern = (fs::temp_directory_path() / "honeytrace-test-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path source_dir() { return HONEYTRACE_SOURCE_DIR; }
fs::path template_dir() { return source_dir() / "templates" / "linux-basic"; }
fs::path scenario(const std::string& name) { return source_dir() / "scenarios" / name; }

Bytes slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::uint8_t> reference_sha512(const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> out(EVP_MAX_MD_SIZE);
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha512(), nullptr) != 1)
        throw std::runtime_error("EVP_Digest failed");
    out.resize(len);
    return out;
}

std::string hex(const std::vector<std::uint8_t>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (auto b : bytes) {
        s += digits[b >> 4];
        s += digits[b & 15];
    }
    return s;
}

std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& dir) {
    std::map<std::string, std::vector<std::uint8_t>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out["/" + fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
    return out;
}

std::string reference_tree_digest(const std::map<std::string, std::vector<std::uint8_t>>& tree) {
    std::string text;
    for (const auto& [path, bytes] : tree) {
        auto d = reference_sha512(bytes);
        d.resize(32);
        text += hex(d) + " " + path + "\n";
    }
    auto d = reference_sha512(std::vector<std::uint8_t>(text.begin(), text.end()));
    d.resize(32);
    return hex(d);
}

namespace {

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return std::uint32_t(b[off]) | std::uint32_t(b[off + 1]) << 8 | std::uint32_t(b[off + 2]) << 16 |
           std::uint32_t(b[off + 3]) << 24;
}
std::uint16_t le16(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | b[off + 1] << 8);
}
std::uint16_t be16(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] << 8 | b[off + 1]);
}

std::uint16_t ones_complement(const std::vector<std::uint8_t>& data, std::uint32_t sum = 0) {
    for (std::size_t i = 0; i + 1 < data.size(); i += 2) sum += be16(data, i);
    if (data.size() % 2) sum += std::uint32_t(data.back()) << 8;
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

std::string dotted(const std::vector<std::uint8_t>& b, std::size_t off) {
    return std::to_string(b[off]) + "." + std::to_string(b[off + 1]) + "." + std::to_string(b[off + 2]) + "." +
           std::to_string(b[off + 3]);
}

}  // namespace

RefPcap reference_parse_pcap(const std::vector<std::uint8_t>& file) {
    if (file.size() < 24) throw std::runtime_error("short global header");
    RefPcap p;
    p.magic = le32(file, 0);
    if (p.magic != 0xa1b2c3d4) throw std::runtime_error("unexpected magic");
    p.version_major = le16(file, 4);
    p.version_minor = le16(file, 6);
    p.thiszone = static_cast<std::int32_t>(le32(file, 8));
    p.sigfigs = le32(file, 12);
    p.snaplen = le32(file, 16);
    p.network = le32(file, 20);
    std::size_t off = 24;
    while (off < file.size()) {
        if (file.size() - off < 16) throw std::runtime_error("short record header");
        RefPcapRecord r;
        r.ts_sec = le32(file, off);
        r.ts_usec = le32(file, off + 4);
        r.incl_len = le32(file, off + 8);
        r.orig_len = le32(file, off + 12);
        off += 16;
        if (r.ts_usec >= 1000000) throw std::runtime_error("usec out of range");
        if (r.incl_len > p.snaplen || r.incl_len > r.orig_len) throw std::runtime_error("bad incl_len");
        if (file.size() - off < r.incl_len) throw std::runtime_error("short record body");
        r.data.assign(file.begin() + static_cast<std::ptrdiff_t>(off),
                      file.begin() + static_cast<std::ptrdiff_t>(off + r.incl_len));
        off += r.incl_len;
        p.records.push_back(std::move(r));
    }
    return p;
}

std::optional<RefTcp> reference_decode_tcp(const std::vector<std::uint8_t>& f) {
    if (f.size() < 40 || (f[0] >> 4) != 4 || f[9] != 6) return std::nullopt;
    const std::size_t ihl = (f[0] & 15) * 4u;
    const std::size_t total = be16(f, 2);
    if (total > f.size() || total < ihl + 20) return std::nullopt;
    RefTcp t;
    t.src = dotted(f, 12);
    t.dst = dotted(f, 16);
    t.ip_checksum_ok = ones_complement(std::vector<std::uint8_t>(f.begin(), f.begin() + static_cast<long>(ihl))) == 0;
    const std::vector<std::uint8_t> seg(f.begin() + static_cast<long>(ihl), f.begin() + static_cast<long>(total));
    t.sport = be16(seg, 0);
    t.dport = be16(seg, 2);
    t.flags = seg[13];
    const std::size_t doff = (seg[12] >> 4) * 4u;
    t.payload.assign(seg.begin() + static_cast<long>(doff), seg.end());
    std::uint32_t pseudo = 0;
    pseudo += be16(f, 12) + be16(f, 14) + be16(f, 16) + be16(f, 18);
    pseudo += 6;
    pseudo += static_cast<std::uint32_t>(seg.size());
    t.tcp_checksum_ok = ones_complement(seg, pseudo) == 0;
    return t;
}

void LoopbackChannel::send(const checkpointd::DumpRequest& request) {
    const auto fault = plan_ ? plan_(sent) : Fault::none;
    ++sent;
    if (fault == Fault::unreachable) throw Error("loopback: daemon unreachable");
    dump_ticks.push_back(tracer::protocol_tick());
    auto out = daemon_.handle_dump(request);
    if (fault == Fault::drop) return;
    if (fault == Fault::stray_first) {
        auto stray = out.notice;
        stray.request_id = request.request_id + 1'000'000'000ull;
        inbox_.push_back(stray);
    }
    inbox_.push_back(std::move(out.notice));
}

std::optional<checkpointd::CompletionNotice> LoopbackChannel::receive(std::chrono::milliseconds) {
    if (inbox_.empty()) return std::nullopt;
    auto n = std::move(inbox_.front());
    inbox_.pop_front();
    return n;
}

struct FeedClient::Impl {
    net::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};
    std::chrono::microseconds delay{0};
    std::chrono::milliseconds stall{0};
    std::thread reader;
    mutable std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> queue;
    std::atomic<std::size_t> received{0};
    bool done = false;
};

FeedClient::FeedClient(std::uint16_t port, const std::string& target, std::chrono::microseconds delay,
                       std::chrono::milliseconds stall)
    : impl_(std::make_unique<Impl>()) {
    impl_->delay = delay;
    impl_->stall = stall;
    tcp::resolver resolver(impl_->ioc);
    net::connect(impl_->ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    impl_->ws.handshake("127.0.0.1:" + std::to_string(port), target);
    impl_->reader = std::thread([impl = impl_.get()] {
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            impl->ws.read(buf, ec);
            if (ec) break;
            {
                std::lock_guard lock(impl->mu);
                impl->queue.push_back(beast::buffers_to_string(buf.data()));
                ++impl->received;
            }
            impl->cv.notify_all();
            if (impl->delay.count() > 0) std::this_thread::sleep_for(impl->delay);
            if (impl->stall.count() > 0) std::this_thread::sleep_for(std::exchange(impl->stall, {}));
        }
        std::lock_guard lock(impl->mu);
        impl->done = true;
        impl->cv.notify_all();
    });
}

FeedClient::~FeedClient() { close(); }

std::optional<std::string> FeedClient::next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait_for(lock, timeout, [&] { return !impl_->queue.empty() || impl_->done; });
    if (impl_->queue.empty()) return std::nullopt;
    auto msg = std::move(impl_->queue.front());
    impl_->queue.pop_front();
    return msg;
}

bool FeedClient::finished() const {
    std::lock_guard lock(impl_->mu);
    return impl_->done && impl_->queue.empty();
}

std::size_t FeedClient::received() const { return impl_->received; }

void FeedClient::close() {
    if (!impl_ || !impl_->reader.joinable()) return;
    beast::error_code ec;
    impl_->ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    impl_->reader.join();
    impl_->ws.next_layer().close(ec);
}

HttpReply http_get(std::uint16_t port, const std::string& target) {
    net::io_context ioc;
    tcp::socket sock(ioc);
    tcp::resolver resolver(ioc);
    net::connect(sock, resolver.resolve("127.0.0.1", std::to_string(port)));
    http::request<http::string_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    req.keep_alive(false);
    http::write(sock, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(sock, buf, res);
    beast::error_code ec;
    sock.shutdown(tcp::socket::shutdown_both, ec);
    HttpReply out;
    out.status = static_cast<int>(res.result_int());
    out.body = res.body();
    out.content_type = std::string(res[http::field::content_type]);
    out.allow_origin = std::string(res[http::field::access_control_allow_origin]);
    return out;
}

}  // namespace honeytrace::testing
