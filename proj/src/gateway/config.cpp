#include "honeytrace/gateway/config.hpp"

#include <charconv>
#include <cstdlib>
#include <map>
#include <set>

#include "honeytrace/common/fileio.hpp"
#include "honeytrace/common/lexer.hpp"

namespace honeytrace::gateway {

namespace {

std::uint64_t parse_uint(const std::string& s, std::uint64_t max, const std::string& source, std::size_t line) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || v > max)
        throw ParseError(source, line, "expected a number up to " + std::to_string(max) + ", got '" + s + "'");
    return v;
}

}  // namespace

const ServiceConfig* GatewayConfig::find_service(std::string_view name) const {
    for (const auto& s : services)
        if (s.name == name) return &s;
    return nullptr;
}

GatewayConfig parse_config(std::string_view text, const std::string& source, const std::filesystem::path& base_dir) {
    GatewayConfig cfg;
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };

    std::size_t line = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line;
        std::vector<Token> t;
        try {
            t = tokenize_line(raw);
        } catch (const Error& e) {
            throw ParseError(source, line, e.what());
        }
        if (t.empty()) continue;
        const auto& key = t[0].text;
        auto need = [&](std::size_t lo, std::size_t hi) {
            if (t.size() < lo || t.size() > hi) throw ParseError(source, line, "wrong number of arguments for '" + key + "'");
        };

        if (key == "listen") {
            need(2, 2);
            cfg.listen_address = t[1].text;
        } else if (key == "data_dir") {
            need(2, 2);
            cfg.data_dir = resolve(t[1].text);
        } else if (key == "template") {
            need(3, 3);
            cfg.templates.push_back({t[1].text, resolve(t[2].text)});
        } else if (key == "service") {
            if (t.size() != 4 && t.size() != 6) throw ParseError(source, line, "service <name> <port> <template> [banner <bytes>]");
            ServiceConfig s;
            s.name = t[1].text;
            const auto port = parse_uint(t[2].text, 65535, source, line);
            if (port == 0) throw ParseError(source, line, "port must be 1-65535");
            s.listen_port = static_cast<std::uint16_t>(port);
            s.template_id = t[3].text;
            if (t.size() == 6) {
                if (t[4].text != "banner") throw ParseError(source, line, "expected 'banner', got '" + t[4].text + "'");
                s.banner = to_bytes(t[5].text);
            }
            cfg.services.push_back(std::move(s));
        } else if (key == "pool") {
            need(2, 2);
            cfg.pool = parse_uint(t[1].text, 1024, source, line);
        } else if (key == "max_live") {
            need(2, 2);
            cfg.max_live = parse_uint(t[1].text, 100000, source, line);
            if (cfg.max_live == 0) throw ParseError(source, line, "max_live must be positive");
        } else if (key == "idle_timeout") {
            need(2, 2);
            cfg.idle_timeout = std::chrono::seconds(parse_uint(t[1].text, 86400 * 7, source, line));
        } else if (key == "monitor") {
            need(2, 3);
            cfg.monitor_port = static_cast<std::uint16_t>(parse_uint(t[1].text, 65535, source, line));
            if (t.size() == 3) cfg.monitor_address = t[2].text;
        } else if (key == "checkpoint") {
            need(2, 2);
            cfg.checkpoint = t[1].text;
        } else {
            throw ParseError(source, line, "unknown directive '" + key + "'");
        }
    }
    return cfg;
}

void validate_config(const GatewayConfig& cfg) {
    std::set<std::string> templates;
    for (const auto& t : cfg.templates)
        if (!templates.insert(t.template_id).second) throw ConfigError("template declared twice: " + t.template_id);
    std::map<std::uint16_t, std::string> ports;
    std::set<std::string> names;
    for (const auto& s : cfg.services) {
        if (!names.insert(s.name).second) throw ConfigError("service declared twice: " + s.name);
        if (const auto [it, fresh] = ports.emplace(s.listen_port, s.name); !fresh)
            throw ConfigError("port " + std::to_string(s.listen_port) + " used by both " + it->second + " and " + s.name);
        if (!templates.contains(s.template_id))
            throw ConfigError("service " + s.name + " references unknown template " + s.template_id);
    }
}

GatewayConfig load_config(const std::filesystem::path& path) {
    auto cfg = parse_config(read_text(path), path.string(), path.parent_path());
    validate_config(cfg);
    return cfg;
}

void apply_environment_overrides(GatewayConfig& config) {
    if (const char* v = std::getenv("HONEYTRACE_LISTEN"); v && *v) config.listen_address = v;
}

}  // namespace honeytrace::gateway
