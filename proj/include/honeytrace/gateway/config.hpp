#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "honeytrace/common/types.hpp"

namespace honeytrace::gateway {

struct ServiceConfig {
    std::string name;
    std::uint16_t listen_port = 0;
    std::string template_id;
    Bytes banner;
};

struct TemplateRef {
    std::string template_id;
    std::filesystem::path dir;
};

/// Gateway configuration file, one directive per line; `#` starts a comment.
///
///   listen <address>                       default 0.0.0.0
///   data_dir <path>                        default ./honeytrace-data
///   template <id> <dir>                    environment template directory
///   service <name> <port> <template> [banner <bytes>]
///   pool <n>                               warm environments per template, default 1
///   max_live <n>                           default 64
///   idle_timeout <seconds>                 default 300
///   monitor <port> [<address>]             read API + feed; default address 127.0.0.1
///   checkpoint <endpoint>                  external dump daemon (unix:<path> or tcp:<host>:<port>);
///                                          without it an embedded daemon is started
///
/// Relative paths are resolved against the file's directory. Banner bytes are a quoted string.
struct GatewayConfig {
    std::string listen_address = "0.0.0.0";
    std::filesystem::path data_dir = "honeytrace-data";
    std::vector<TemplateRef> templates;
    std::vector<ServiceConfig> services;
    std::size_t pool = 1;
    std::size_t max_live = 64;
    std::chrono::seconds idle_timeout{300};
    std::optional<std::uint16_t> monitor_port;
    std::string monitor_address = "127.0.0.1";
    std::optional<std::string> checkpoint;

    const ServiceConfig* find_service(std::string_view name) const;
};

/// Rejected configuration: duplicate port or service name, or a service naming an undeclared template.
class ConfigError : public Error {
public:
    using Error::Error;
};

GatewayConfig parse_config(std::string_view text, const std::string& source = "<config>",
                           const std::filesystem::path& base_dir = {});
/// Parses and validates.
GatewayConfig load_config(const std::filesystem::path& path);
void validate_config(const GatewayConfig& config);

/// HONEYTRACE_LISTEN, when set, replaces the listen address.
void apply_environment_overrides(GatewayConfig& config);

}  // namespace honeytrace::gateway
