#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "honeytrace/common/net.hpp"
#include "honeytrace/tracer/trace.hpp"

namespace honeytrace::sandbox {

/// Byte argument of a step. Most forms are resolved when the script is parsed; `env:` reads
/// the environment's file when the step runs.
struct ByteArg {
    Bytes bytes;
    std::string env_path;  // non-empty for env:<path>

    bool from_env() const { return !env_path.empty(); }
};

enum class StepKind { send, expect, exec, write_file, delete_file, connect_out, sleep, trace };
std::string_view to_string(StepKind k);

struct TraceOp {
    tracer::TraceKind kind = tracer::TraceKind::instruction;
    std::uint64_t address = 0;
    std::string detail;  // instruction text
    std::uint32_t size = 0;
    Bytes data;  // mem_write payload
};

struct Step {
    StepKind kind = StepKind::send;
    std::size_t line = 0;
    ByteArg bytes;     // send, expect, write_file, connect_out
    ByteArg reply;     // connect_out: server answer, may be empty
    std::string path;  // write_file, delete_file
    std::string command_line;
    Endpoint destination;
    std::chrono::milliseconds duration{0};
    std::vector<TraceOp> trace;
};

/// Scenario file, one step per line; `#` starts a comment.
///
///   send <bytes>                     attacker -> environment
///   expect <bytes>                   environment -> attacker
///   exec <command line...>           argv[0] is looked up in the environment (/bin, /usr/bin)
///   write_file <path> <bytes>
///   delete_file <path>
///   connect_out <ip:port> <bytes> [<reply bytes>]
///   sleep <ms>
///   trace                            instruction stream of the latest traced process
///     insn <addr> <text>
///     read <addr> <size>
///     write <addr> <bytes>
///   end
///
/// <bytes> is a quoted string with escapes, hex:<hexdigits>, file:<path relative to the
/// script>, or env:<path in the environment>. Addresses take 0x-prefixed hex or decimal.
struct AttackScript {
    std::string name;
    std::vector<Step> steps;

    static AttackScript parse(std::string_view text, const std::string& source = "<script>",
                              const std::filesystem::path& base_dir = {});
    static AttackScript load(const std::filesystem::path& path);
};

}  // namespace honeytrace::sandbox
