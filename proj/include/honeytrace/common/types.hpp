#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace honeytrace {

using Bytes = std::vector<std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(std::span<const std::uint8_t> b) { return std::string(b.begin(), b.end()); }

/// UTC wall time with microsecond precision.
struct Timestamp {
    std::int64_t micros = 0;

    std::int64_t seconds() const { return micros >= 0 ? micros / 1'000'000 : (micros - 999'999) / 1'000'000; }
    std::int64_t subsec_micros() const { return micros - seconds() * 1'000'000; }

    /// e.g. 2024-05-01T12:00:00.000123Z
    std::string iso8601() const;
    static Timestamp parse_iso8601(std::string_view text);

    friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

/// Calendar day (UTC) of a timestamp, formatted YYYY-MM-DD.
std::string utc_day(Timestamp ts);
/// [start, end) microsecond bounds of a YYYY-MM-DD day.
std::pair<Timestamp, Timestamp> utc_day_bounds(std::string_view day);

/// Wall clock anchored once and advanced by the steady clock, so readings never go backwards
/// within a process.
class Clock {
public:
    Clock();
    Timestamp now() const;

    static Clock& process();

private:
    std::int64_t wall_anchor_us_;
    std::chrono::steady_clock::time_point steady_anchor_;
    mutable std::mutex mu_;
    mutable std::int64_t last_ = 0;
};

/// Per-run unique ids of the form "<prefix>-<run nonce>-<counter>".
class IdGenerator {
public:
    explicit IdGenerator(std::string prefix);
    std::string next();

private:
    std::string prefix_;
    std::string nonce_;
    std::mutex mu_;
    std::uint64_t counter_ = 0;
};

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

}  // namespace honeytrace
