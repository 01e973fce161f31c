#include "honeytrace/common/types.hpp"

#include <cinttypes>
#include <cstdio>
#include <random>

namespace honeytrace {

namespace {

// Howard Hinnant's civil-date algorithms.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : (a - b + 1) / b; }

}  // namespace

std::string Timestamp::iso8601() const {
    const std::int64_t secs = seconds();
    const std::int64_t days = floor_div(secs, 86400);
    const std::int64_t rem = secs - days * 86400;
    std::int64_t y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04" PRId64 "-%02u-%02uT%02d:%02d:%02d.%06" PRId64 "Z", y, m, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60),
                  subsec_micros());
    return buf;
}

Timestamp Timestamp::parse_iso8601(std::string_view text) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char frac[16] = {0};
    const std::string copy(text);
    const int n = std::sscanf(copy.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u.%9[0-9]Z", &y, &mo, &d, &h, &mi, &s, frac);
    if (n < 6 || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60)
        throw Error("malformed timestamp: " + copy);
    std::int64_t micros = 0;
    if (n == 7) {
        std::string f(frac);
        f.resize(6, '0');
        micros = std::stoll(f);
    }
    const std::int64_t secs = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
    return Timestamp{secs * 1'000'000 + micros};
}

std::string utc_day(Timestamp ts) { return ts.iso8601().substr(0, 10); }

std::pair<Timestamp, Timestamp> utc_day_bounds(std::string_view day) {
    int y = 0;
    unsigned m = 0, d = 0;
    const std::string copy(day);
    char tail = 0;
    if (std::sscanf(copy.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 || m < 1 || m > 12 || d < 1 || d > 31)
        throw Error("malformed day (want YYYY-MM-DD): " + copy);
    const std::int64_t start = days_from_civil(y, m, d) * 86400LL * 1'000'000;
    return {Timestamp{start}, Timestamp{start + 86400LL * 1'000'000}};
}

Clock::Clock()
    : wall_anchor_us_(std::chrono::duration_cast<std::chrono::microseconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count()),
      steady_anchor_(std::chrono::steady_clock::now()) {}

Timestamp Clock::now() const {
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - steady_anchor_);
    std::lock_guard lock(mu_);
    last_ = std::max(last_, wall_anchor_us_ + elapsed.count());
    return Timestamp{last_};
}

Clock& Clock::process() {
    static Clock clock;
    return clock;
}

IdGenerator::IdGenerator(std::string prefix) : prefix_(std::move(prefix)) {
    std::random_device rd;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
    nonce_ = buf;
}

std::string IdGenerator::next() {
    std::uint64_t n;
    {
        std::lock_guard lock(mu_);
        n = ++counter_;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06" PRIu64, n);
    return prefix_ + "-" + nonce_ + "-" + buf;
}

}  // namespace honeytrace
