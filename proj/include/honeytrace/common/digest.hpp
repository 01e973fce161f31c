#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace honeytrace {

/// Incremental SHA-512 (FIPS 180-4).
class Sha512 {
public:
    static constexpr std::size_t digest_size = 64;
    static constexpr std::size_t block_size = 128;

    Sha512();

    void update(std::span<const std::uint8_t> data);
    void update(std::string_view data);
    std::array<std::uint8_t, digest_size> finalize();

private:
    void compress(const std::uint8_t* block);

    std::array<std::uint64_t, 8> state_;
    std::array<std::uint8_t, block_size> buffer_{};
    std::size_t buffered_ = 0;
    std::uint64_t total_bytes_ = 0;
    bool finalized_ = false;
};

std::string to_hex(std::span<const std::uint8_t> bytes);

/// Fixed-size digest value with hex rendering and ordering.
template <std::size_t N>
struct DigestValue {
    std::array<std::uint8_t, N> bytes{};

    std::string hex() const { return to_hex(bytes); }

    static DigestValue from_hex(std::string_view text);

    friend bool operator==(const DigestValue&, const DigestValue&) = default;
    friend auto operator<=>(const DigestValue&, const DigestValue&) = default;
};

/// Full SHA-512 value; used for image whitelisting.
using Digest512 = DigestValue<64>;
/// SHA-512 truncated to 256 bits; used for content-addressed object ids.
using ObjectId = DigestValue<32>;

Digest512 sha512(std::span<const std::uint8_t> data);
Digest512 sha512(std::string_view data);
ObjectId object_id(std::span<const std::uint8_t> data);
ObjectId object_id(std::string_view data);

bool is_hex_digest(std::string_view text, std::size_t byte_len);

}  // namespace honeytrace
