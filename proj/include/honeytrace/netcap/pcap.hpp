#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "honeytrace/common/net.hpp"
#include "honeytrace/common/types.hpp"

namespace honeytrace::netcap {

// Classic libpcap file format, little-endian, microsecond timestamps.
//
// Global header (24 bytes):
//   u32 magic = 0xa1b2c3d4 | u16 version_major = 2 | u16 version_minor = 4
//   i32 thiszone = 0       | u32 sigfigs = 0      | u32 snaplen        | u32 linktype
// Record header (16 bytes), followed by incl_len bytes of frame:
//   u32 ts_sec | u32 ts_usec | u32 incl_len | u32 orig_len
inline constexpr std::uint32_t kPcapMagic = 0xa1b2c3d4;
inline constexpr std::uint16_t kPcapVersionMajor = 2;
inline constexpr std::uint16_t kPcapVersionMinor = 4;
/// LINKTYPE_RAW: each frame starts directly with an IPv4/IPv6 header.
inline constexpr std::uint32_t kLinkTypeRaw = 101;
inline constexpr std::uint32_t kDefaultSnaplen = 65535;
inline constexpr std::size_t kGlobalHeaderSize = 24;
inline constexpr std::size_t kRecordHeaderSize = 16;

/// Unbuffered pcap writer; every record reaches the OS before write() returns.
class PcapWriter {
public:
    /// Creates/truncates `path` and writes the global header.
    explicit PcapWriter(const std::filesystem::path& path, std::uint32_t snaplen = kDefaultSnaplen);

    /// Writes the record header and up to snaplen bytes of `frame`. Returns bytes captured.
    std::uint32_t write(std::uint32_t ts_sec, std::uint32_t ts_usec, std::span<const std::uint8_t> frame,
                        std::uint32_t original_len);
    void close();

    std::uint32_t snaplen() const { return snaplen_; }
    int fd() const { return fd_.get(); }

private:
    void write_all(std::span<const std::uint8_t> data);

    Fd fd_;
    std::uint32_t snaplen_;
};

struct PcapFileRecord {
    std::uint32_t ts_sec = 0;
    std::uint32_t ts_usec = 0;
    std::uint32_t original_len = 0;
    Bytes data;
};

struct PcapFile {
    std::uint32_t snaplen = 0;
    std::uint32_t linktype = 0;
    std::vector<PcapFileRecord> records;
};

/// Parses a classic little-endian microsecond pcap file. Throws on truncation or bad magic.
PcapFile read_pcap(const std::filesystem::path& path);

}  // namespace honeytrace::netcap
