#include "honeytrace/netcap/pcap.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <unistd.h>

#include "honeytrace/common/fileio.hpp"

namespace honeytrace::netcap {

namespace {

void put_le16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v);
    p[1] = static_cast<std::uint8_t>(v >> 8);
}

void put_le32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_le32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

PcapWriter::PcapWriter(const std::filesystem::path& path, std::uint32_t snaplen) : snaplen_(snaplen) {
    fd_.reset(::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (!fd_) throw Error("cannot open capture sink " + path.string() + ": " + std::strerror(errno));
    std::array<std::uint8_t, kGlobalHeaderSize> hdr{};
    put_le32(hdr.data(), kPcapMagic);
    put_le16(hdr.data() + 4, kPcapVersionMajor);
    put_le16(hdr.data() + 6, kPcapVersionMinor);
    put_le32(hdr.data() + 8, 0);
    put_le32(hdr.data() + 12, 0);
    put_le32(hdr.data() + 16, snaplen_);
    put_le32(hdr.data() + 20, kLinkTypeRaw);
    write_all(hdr);
}

std::uint32_t PcapWriter::write(std::uint32_t ts_sec, std::uint32_t ts_usec, std::span<const std::uint8_t> frame,
                                std::uint32_t original_len) {
    const auto incl = static_cast<std::uint32_t>(std::min<std::size_t>(frame.size(), snaplen_));
    std::vector<std::uint8_t> rec(kRecordHeaderSize + incl);
    put_le32(rec.data(), ts_sec);
    put_le32(rec.data() + 4, ts_usec);
    put_le32(rec.data() + 8, incl);
    put_le32(rec.data() + 12, std::max(original_len, incl));
    std::memcpy(rec.data() + kRecordHeaderSize, frame.data(), incl);
    write_all(rec);
    return incl;
}

void PcapWriter::close() { fd_.reset(); }

void PcapWriter::write_all(std::span<const std::uint8_t> data) {
    if (!fd_) throw Error("capture sink closed");
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd_.get(), data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("capture write failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

PcapFile read_pcap(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < kGlobalHeaderSize) throw Error("pcap too short: " + path.string());
    if (get_le32(bytes.data()) != kPcapMagic) throw Error("not a little-endian microsecond pcap: " + path.string());
    PcapFile out;
    out.snaplen = get_le32(bytes.data() + 16);
    out.linktype = get_le32(bytes.data() + 20);
    std::size_t pos = kGlobalHeaderSize;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < kRecordHeaderSize) throw Error("truncated record header in " + path.string());
        PcapFileRecord rec;
        rec.ts_sec = get_le32(bytes.data() + pos);
        rec.ts_usec = get_le32(bytes.data() + pos + 4);
        const auto incl = get_le32(bytes.data() + pos + 8);
        rec.original_len = get_le32(bytes.data() + pos + 12);
        pos += kRecordHeaderSize;
        if (bytes.size() - pos < incl) throw Error("truncated record body in " + path.string());
        rec.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                        bytes.begin() + static_cast<std::ptrdiff_t>(pos + incl));
        pos += incl;
        out.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace honeytrace::netcap
