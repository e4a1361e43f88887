#pragma once

// Versioned binary container for named tensors. Used standalone for exported
// blobs (codebook, centroids, projection, embedding init) and as the payload
// format inside training checkpoints.
//
// Layout, little-endian:
//   8  bytes  magic "ULMBLOB1"
//   u32       format version (1)
//   u32       kind string length, then bytes
//   u32       metadata JSON length, then bytes
//   u32       tensor count
//   per tensor:
//     u32 name length, name bytes
//     u8  dtype (0 = float32, 1 = float64, 2 = int32, 3 = uint64)
//     u8  rank (1 or 2)
//     u64 rows, u64 cols (cols = 1 for rank 1)
//     u64 payload byte count, payload
//   u32       CRC-32 of everything above
//
// Loaders read the whole file, verify the CRC before parsing, and report
// distinct error codes for bad magic, version mismatch, truncation, and
// checksum failure. No partially constructed result ever escapes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitlm/common.hpp"
#include "unitlm/linalg.hpp"

namespace unitlm {

namespace archive_detail {
inline void check_little_endian() {
    const uint32_t probe = 1;
    require(*reinterpret_cast<const unsigned char*>(&probe) == 1, ErrorCode::format,
            "archive: container format requires a little-endian host");
}
}  // namespace archive_detail

class Archive {
public:
    static constexpr char kMagic[9] = "ULMBLOB1";
    static constexpr uint32_t kVersion = 1;

    std::string kind;
    nlohmann::json metadata = nlohmann::json::object();

    void put_f32(const std::string& name, const MatF& m) { f32_[name] = m; order_.push_back({name, 0}); }
    void put_f64(const std::string& name, const MatD& m) { f64_[name] = m; order_.push_back({name, 1}); }
    void put_i32(const std::string& name, const std::vector<int32_t>& v) { i32_[name] = v; order_.push_back({name, 2}); }
    void put_u64(const std::string& name, const std::vector<uint64_t>& v) { u64_[name] = v; order_.push_back({name, 3}); }

    bool has(const std::string& name) const {
        return f32_.count(name) || f64_.count(name) || i32_.count(name) || u64_.count(name);
    }

    const MatF& get_f32(const std::string& name) const { return fetch(f32_, name, "float32"); }
    const MatD& get_f64(const std::string& name) const { return fetch(f64_, name, "float64"); }
    const std::vector<int32_t>& get_i32(const std::string& name) const { return fetch(i32_, name, "int32"); }
    const std::vector<uint64_t>& get_u64(const std::string& name) const { return fetch(u64_, name, "uint64"); }

    std::string serialize() const {
        archive_detail::check_little_endian();
        std::string buf;
        buf.append(kMagic, 8);
        append_raw<uint32_t>(buf, kVersion);
        append_str(buf, kind);
        append_str(buf, metadata.dump());
        append_raw<uint32_t>(buf, uint32_t(order_.size()));
        for (const auto& [name, dtype] : order_) {
            append_str(buf, name);
            append_raw<uint8_t>(buf, dtype);
            switch (dtype) {
                case 0: append_mat(buf, f32_.at(name)); break;
                case 1: append_mat(buf, f64_.at(name)); break;
                case 2: append_vec(buf, i32_.at(name)); break;
                case 3: append_vec(buf, u64_.at(name)); break;
            }
        }
        append_raw<uint32_t>(buf, crc32(buf.data(), buf.size()));
        return buf;
    }

    void save(const std::string& path) const { write_file_bytes(path, serialize()); }

    static Archive deserialize(std::string_view buf) {
        archive_detail::check_little_endian();
        require(buf.size() >= 16, ErrorCode::format, "archive: file too small");
        require(std::string_view(buf.data(), 8) == std::string_view(kMagic, 8), ErrorCode::format,
                "archive: bad magic");
        uint32_t stored_crc;
        std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
        uint32_t actual_crc = crc32(buf.data(), buf.size() - 4);
        require(stored_crc == actual_crc, ErrorCode::checksum, "archive: CRC mismatch");

        size_t off = 8;
        uint32_t version = read_raw<uint32_t>(buf, off);
        require(version == kVersion, ErrorCode::version_mismatch,
                "archive: unsupported version " + std::to_string(version));
        Archive a;
        a.kind = read_str(buf, off);
        std::string meta = read_str(buf, off);
        a.metadata = nlohmann::json::parse(meta, nullptr, false);
        require(!a.metadata.is_discarded(), ErrorCode::format, "archive: bad metadata JSON");
        uint32_t count = read_raw<uint32_t>(buf, off);
        for (uint32_t i = 0; i < count; ++i) {
            std::string name = read_str(buf, off);
            uint8_t dtype = read_raw<uint8_t>(buf, off);
            uint8_t rank = read_raw<uint8_t>(buf, off);
            uint64_t rows = read_raw<uint64_t>(buf, off);
            uint64_t cols = read_raw<uint64_t>(buf, off);
            uint64_t nbytes = read_raw<uint64_t>(buf, off);
            require(off + nbytes <= buf.size() - 4, ErrorCode::format, "archive: truncated payload");
            const char* p = buf.data() + off;
            off += nbytes;
            (void)rank;
            switch (dtype) {
                case 0: {
                    require(nbytes == rows * cols * 4, ErrorCode::format, "archive: f32 size mismatch");
                    MatF m;
                    m.resize(Eigen::Index(rows), Eigen::Index(cols));
                    std::memcpy(m.data(), p, nbytes);
                    a.put_f32(name, m);
                    break;
                }
                case 1: {
                    require(nbytes == rows * cols * 8, ErrorCode::format, "archive: f64 size mismatch");
                    MatD m;
                    m.resize(Eigen::Index(rows), Eigen::Index(cols));
                    std::memcpy(m.data(), p, nbytes);
                    a.put_f64(name, m);
                    break;
                }
                case 2: {
                    require(cols == 1 && nbytes == rows * 4, ErrorCode::format, "archive: i32 size mismatch");
                    std::vector<int32_t> v(rows);
                    std::memcpy(v.data(), p, nbytes);
                    a.put_i32(name, v);
                    break;
                }
                case 3: {
                    require(cols == 1 && nbytes == rows * 8, ErrorCode::format, "archive: u64 size mismatch");
                    std::vector<uint64_t> v(rows);
                    std::memcpy(v.data(), p, nbytes);
                    a.put_u64(name, v);
                    break;
                }
                default:
                    fail(ErrorCode::format, "archive: unknown dtype " + std::to_string(dtype));
            }
        }
        return a;
    }

    static Archive load(const std::string& path, const std::string& expect_kind = "") {
        Archive a = deserialize(read_file_bytes(path));
        if (!expect_kind.empty())
            require(a.kind == expect_kind, ErrorCode::format,
                    path + ": archive kind '" + a.kind + "', expected '" + expect_kind + "'");
        return a;
    }

private:
    template <class M>
    static const M& fetch(const std::map<std::string, M>& m, const std::string& name,
                          const char* dtype) {
        auto it = m.find(name);
        require(it != m.end(), ErrorCode::format,
                std::string("archive: missing ") + dtype + " tensor '" + name + "'");
        return it->second;
    }

    static void append_str(std::string& buf, const std::string& s) {
        append_raw<uint32_t>(buf, uint32_t(s.size()));
        buf.append(s);
    }

    static std::string read_str(std::string_view buf, size_t& off) {
        uint32_t n = read_raw<uint32_t>(buf, off);
        require(off + n <= buf.size(), ErrorCode::format, "archive: truncated string");
        std::string s(buf.data() + off, n);
        off += n;
        return s;
    }

    template <class T>
    static void append_mat(std::string& buf, const Mat<T>& m) {
        append_raw<uint8_t>(buf, 2);
        append_raw<uint64_t>(buf, uint64_t(m.rows()));
        append_raw<uint64_t>(buf, uint64_t(m.cols()));
        uint64_t nbytes = uint64_t(m.size()) * sizeof(T);
        append_raw<uint64_t>(buf, nbytes);
        buf.append(reinterpret_cast<const char*>(m.data()), nbytes);
    }

    template <class T>
    static void append_vec(std::string& buf, const std::vector<T>& v) {
        append_raw<uint8_t>(buf, 1);
        append_raw<uint64_t>(buf, uint64_t(v.size()));
        append_raw<uint64_t>(buf, 1);
        uint64_t nbytes = uint64_t(v.size()) * sizeof(T);
        append_raw<uint64_t>(buf, nbytes);
        buf.append(reinterpret_cast<const char*>(v.data()), nbytes);
    }

    std::map<std::string, MatF> f32_;
    std::map<std::string, MatD> f64_;
    std::map<std::string, std::vector<int32_t>> i32_;
    std::map<std::string, std::vector<uint64_t>> u64_;
    std::vector<std::pair<std::string, uint8_t>> order_;
};

}  // namespace unitlm
