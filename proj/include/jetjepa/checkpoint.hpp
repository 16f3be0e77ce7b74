// Versioned checkpoint container: canonical parameter path strings mapped to
// shape-tagged little-endian arrays, with a key/value header that records the
// run configuration and training step.
//
//   magic   "JJCP1" (weights, f32 arrays) or "JJTS1" (train state, f64)
//   u64     training step
//   u32     number of header entries, each: u32 klen, key, u32 vlen, value
//   u32     number of arrays, each: u32 nlen, name, u8 dtype (0=f32, 1=f64),
//           u32 rows, u32 cols, rows*cols little-endian values
//
// Weight checkpoints are the public artifact (f32 keeps them compact and
// stable); the train-state file keeps full f64 precision plus optimizer
// moments so an interrupted run continues bit-exactly.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "jetjepa/params.hpp"

namespace jetjepa {

inline const char kCheckpointMagic[5] = {'J', 'J', 'C', 'P', '1'};
inline const char kTrainStateMagic[5] = {'J', 'J', 'T', 'S', '1'};

using MetaMap = std::map<std::string, std::string>;

namespace detail {

inline void put_u32ck(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64ck(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32ck(out, static_cast<uint32_t>(s.size()));
    out += s;
}

inline void put_array(std::string& out, const std::string& name, const Mat& m, bool f32) {
    put_str(out, name);
    out.push_back(f32 ? '\0' : '\1');
    put_u32ck(out, static_cast<uint32_t>(m.rows));
    put_u32ck(out, static_cast<uint32_t>(m.cols));
    if (f32) {
        for (double d : m.v) {
            const float f = static_cast<float>(d);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32ck(out, bits);
        }
    } else {
        for (double d : m.v) {
            uint64_t bits;
            std::memcpy(&bits, &d, 8);
            put_u64ck(out, bits);
        }
    }
}

class CkReader {
public:
    CkReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    uint32_t u32() {
        check(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        check(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    uint8_t u8() {
        check(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    std::string str() {
        const uint32_t n = u32();
        check(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    Mat array(uint8_t dtype, uint32_t rows, uint32_t cols) {
        Mat m(static_cast<int>(rows), static_cast<int>(cols));
        if (dtype == 0) {
            for (auto& d : m.v) {
                const uint32_t bits = u32();
                float f;
                std::memcpy(&f, &bits, 4);
                d = static_cast<double>(f);
            }
        } else {
            for (auto& d : m.v) {
                const uint64_t bits = u64();
                std::memcpy(&d, &bits, 8);
            }
        }
        return m;
    }

    void magic(const char expect[5]) {
        check(5);
        if (std::memcmp(data_.data() + pos_, expect, 5) != 0)
            fail(path_ + ": bad magic at offset 0");
        pos_ += 5;
    }

    bool at_end() const { return pos_ == data_.size(); }
    size_t offset() const { return pos_; }

    [[noreturn]] void corrupt(const std::string& what) {
        fail(path_ + ": corrupt checkpoint (" + what + ") at offset " + std::to_string(pos_));
    }

private:
    void check(size_t n) {
        if (pos_ + n > data_.size())
            fail(path_ + ": corrupt checkpoint (truncated) at offset " + std::to_string(pos_));
    }

    const std::string& data_;
    std::string path_;
    size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

// write-temp-then-rename keeps checkpoint writes atomic
inline void atomic_write(const std::string& path, const std::string& data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(tmp + ": cannot open file for writing");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) fail(tmp + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(path + ": rename failed: " + ec.message());
}

inline std::string serialize_container(const char magic[5], const ParamStore& store, uint64_t step,
                                       const MetaMap& meta, bool f32,
                                       const std::map<std::string, Mat>* extra = nullptr) {
    std::string out;
    out.append(magic, 5);
    put_u64ck(out, step);
    put_u32ck(out, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        put_str(out, k);
        put_str(out, v);
    }
    uint32_t count = static_cast<uint32_t>(store.entries().size());
    if (extra) count += static_cast<uint32_t>(extra->size());
    put_u32ck(out, count);
    for (const auto& [name, e] : store.entries()) put_array(out, name, e.value, f32);
    if (extra)
        for (const auto& [name, m] : *extra) put_array(out, name, m, f32);
    return out;
}

struct Container {
    uint64_t step = 0;
    MetaMap meta;
    std::map<std::string, Mat> arrays;
};

inline Container parse_container(const char magic[5], const std::string& data,
                                 const std::string& path) {
    CkReader r(data, path);
    r.magic(magic);
    Container c;
    c.step = r.u64();
    const uint32_t n_meta = r.u32();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        c.meta[k] = r.str();
    }
    const uint32_t n_arrays = r.u32();
    for (uint32_t i = 0; i < n_arrays; ++i) {
        std::string name = r.str();
        const uint8_t dtype = r.u8();
        if (dtype > 1) r.corrupt("unknown dtype tag for " + name);
        const uint32_t rows = r.u32();
        const uint32_t cols = r.u32();
        if (rows == 0 || cols == 0 || static_cast<uint64_t>(rows) * cols > (1u << 28))
            r.corrupt("implausible shape for " + name);
        c.arrays[name] = r.array(dtype, rows, cols);
    }
    if (!r.at_end()) r.corrupt("trailing bytes");
    return c;
}

} // namespace detail

// --- weight checkpoints (f32) -------------------------------------------------

inline void save_checkpoint(const std::string& path, const ParamStore& store, uint64_t step,
                            const MetaMap& meta) {
    detail::atomic_write(path, detail::serialize_container(kCheckpointMagic, store, step, meta, true));
}

struct Checkpoint {
    uint64_t step = 0;
    MetaMap meta;
    ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    auto c = detail::parse_container(kCheckpointMagic, detail::slurp(path), path);
    Checkpoint ck;
    ck.step = c.step;
    ck.meta = std::move(c.meta);
    for (auto& [name, m] : c.arrays) ck.params.add(name, std::move(m), false);
    return ck;
}

// --- full-precision train state -----------------------------------------------

struct TrainStateFile {
    uint64_t step = 0;
    MetaMap meta;
    ParamStore params;
    std::map<std::string, Mat> adam_m1;
    std::map<std::string, Mat> adam_m2;
    int64_t adam_t = 0;
};

inline void save_train_state(const std::string& path, const ParamStore& store,
                             const AdamOptimizer& opt, uint64_t step, MetaMap meta) {
    meta["adam_t"] = std::to_string(opt.step_count());
    std::map<std::string, Mat> extra;
    for (const auto& [name, m] : opt.m1()) extra["adam.m1." + name] = m;
    for (const auto& [name, m] : opt.m2()) extra["adam.m2." + name] = m;
    detail::atomic_write(path, detail::serialize_container(kTrainStateMagic, store, step, meta,
                                                           false, &extra));
}

inline TrainStateFile load_train_state(const std::string& path) {
    auto c = detail::parse_container(kTrainStateMagic, detail::slurp(path), path);
    TrainStateFile ts;
    ts.step = c.step;
    ts.meta = std::move(c.meta);
    for (auto& [name, m] : c.arrays) {
        if (name.rfind("adam.m1.", 0) == 0)
            ts.adam_m1[name.substr(8)] = std::move(m);
        else if (name.rfind("adam.m2.", 0) == 0)
            ts.adam_m2[name.substr(8)] = std::move(m);
        else
            ts.params.add(name, std::move(m), false);
    }
    auto it = ts.meta.find("adam_t");
    if (it != ts.meta.end()) ts.adam_t = std::stoll(it->second);
    return ts;
}

} // namespace jetjepa
