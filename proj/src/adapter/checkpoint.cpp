// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "desta/adapter/train.hpp"
#include "desta/error.hpp"

namespace desta::adapter {

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.append(c, n);
    }
    void u32(std::uint32_t v) { le(v); }
    void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return buf_; }

private:
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }
    }
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}
    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(le<std::uint32_t>()); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw Error(ErrorKind::BadCheckpoint, "truncated at byte " + std::to_string(pos_));
        }
    }
    template <typename T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

std::uint64_t checksum(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace

std::string rng_state(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.u32(kCheckpointVersion);
    const AdapterDims dims = ckpt.params.dims();
    w.i32(dims.d);
    w.i32(dims.d_out);
    w.i32(dims.queries);
    w.i32(dims.blocks);
    w.i32(dims.heads);
    w.u32(static_cast<std::uint32_t>(ckpt.params.layer_ids.size()));
    for (int id : ckpt.params.layer_ids) {
        w.i32(id);
    }
    w.u64(ckpt.step);
    w.str(ckpt.rng_state);
    AdapterParams copy = ckpt.params;
    auto views = tensors(copy);
    w.u32(static_cast<std::uint32_t>(views.size()));
    for (const auto& v : views) {
        w.str(v.name);
        w.u64(v.size);
        for (std::size_t i = 0; i < v.size; ++i) {
            w.f64(v.data[i]);
        }
    }
    w.u64(checksum(w.data()));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
        if (!out) {
            throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < sizeof(kCheckpointMagic) + 8) {
        throw Error(ErrorKind::BadCheckpoint, path.string() + " is too short");
    }
    const std::string body = data.substr(0, data.size() - 8);
    const std::string stored = data.substr(body.size());
    if (Reader(stored).u64() != checksum(body)) {
        throw Error(ErrorKind::BadCheckpoint, path.string() + ": checksum mismatch");
    }

    Reader r(body);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error(ErrorKind::BadCheckpoint, path.string() + ": bad magic");
    }
    if (std::uint32_t version = r.u32(); version != kCheckpointVersion) {
        throw Error(ErrorKind::BadCheckpoint, "unsupported version " + std::to_string(version));
    }
    AdapterDims dims;
    dims.d = r.i32();
    dims.d_out = r.i32();
    dims.queries = r.i32();
    dims.blocks = r.i32();
    dims.heads = r.i32();
    std::vector<int> layer_ids(r.u32());
    for (auto& id : layer_ids) {
        id = r.i32();
    }
    Checkpoint ckpt;
    ckpt.step = r.u64();
    ckpt.rng_state = r.str();
    try {
        ckpt.params = init_adapter(dims, layer_ids, 0);
    } catch (const Error& e) {
        throw Error(ErrorKind::BadCheckpoint, std::string("invalid header: ") + e.what());
    }
    auto views = tensors(ckpt.params);
    if (r.u32() != views.size()) {
        throw Error(ErrorKind::BadCheckpoint, "tensor count does not match dimensions");
    }
    for (auto& v : views) {
        std::string name = r.str();
        std::uint64_t n = r.u64();
        if (name != v.name || n != v.size) {
            throw Error(ErrorKind::BadCheckpoint, "expected tensor " + v.name + " of " + std::to_string(v.size) +
                                                      " entries, found " + name + " of " + std::to_string(n));
        }
        for (std::size_t i = 0; i < v.size; ++i) {
            v.data[i] = r.f64();
        }
    }
    if (r.pos() != body.size()) {
        throw Error(ErrorKind::BadCheckpoint, "trailing bytes after tensors");
    }
    return ckpt;
}

} // namespace desta::adapter
