#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "aima/model.hpp"

namespace aima {

// Checkpoint layout (all integers little-endian):
//   magic "AIMA" | u32 format version | config block | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 rows, u32 cols, f32 data
// Config block: u32 layers, heads, dim, visual_vocab, text_vocab, max_rows,
// max_cols, max_query_len; u64 seed; u32 factor count + factor dims;
// u32 factor base; u32 tie-text flag.
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const std::string& buf) : buf_(buf) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf_[pos_ + std::size_t(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + std::size_t(i)])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool exhausted() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) {
        require(pos_ + n <= buf_.size(), ErrorClass::format, "checkpoint truncated");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path) {
    std::string out;
    out += "AIMA";
    detail::put_u32(out, kCheckpointVersion);
    const ModelConfig& c = model.config;
    for (int v : {c.layers, c.heads, c.dim, c.visual_vocab, c.text_vocab, c.max_rows, c.max_cols,
                  c.max_query_len})
        detail::put_u32(out, std::uint32_t(v));
    detail::put_u64(out, c.seed);
    detail::put_u32(out, std::uint32_t(c.visual_factors.size()));
    for (int f : c.visual_factors) detail::put_u32(out, std::uint32_t(f));
    detail::put_u32(out, std::uint32_t(c.visual_factor_base));
    detail::put_u32(out, c.tie_text_factors ? 1 : 0);
    detail::put_u32(out, std::uint32_t(model.params.size()));
    for (const auto& [name, t] : model.params) {
        detail::put_u32(out, std::uint32_t(name.size()));
        out += name;
        detail::put_u32(out, std::uint32_t(t.rows));
        detail::put_u32(out, std::uint32_t(t.cols));
        for (double v : t.data) detail::put_f32(out, float(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(bool(f), ErrorClass::io, "cannot open checkpoint for writing: " + path);
    f.write(out.data(), std::streamsize(out.size()));
    require(bool(f), ErrorClass::io, "short write to checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), ErrorClass::io, "cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::Reader r(buf);

    require(r.bytes(4) == "AIMA", ErrorClass::format, "bad checkpoint magic");
    std::uint32_t version = r.u32();
    require(version == kCheckpointVersion, ErrorClass::format,
            "unsupported checkpoint version " + std::to_string(version));

    ModelConfig c;
    c.layers = int(r.u32());
    c.heads = int(r.u32());
    c.dim = int(r.u32());
    c.visual_vocab = int(r.u32());
    c.text_vocab = int(r.u32());
    c.max_rows = int(r.u32());
    c.max_cols = int(r.u32());
    c.max_query_len = int(r.u32());
    c.seed = r.u64();
    std::uint32_t nf = r.u32();
    require(nf <= 16, ErrorClass::format, "implausible factor count in checkpoint");
    for (std::uint32_t i = 0; i < nf; ++i) c.visual_factors.push_back(int(r.u32()));
    c.visual_factor_base = int(r.u32());
    c.tie_text_factors = r.u32() != 0;
    c.validate();

    Model model = init_model(c);  // establishes the expected tensor table
    std::uint32_t count = r.u32();
    require(count == model.params.size(), ErrorClass::format,
            "checkpoint tensor count mismatch");
    std::vector<bool> seen(model.params.size(), false);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        auto it = model.index.find(name);
        require(it != model.index.end(), ErrorClass::format, "unknown tensor in checkpoint: " + name);
        require(!seen[std::size_t(it->second)], ErrorClass::format, "duplicate tensor: " + name);
        seen[std::size_t(it->second)] = true;
        Tensor& t = model.params[std::size_t(it->second)].second;
        int rows = int(r.u32()), cols = int(r.u32());
        require(rows == t.rows && cols == t.cols, ErrorClass::format,
                "tensor shape mismatch for " + name);
        for (double& v : t.data) v = double(r.f32());
    }
    require(r.exhausted(), ErrorClass::format, "trailing bytes in checkpoint");
    return model;
}

}  // namespace aima
