#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtc/common.hpp"
#include "qtc/io.hpp"
#include "qtc/nmt/model.hpp"

namespace qtc {

// Checkpoint container, little-endian throughout:
//   bytes 0-3   magic "QTCK"
//   u32         format version (currently 1)
//   u32         header length, then that many bytes of JSON holding the
//               model dimensions (sorted keys)
//   u32         tensor count
//   per tensor: u32 name length, name bytes, u32 ndims (always 2),
//               u32 rows, u32 cols, rows*cols float32 values, row-major
// Values are stored as float32; training math stays in double.
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'Q', 'T', 'C', 'K'};

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw SchemaError("checkpoint truncated reading " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in, const std::string& what) {
    const uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const TransformerParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kCheckpointMagic, 4);
    detail::write_u32(out, kCheckpointVersion);

    const nlohmann::json header = {
        {"n_layers", params.dims.n_layers}, {"d_model", params.dims.d_model},
        {"n_heads", params.dims.n_heads},   {"d_ff", params.dims.d_ff},
        {"src_vocab", params.dims.src_vocab}, {"tgt_vocab", params.dims.tgt_vocab},
        {"max_len", params.dims.max_len}};
    const std::string header_str = header.dump();
    detail::write_u32(out, static_cast<uint32_t>(header_str.size()));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    const std::vector<const Tensor*> tensors = params.tensors();
    detail::write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) {
        detail::write_u32(out, static_cast<uint32_t>(t->name.size()));
        out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
        detail::write_u32(out, 2);
        detail::write_u32(out, static_cast<uint32_t>(t->rows));
        detail::write_u32(out, static_cast<uint32_t>(t->cols));
        for (double v : t->v) detail::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw IoError("write failed: " + path);
}

inline TransformerParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw SchemaError("not a checkpoint file: " + path);
    const uint32_t version = detail::read_u32(in, "version");
    if (version != kCheckpointVersion)
        throw SchemaError("unsupported checkpoint version " + std::to_string(version));

    const uint32_t header_len = detail::read_u32(in, "header length");
    std::string header_str(header_len, '\0');
    if (!in.read(header_str.data(), header_len)) throw SchemaError("checkpoint truncated reading header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    ModelDims dims;
    try {
        dims.n_layers = header.at("n_layers").get<int>();
        dims.d_model = header.at("d_model").get<int>();
        dims.n_heads = header.at("n_heads").get<int>();
        dims.d_ff = header.at("d_ff").get<int>();
        dims.src_vocab = header.at("src_vocab").get<int>();
        dims.tgt_vocab = header.at("tgt_vocab").get<int>();
        dims.max_len = header.at("max_len").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint header is missing a dimension: ") + e.what());
    }

    TransformerParams params(dims);
    std::vector<Tensor*> tensors = params.tensors();
    const uint32_t count = detail::read_u32(in, "tensor count");
    if (count != tensors.size())
        throw SchemaError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(tensors.size()));

    for (Tensor* t : tensors) {
        const uint32_t name_len = detail::read_u32(in, "tensor name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw SchemaError("checkpoint truncated reading tensor name");
        if (name != t->name)
            throw SchemaError("checkpoint tensor '" + name + "' where '" + t->name + "' was expected");
        const uint32_t ndims = detail::read_u32(in, name + " ndims");
        if (ndims != 2) throw SchemaError("tensor " + name + " has ndims " + std::to_string(ndims));
        const uint32_t rows = detail::read_u32(in, name + " rows");
        const uint32_t cols = detail::read_u32(in, name + " cols");
        if (rows != t->rows || cols != t->cols)
            throw SchemaError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", model expects " + std::to_string(t->rows) + "x" +
                              std::to_string(t->cols));
        for (double& v : t->v) v = static_cast<double>(detail::read_f32(in, name + " values"));
    }
    return params;
}

}  // namespace qtc
