#pragma once

// Flat binary model checkpoint. All integers and floats little-endian.
//
//   magic         8 bytes  "BCURCKPT"
//   version       u32      1
//   input_size    u32      side length of the square views the model was trained on
//   tensor_count  u32
//   tensor_count entries:
//     name_len    u32, then name_len bytes of UTF-8
//     ndim        u32, then ndim x u32 dimensions
//     offset      u64      byte offset of the tensor inside the data section
//   data_bytes    u64
//   data          data_bytes of float32 values, tensors back to back
//
// Tensors appear in EncoderModel::parameters() order: conv{i}.weight
// [out, in, 3, 3], conv{i}.bias [out], rep.*, proj1.*, proj2.* (weights are
// [out, in]).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/nn.hpp"

namespace batchcur {

inline constexpr std::array<char, 8> kCheckpointMagic{'B', 'C', 'U', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    EncoderModel<float> model;
    int input_size = 32;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

    template <class U>
    U get(std::size_t entry, const char* what) {
        if (pos_ + sizeof(U) > bytes_.size()) throw FormatError(file_, entry, std::string("truncated ") + what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::string take(std::size_t n, std::size_t entry, const char* what) {
        if (pos_ + n > bytes_.size()) throw FormatError(file_, entry, std::string("truncated ") + what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t position() const noexcept { return pos_; }

private:
    const std::string& bytes_;
    std::string file_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const EncoderModel<float>& model, int input_size) {
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(input_size));
    const auto params = model.parameters();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    std::uint64_t offset = 0;
    for (const auto* p : params) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out += p->name;
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->shape.size()));
        for (int d : p->shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        detail::put_le<std::uint64_t>(out, offset);
        offset += p->size() * sizeof(float);
    }
    detail::put_le<std::uint64_t>(out, offset);
    for (const auto* p : params)
        for (float v : p->value) detail::put_f32(out, v);
    return out;
}

inline void save_checkpoint(const EncoderModel<float>& model, int input_size, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = serialize_checkpoint(model, input_size);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& file) {
    detail::ByteReader in(bytes, file);
    if (in.take(8, 0, "magic") != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
        throw FormatError(file, 0, "bad magic, not a checkpoint");
    const auto version = in.get<std::uint32_t>(0, "version");
    if (version != kCheckpointVersion) throw FormatError(file, 0, "unsupported version " + std::to_string(version));
    const auto input_size = in.get<std::uint32_t>(0, "input size");
    const auto count = in.get<std::uint32_t>(0, "tensor count");

    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto len = in.get<std::uint32_t>(i, "name length");
        e.name = in.take(len, i, "name");
        const auto ndim = in.get<std::uint32_t>(i, "rank");
        if (ndim > 8) throw FormatError(file, i, "implausible rank " + std::to_string(ndim));
        for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(in.get<std::uint32_t>(i, "dim")));
        e.offset = in.get<std::uint64_t>(i, "offset");
        table.push_back(std::move(e));
    }
    const auto data_bytes = in.get<std::uint64_t>(count, "data size");
    const std::size_t data_start = in.position();
    if (bytes.size() - data_start != data_bytes) throw FormatError(file, count, "data section size mismatch");

    auto find = [&](const std::string& name) -> const Entry* {
        for (const auto& e : table)
            if (e.name == name) return &e;
        return nullptr;
    };
    ModelConfig cfg;
    cfg.conv_channels.clear();
    for (int i = 0;; ++i) {
        const Entry* w = find("conv" + std::to_string(i) + ".weight");
        if (!w) break;
        if (w->shape.size() != 4) throw FormatError(file, i, w->name + " must be rank 4");
        if (i == 0) cfg.in_channels = w->shape[1];
        cfg.conv_channels.push_back(w->shape[0]);
    }
    auto out_dim = [&](const char* name) {
        const Entry* e = find(name);
        if (!e || e->shape.size() != 2) throw FormatError(file, count, std::string("missing or malformed ") + name);
        return e->shape[0];
    };
    cfg.rep_dim = out_dim("rep.weight");
    cfg.proj_hidden = out_dim("proj1.weight");
    cfg.proj_dim = out_dim("proj2.weight");
    try {
        cfg.validate();
    } catch (const ParameterError& e) {
        throw FormatError(file, count, e.what());
    }

    Checkpoint ck{EncoderModel<float>(cfg), static_cast<int>(input_size)};
    auto params = ck.model.parameters();
    if (params.size() != table.size()) throw FormatError(file, count, "unexpected tensor count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Entry& e = table[i];
        if (e.name != params[i]->name || e.shape != params[i]->shape)
            throw FormatError(file, i, "expected " + params[i]->name + shape_string(params[i]->shape) + ", found " +
                                           e.name + shape_string(e.shape));
        const std::uint64_t n = params[i]->size() * sizeof(float);
        if (e.offset + n > data_bytes) throw FormatError(file, i, "tensor data out of range");
        const char* src = bytes.data() + data_start + e.offset;
        for (std::size_t j = 0; j < params[i]->size(); ++j) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b)
                u |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * j + b])) << (8 * b);
            params[i]->value[j] = std::bit_cast<float>(u);
        }
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes, path.string());
}

}  // namespace batchcur
