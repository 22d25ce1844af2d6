/**
 * @file   checkpoint.hpp
 * @brief  Binary checkpoint container and the model bundle stored in it.
 *
 * Layout, all integers little-endian:
 *
 *     "GWAI"  u32 version
 *     u32 n   n bytes of UTF-8 JSON  {"arch": {...}, "meta": {...}}
 *     u32 count
 *     count x { u32 n, n bytes name, u8 dtype (0 f32, 1 f64), u8 rank,
 *               rank x u64 dim, values }
 *     u32 CRC-32 of every preceding byte
 *
 * decode() followed by encode() reproduces the input exactly.
 */
#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arch.hpp"
#include "image_io.hpp"
#include "networks.hpp"
#include "params.hpp"
#include "synthdata.hpp"

namespace gwai {

class CheckpointError : public IoError {
public:
    using IoError::IoError;
};

inline constexpr char kCheckpointMagic[4] = {'G', 'W', 'A', 'I'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

inline std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

/// One stored tensor with its values kept as raw little-endian bytes.
struct StoredTensor {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::vector<std::uint8_t> bytes;

    template <class T>
    static StoredTensor from(std::string name, const Tensor<T>& t) {
        StoredTensor s{std::move(name), dtype_of<T>(), t.shape(), {}};
        s.bytes.reserve(t.numel() * sizeof(T));
        for (T v : t.data()) {
            using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
            const auto u = std::bit_cast<U>(v);
            for (std::size_t b = 0; b < sizeof(T); ++b) s.bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
        }
        return s;
    }

    /// Values converted to T.
    template <class T>
    Tensor<T> to_tensor() const {
        const std::size_t n = numel_of(shape), w = dtype_size(dtype);
        std::vector<T> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t u = 0;
            for (std::size_t b = 0; b < w; ++b) u |= static_cast<std::uint64_t>(bytes[i * w + b]) << (8 * b);
            v[i] = dtype == DType::F32 ? static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(u)))
                                       : static_cast<T>(std::bit_cast<double>(u));
        }
        return Tensor<T>(shape, std::move(v));
    }
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_json;
    std::vector<StoredTensor> tensors;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
    }
    void str(const std::string& s) {
        if (s.size() > UINT32_MAX) throw ValidationError("checkpoint string too long");
        le(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

    const std::uint8_t* take(std::size_t k) {
        if (k > n_ - pos_) throw CheckpointError("checkpoint truncated");
        const auto* r = p_ + pos_;
        pos_ += k;
        return r;
    }
    template <class U>
    U le() {
        const auto* b = take(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return static_cast<U>(v);
    }
    std::string str() {
        const auto n = le<std::uint32_t>();
        const auto* b = take(n);
        return {reinterpret_cast<const char*>(b), n};
    }
    std::size_t remaining() const { return n_ - pos_; }

private:
    const std::uint8_t* p_;
    std::size_t n_, pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.le(c.version);
    w.str(c.config_json);
    w.le(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        if (t.shape.size() > 255) throw ValidationError("tensor rank above 255: " + t.name);
        if (t.bytes.size() != numel_of(t.shape) * dtype_size(t.dtype))
            throw ValidationError("tensor byte count does not match its shape: " + t.name);
        w.str(t.name);
        w.le(static_cast<std::uint8_t>(t.dtype));
        w.le(static_cast<std::uint8_t>(t.shape.size()));
        for (auto d : t.shape) w.le(static_cast<std::uint64_t>(d));
        w.raw(t.bytes.data(), t.bytes.size());
    }
    auto& out = w.bytes();
    const auto crc = crc32_of(out.data(), out.size());
    w.le(crc);
    return std::move(out);
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 + 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError("not a checkpoint (bad magic)");
    const std::size_t body = bytes.size() - 4;
    detail::ByteReader crc_r(bytes.data() + body, 4);
    const auto stored = crc_r.le<std::uint32_t>();
    if (stored != crc32_of(bytes.data(), body)) throw CheckpointError("checkpoint CRC mismatch (file corrupt)");

    detail::ByteReader r(bytes.data(), body);
    r.take(4);
    Checkpoint c;
    c.version = r.le<std::uint32_t>();
    if (c.version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
    c.config_json = r.str();
    const auto count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        t.name = r.str();
        const auto code = r.le<std::uint8_t>();
        if (code > 1) throw CheckpointError("unknown dtype code " + std::to_string(code) + " for " + t.name);
        t.dtype = static_cast<DType>(code);
        const auto rank = r.le<std::uint8_t>();
        std::size_t n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            const auto d = r.le<std::uint64_t>();
            if (d != 0 && n > r.remaining() / d) throw CheckpointError("checkpoint truncated");
            n *= d;
            t.shape.push_back(static_cast<std::size_t>(d));
        }
        const auto nbytes = n * dtype_size(t.dtype);
        if (nbytes > r.remaining()) throw CheckpointError("checkpoint truncated");
        const auto* b = r.take(nbytes);
        t.bytes.assign(b, b + nbytes);
        c.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after tensor table");
    return c;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    const auto tmp = std::filesystem::path(p.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
}

// ---------------------------------------------------------------------------
// Model bundle.
// ---------------------------------------------------------------------------

struct BundleMeta {
    /// Last stage run on the bundle, or "init".
    std::string stage = "init";
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    /// Training-set channel mean used for input preprocessing.
    std::optional<ChannelMean> mean;
    std::vector<std::string> completed_stages;

    bool has_completed(const std::string& s) const {
        return std::find(completed_stages.begin(), completed_stages.end(), s) != completed_stages.end();
    }
    bool operator==(const BundleMeta&) const = default;
};

inline void to_json(nlohmann::json& j, const BundleMeta& m) {
    j = nlohmann::json{{"stage", m.stage}, {"step", m.step}, {"seed", m.seed}, {"completed_stages", m.completed_stages}};
    j["mean"] = m.mean ? nlohmann::json(*m.mean) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, BundleMeta& m) {
    j.at("stage").get_to(m.stage);
    j.at("step").get_to(m.step);
    j.at("seed").get_to(m.seed);
    j.at("completed_stages").get_to(m.completed_stages);
    m.mean.reset();
    if (j.contains("mean") && !j.at("mean").is_null()) m.mean = j.at("mean").get<ChannelMean>();
}

/// Parameters of all four subnetworks plus the architecture they belong to.
template <class T>
struct ModelBundle {
    ArchConfig arch;
    ParamStore<T> params;
    BundleMeta meta;
    /// JSON text read from disk; reused on save while it still describes
    /// arch and meta, so load-then-save is byte-identical.
    std::string source_json;

    static ModelBundle init(const ArchConfig& arch, std::uint64_t seed) {
        arch.validate();
        ModelBundle b;
        b.arch = arch;
        b.params = init_params<T>(arch, seed);
        b.meta.seed = seed;
        return b;
    }

    ModelBundle clone() const { return {arch, params.clone(), meta, source_json}; }

    nlohmann::json config_json() const { return {{"arch", arch}, {"meta", meta}}; }
};

/// Every parameter the architecture needs, present once with the right shape.
template <class T>
void check_params(const ArchConfig& arch, const ParamStore<T>& params) {
    const auto specs = model_specs(arch);
    std::set<std::string> required;
    for (const auto& s : specs) {
        required.insert(s.name);
        if (!params.contains(s.name)) throw ValidationError("checkpoint is missing parameter '" + s.name + "'");
        if (params.at(s.name).shape() != s.shape)
            throw ValidationError("parameter '" + s.name + "' has shape " + shape_str(params.at(s.name).shape()) +
                                  ", architecture needs " + shape_str(s.shape));
    }
    for (const auto& n : params.names())
        if (!required.contains(n)) throw ValidationError("checkpoint has unknown parameter '" + n + "'");
}

template <class T>
Checkpoint to_checkpoint(const ModelBundle<T>& b) {
    Checkpoint c;
    const auto cfg = b.config_json();
    bool reuse = false;
    if (!b.source_json.empty()) {
        try {
            reuse = nlohmann::json::parse(b.source_json) == cfg;
        } catch (const nlohmann::json::exception&) {
        }
    }
    c.config_json = reuse ? b.source_json : cfg.dump();
    for (const auto& [name, t] : b.params) c.tensors.push_back(StoredTensor::from(name, t));
    return c;
}

template <class T>
ModelBundle<T> from_checkpoint(const Checkpoint& c) {
    ModelBundle<T> b;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(c.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    if (!j.contains("arch")) throw ValidationError("checkpoint config has no 'arch' object");
    b.arch = arch_from_json(j.at("arch"));
    if (j.contains("meta")) b.meta = j.at("meta").get<BundleMeta>();
    b.source_json = c.config_json;
    for (const auto& t : c.tensors) b.params.add(t.name, t.template to_tensor<T>());
    check_params(b.arch, b.params);
    return b;
}

template <class T>
void save_bundle(const ModelBundle<T>& b, const std::filesystem::path& p) {
    write_file_bytes(p, encode_checkpoint(to_checkpoint(b)));
}

template <class T>
ModelBundle<T> load_bundle(const std::filesystem::path& p) {
    return from_checkpoint<T>(decode_checkpoint(read_file_bytes(p)));
}

}  // namespace gwai
