#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>
#include <string>

#include "lazyllm/errors.hpp"
#include "lazyllm/io.hpp"
#include "lazyllm/model.hpp"

namespace lazyllm {
namespace {

static_assert(std::endian::native == std::endian::little, "LZWT payloads are little-endian");

using json = nlohmann::json;

constexpr char kMagic[4] = {'L', 'Z', 'W', 'T'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    float* data;
};

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
}

/// Canonical tensor order; payloads are laid out in this order.
std::vector<TensorRef> tensor_table(ModelWeights& w, const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model;
    std::vector<TensorRef> refs;
    refs.push_back({"tok_embeddings", {cfg.vocab_size, d}, w.token_embedding.data()});
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        LayerWeights& lw = w.layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        refs.push_back({p + "attn_norm", {d}, lw.attn_norm.data()});
        refs.push_back({p + "wq", {d, d}, lw.wq.data()});
        refs.push_back({p + "wk", {d, d}, lw.wk.data()});
        refs.push_back({p + "wv", {d, d}, lw.wv.data()});
        refs.push_back({p + "wo", {d, d}, lw.wo.data()});
        refs.push_back({p + "ffn_norm", {d}, lw.ffn_norm.data()});
        refs.push_back({p + "w_gate", {d, cfg.d_ff}, lw.w_gate.data()});
        refs.push_back({p + "w_up", {d, cfg.d_ff}, lw.w_up.data()});
        refs.push_back({p + "w_down", {cfg.d_ff, d}, lw.w_down.data()});
    }
    refs.push_back({"final_norm", {d}, w.final_norm.data()});
    if (w.unembedding) refs.push_back({"unembedding", {cfg.vocab_size, d}, w.unembedding->data()});
    return refs;
}

ModelWeights allocate_weights(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model;
    ModelWeights w;
    w.token_embedding = Matrix(cfg.vocab_size, d);
    w.layers.resize(cfg.num_layers);
    for (LayerWeights& lw : w.layers) {
        lw.attn_norm.assign(d, 0.0f);
        lw.wq = Matrix(d, d);
        lw.wk = Matrix(d, d);
        lw.wv = Matrix(d, d);
        lw.wo = Matrix(d, d);
        lw.ffn_norm.assign(d, 0.0f);
        lw.w_gate = Matrix(d, cfg.d_ff);
        lw.w_up = Matrix(d, cfg.d_ff);
        lw.w_down = Matrix(cfg.d_ff, d);
    }
    w.final_norm.assign(d, 0.0f);
    if (!cfg.tied_embeddings) w.unembedding = Matrix(cfg.vocab_size, d);
    return w;
}

json config_to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"d_model", c.d_model},
                {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"max_position", c.max_position},
                {"tied_embeddings", c.tied_embeddings}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_position = j.at("max_position").get<std::size_t>();
    c.tied_embeddings = j.value("tied_embeddings", true);
    return c;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    return value;
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for payloads over 4 GiB.
    std::size_t done = 0;
    while (done < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
        crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
    ModelWeights w = model.weights();
    const ModelConfig& cfg = model.config();
    const auto table = tensor_table(w, cfg);

    json tensors = json::object();
    std::size_t offset = 0;
    for (const TensorRef& t : table) {
        const std::size_t len = element_count(t.shape) * sizeof(float);
        tensors[t.name] = json{{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", len}};
        offset += len;
    }
    const std::string header = json{{"config", config_to_json(cfg)}, {"tensors", tensors}}.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kPreambleBytes + header.size() + offset + 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    put<std::uint32_t>(out, kLzwtVersion);
    put<std::uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    const std::size_t payload_start = out.size();
    for (const TensorRef& t : table) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data);
        out.insert(out.end(), p, p + element_count(t.shape) * sizeof(float));
    }
    put<std::uint32_t>(out, crc_of(std::span(out).subspan(payload_start)));
    return out;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_model(model));
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreambleBytes + 4) throw FormatError("LZWT: file too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("LZWT: bad magic");
    const auto version = get<std::uint32_t>(bytes, 4);
    if (version != kLzwtVersion) throw FormatError("LZWT: unsupported version " + std::to_string(version));
    const auto header_len = get<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - kPreambleBytes - 4) throw FormatError("LZWT: header length exceeds file");

    const std::size_t payload_start = kPreambleBytes + header_len;
    const std::size_t payload_len = bytes.size() - payload_start - 4;
    const auto payload = bytes.subspan(payload_start, payload_len);
    if (crc_of(payload) != get<std::uint32_t>(bytes, bytes.size() - 4)) {
        throw FormatError("LZWT: payload checksum mismatch");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
    } catch (const json::exception& e) {
        throw FormatError(std::string("LZWT: malformed header: ") + e.what());
    }

    ModelConfig cfg;
    try {
        cfg = config_from_json(header.at("config"));
        cfg.validate();
    } catch (const json::exception& e) {
        throw FormatError(std::string("LZWT: bad config: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("LZWT: bad config: ") + e.what());
    }

    ModelWeights w = allocate_weights(cfg);
    const auto table = tensor_table(w, cfg);
    try {
        const json& dir = header.at("tensors");
        if (dir.size() != table.size()) {
            throw FormatError("LZWT: expected " + std::to_string(table.size()) + " tensors, found " +
                              std::to_string(dir.size()));
        }
        for (const TensorRef& t : table) {
            if (!dir.contains(t.name)) throw FormatError("LZWT: missing tensor " + t.name);
            const json& e = dir.at(t.name);
            if (e.at("dtype").get<std::string>() != "f32") throw FormatError("LZWT: " + t.name + " is not f32");
            const auto shape = e.at("shape").get<std::vector<std::size_t>>();
            if (shape != t.shape) throw FormatError("LZWT: shape mismatch for " + t.name);
            const auto off = e.at("offset").get<std::size_t>();
            const auto len = e.at("length").get<std::size_t>();
            if (len != element_count(shape) * sizeof(float) || off > payload_len || len > payload_len - off) {
                throw FormatError("LZWT: bad extent for " + t.name);
            }
            std::memcpy(t.data, payload.data() + off, len);
            for (std::size_t i = 0; i < element_count(shape); ++i) {
                if (!std::isfinite(t.data[i])) throw FormatError("LZWT: non-finite value in " + t.name);
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("LZWT: bad tensor directory: ") + e.what());
    }

    try {
        return Model(cfg, std::move(w));
    } catch (const ShapeError& e) {
        throw FormatError(std::string("LZWT: ") + e.what());
    }
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace lazyllm
