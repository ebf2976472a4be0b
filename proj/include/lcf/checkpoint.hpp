#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcf/binary_io.hpp"
#include "lcf/encoder.hpp"
#include "lcf/errors.hpp"
#include "lcf/tensor.hpp"

namespace lcf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Ordered key=value metadata block.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// In-memory form of an "LCCK" file: metadata plus named f32 tensors.
struct Checkpoint {
    KeyValues meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        throw FormatError("checkpoint metadata lacks key '" + key + "'", 0);
    }

    bool has(const std::string& key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return true;
        return false;
    }

    const Tensor<float>& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw FormatError("checkpoint lacks tensor '" + name + "'", 0);
    }
};

inline std::string encode_key_values(const KeyValues& kv) {
    std::string s;
    for (const auto& [k, v] : kv) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ContractError("metadata entry '" + k + "' contains a reserved character");
        }
        s += k + "=" + v + "\n";
    }
    return s;
}

inline KeyValues decode_key_values(const std::string& block) {
    KeyValues kv;
    std::istringstream in(block);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed metadata line '" + line + "'", 0);
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
    io::Writer w;
    w.put_bytes("LCCK");
    w.put(kCheckpointVersion);
    w.put_string(encode_key_values(ck.meta));
    w.put(static_cast<std::uint64_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        w.put_string(name);
        w.put(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.put(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.put(v);
    }
    return w.bytes();
}

inline Checkpoint decode_checkpoint(std::vector<unsigned char> bytes) {
    io::Reader r(std::move(bytes));
    r.expect_magic("LCCK");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.meta = decode_key_values(r.get_string("config block"));
    const auto count = r.get<std::uint64_t>("tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.get_string("tensor name");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank == 0 || rank > 8) r.fail("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) {
            d = r.get<std::uint32_t>("dims");
            if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
            n *= d;
            if (n > r.remaining() / sizeof(float)) r.fail("tensor '" + name + "' overflows the remaining payload");
        }
        std::vector<float> data(n);
        for (auto& v : data) v = r.get<float>("tensor values");
        ck.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) r.fail("trailing bytes after last tensor");
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Model config <-> metadata

inline void put_model_config(KeyValues& kv, const ConformerConfig& c) {
    kv.emplace_back("model.input_dim", std::to_string(c.input_dim));
    kv.emplace_back("model.dim", std::to_string(c.model_dim));
    kv.emplace_back("model.heads", std::to_string(c.num_heads));
    kv.emplace_back("model.ff_dim", std::to_string(c.ff_dim));
    kv.emplace_back("model.conv_kernel", std::to_string(c.conv_kernel));
    kv.emplace_back("model.max_layers", std::to_string(c.max_layers));
    kv.emplace_back("model.min_layers", std::to_string(c.min_layers));
    kv.emplace_back("model.share_params", c.share_params ? "true" : "false");
    std::ostringstream drop, eps;
    drop.precision(17);
    eps.precision(17);
    drop << c.dropout;
    eps << c.norm_eps;
    kv.emplace_back("model.dropout", drop.str());
    kv.emplace_back("model.positional", to_string(c.positional));
    kv.emplace_back("model.norm_eps", eps.str());
}

inline ConformerConfig get_model_config(const Checkpoint& ck) {
    ConformerConfig c;
    auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.get(k))); };
    try {
        c.input_dim = num("model.input_dim");
        c.model_dim = num("model.dim");
        c.num_heads = num("model.heads");
        c.ff_dim = num("model.ff_dim");
        c.conv_kernel = num("model.conv_kernel");
        c.max_layers = num("model.max_layers");
        c.min_layers = num("model.min_layers");
        c.share_params = ck.get("model.share_params") == "true";
        c.dropout = std::stod(ck.get("model.dropout"));
        c.positional = parse_positional(ck.get("model.positional"));
        c.norm_eps = std::stod(ck.get("model.norm_eps"));
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("bad model config in checkpoint: ") + e.what(), 0);
    }
    c.validate();
    return c;
}

/// Appends the store's tensors (as f32) and model config to a checkpoint.
template <typename T>
void put_store(Checkpoint& ck, const ParameterStore<T>& store) {
    put_model_config(ck.meta, store.config());
    for (std::size_t i = 0; i < store.size(); ++i) {
        ck.tensors.emplace_back(store.name(i), store.tensor(i).template cast<float>());
    }
}

template <typename T>
ParameterStore<T> get_store(const Checkpoint& ck) {
    ParameterStore<T> store(get_model_config(ck));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& t = ck.tensor(store.name(i));
        if (t.shape() != store.tensor(i).shape()) {
            throw FormatError("tensor '" + store.name(i) + "' has shape " + shape_str(t.shape()) + ", expected " +
                                  shape_str(store.tensor(i).shape()),
                              0);
        }
        store.tensor(i) = t.template cast<T>();
    }
    return store;
}

}  // namespace lcf
