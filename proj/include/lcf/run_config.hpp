#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lcf/diagnostics.hpp"
#include "lcf/encoder.hpp"
#include "lcf/errors.hpp"
#include "lcf/features.hpp"
#include "lcf/masking.hpp"
#include "lcf/training.hpp"

namespace lcf {

enum class KeyType { integer, real, boolean, text };

struct KeySpec {
    std::string key;  // section.name
    KeyType type;
    std::string default_value;
    std::vector<std::string> choices;  // text keys only; empty means free-form
};

inline const std::vector<KeySpec>& key_registry() {
    static const std::vector<KeySpec> keys = {
        {"data.num_utts", KeyType::integer, "300", {}},
        {"data.min_frames", KeyType::integer, "40", {}},
        {"data.max_frames", KeyType::integer, "80", {}},
        {"data.dim", KeyType::integer, "16", {}},
        {"data.num_classes", KeyType::integer, "4", {}},
        {"data.noise_std", KeyType::real, "0.1", {}},
        {"data.self_transition", KeyType::real, "0.9", {}},
        {"data.val_fraction", KeyType::real, "0.1", {}},
        {"data.normalize", KeyType::boolean, "false", {}},

        {"mask.block_len", KeyType::integer, "7", {}},
        {"mask.ratio", KeyType::real, "0.15", {}},
        {"mask.fill", KeyType::text, "zero", {"zero", "mixed"}},
        {"mask.p_zero", KeyType::real, "0.8", {}},
        {"mask.p_random", KeyType::real, "0.1", {}},

        {"model.input_dim", KeyType::integer, "16", {}},
        {"model.dim", KeyType::integer, "16", {}},
        {"model.heads", KeyType::integer, "2", {}},
        {"model.ff_dim", KeyType::integer, "32", {}},
        {"model.conv_kernel", KeyType::integer, "7", {}},
        {"model.max_layers", KeyType::integer, "8", {}},
        {"model.min_layers", KeyType::integer, "2", {}},
        {"model.share_params", KeyType::boolean, "true", {}},
        {"model.dropout", KeyType::real, "0.1", {}},
        {"model.positional", KeyType::text, "relative-bias", {"none", "relative-bias"}},
        {"model.norm_eps", KeyType::real, "1e-05", {}},

        {"train.seed", KeyType::integer, "1", {}},
        {"train.batch_size", KeyType::integer, "8", {}},
        {"train.max_steps", KeyType::integer, "2000", {}},
        {"train.warmup_steps", KeyType::integer, "200", {}},
        {"train.peak_scale", KeyType::real, "1", {}},
        {"train.adam_beta1", KeyType::real, "0.9", {}},
        {"train.adam_beta2", KeyType::real, "0.98", {}},
        {"train.adam_eps", KeyType::real, "1e-09", {}},
        {"train.validation_every", KeyType::integer, "100", {}},
        {"train.depth_mode", KeyType::text, "uniform", {"fixed", "uniform"}},
        {"train.fixed_depth", KeyType::integer, "0", {}},
        {"train.loss", KeyType::text, "all-frames", {"all-frames", "masked-only"}},
        {"train.clip_norm", KeyType::real, "0", {}},
        {"train.threads", KeyType::integer, "1", {}},
        {"train.log_wall_time", KeyType::boolean, "true", {}},
        {"train.emit_only", KeyType::boolean, "false", {}},

        {"diag.utterance", KeyType::text, "", {}},
        {"diag.frame_start", KeyType::integer, "0", {}},
        {"diag.frame_count", KeyType::integer, "50", {}},
        {"diag.sli_layers", KeyType::integer, "5", {}},
        {"diag.flop_frames", KeyType::integer, "100", {}},
        {"diag.grad_depth", KeyType::integer, "8", {}},
        {"diag.grad_batch", KeyType::integer, "4", {}},
        {"diag.grad_tolerance", KeyType::real, "1e-06", {}},
        {"diag.probe_steps", KeyType::integer, "500", {}},
        {"diag.probe_lr", KeyType::real, "0.5", {}},
        {"diag.probe_train_fraction", KeyType::real, "0.8", {}},
    };
    return keys;
}

inline const std::map<std::string, std::map<std::string, std::string>>& presets() {
    static const std::map<std::string, std::map<std::string, std::string>> p = {
        {"desk-shared-u28",
         {{"model.share_params", "true"}, {"train.depth_mode", "uniform"}, {"model.min_layers", "2"}, {"model.max_layers", "8"}}},
        {"desk-shared-u48",
         {{"model.share_params", "true"}, {"train.depth_mode", "uniform"}, {"model.min_layers", "4"}, {"model.max_layers", "8"}}},
        {"desk-shared-8",
         {{"model.share_params", "true"}, {"train.depth_mode", "fixed"}, {"train.fixed_depth", "8"}, {"model.max_layers", "8"}}},
        {"desk-unshared-8",
         {{"model.share_params", "false"}, {"train.depth_mode", "fixed"}, {"train.fixed_depth", "8"}, {"model.max_layers", "8"}}},
        {"paper",
         {{"data.dim", "80"},
          {"model.input_dim", "80"},
          {"model.dim", "512"},
          {"model.heads", "4"},
          {"model.ff_dim", "2048"},
          {"model.conv_kernel", "15"},
          {"model.max_layers", "8"},
          {"model.share_params", "true"},
          {"train.depth_mode", "uniform"},
          {"train.warmup_steps", "8000"},
          {"train.batch_size", "8"},
          {"train.emit_only", "true"}}},
    };
    return p;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline const KeySpec& find_key(const std::string& key) {
    for (const auto& k : key_registry())
        if (k.key == key) return k;
    throw ConfigError("unknown config key '" + key + "'");
}

/// Checks a raw value against the key's type and returns its canonical text.
inline std::string canonical(const KeySpec& spec, const std::string& raw) {
    const std::string v = trim(raw);
    auto bad = [&](const char* what) { return ConfigError("config key " + spec.key + ": '" + v + "' is not " + what); };
    switch (spec.type) {
        case KeyType::integer: {
            if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) throw bad("a non-negative integer");
            try {
                return std::to_string(std::stoull(v));
            } catch (const std::out_of_range&) {
                throw bad("in range");
            }
        }
        case KeyType::real: {
            std::size_t used = 0;
            double d = 0;
            try {
                d = std::stod(v, &used);
            } catch (const std::logic_error&) {
                throw bad("a number");
            }
            if (used != v.size() || !std::isfinite(d)) throw bad("a finite number");
            char buf[32];
            const auto res = std::to_chars(buf, buf + sizeof buf, d);  // shortest text that round-trips
            return std::string(buf, res.ptr);
        }
        case KeyType::boolean: {
            std::string lower = v;
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
            if (lower == "true" || lower == "1" || lower == "yes") return "true";
            if (lower == "false" || lower == "0" || lower == "no") return "false";
            throw bad("a boolean");
        }
        case KeyType::text:
            if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
                std::string opts;
                for (const auto& c : spec.choices) opts += (opts.empty() ? "" : "|") + c;
                throw bad(("one of " + opts).c_str());
            }
            return v;
    }
    return v;
}

}  // namespace detail

/// Fully typed key=value run configuration. Every key has a default; unknown
/// keys and ill-typed values are rejected as soon as they are set.
class RunConfig {
public:
    RunConfig() {
        for (const auto& k : key_registry()) values_[k.key] = detail::canonical(k, k.default_value);
    }

    void set(const std::string& key, const std::string& value) {
        values_[key] = detail::canonical(detail::find_key(key), value);
    }

    const std::string& text(const std::string& key) const {
        detail::find_key(key);
        return values_.at(key);
    }
    std::size_t size(const std::string& key) const {
        require(key, KeyType::integer);
        return static_cast<std::size_t>(std::stoull(values_.at(key)));
    }
    double real(const std::string& key) const {
        require(key, KeyType::real);
        return std::stod(values_.at(key));
    }
    bool flag(const std::string& key) const {
        require(key, KeyType::boolean);
        return values_.at(key) == "true";
    }

    void apply_preset(const std::string& name) {
        const auto it = presets().find(name);
        if (it == presets().end()) {
            std::string names;
            for (const auto& [n, _] : presets()) names += (names.empty() ? "" : ", ") + n;
            throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
        }
        for (const auto& [k, v] : it->second) set(k, v);
    }

    /// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
    void apply_text(const std::string& text, const std::string& origin = "config") {
        std::istringstream in(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
                section = detail::trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = detail::trim(line.substr(0, eq));
            if (key.find('.') == std::string::npos) {
                if (section.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key + "' outside a section");
                key = section + "." + key;
            }
            try {
                set(key, line.substr(eq + 1));
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void apply_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read config file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        apply_text(ss.str(), path);
    }

    /// Accepts "--section.key=value" or "section.key=value".
    void apply_override(std::string arg) {
        if (arg.rfind("--", 0) == 0) arg = arg.substr(2);
        const auto eq = arg.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + arg + "' must have the form --section.key=value");
        set(arg.substr(0, eq), arg.substr(eq + 1));
    }

    /// Resolved configuration in the same format apply_text() reads.
    std::string emit() const {
        std::ostringstream os;
        std::string section;
        for (const auto& k : key_registry()) {
            const auto dot = k.key.find('.');
            const std::string sec = k.key.substr(0, dot);
            if (sec != section) {
                if (!section.empty()) os << '\n';
                os << '[' << sec << "]\n";
                section = sec;
            }
            os << k.key.substr(dot + 1) << " = " << values_.at(k.key) << '\n';
        }
        return os.str();
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        out << emit();
        if (!out) throw IoError("failed writing " + path);
    }

    bool operator==(const RunConfig& o) const { return values_ == o.values_; }

    // Typed views --------------------------------------------------------

    SynthConfig synth() const {
        SynthConfig s;
        s.seed = size("train.seed");
        s.num_utts = size("data.num_utts");
        s.min_frames = size("data.min_frames");
        s.max_frames = size("data.max_frames");
        s.dim = size("data.dim");
        s.num_classes = size("data.num_classes");
        s.noise_std = real("data.noise_std");
        s.self_transition = real("data.self_transition");
        return s;
    }

    ConformerConfig model() const {
        ConformerConfig c;
        c.input_dim = size("model.input_dim");
        c.model_dim = size("model.dim");
        c.num_heads = size("model.heads");
        c.ff_dim = size("model.ff_dim");
        c.conv_kernel = size("model.conv_kernel");
        c.max_layers = size("model.max_layers");
        c.min_layers = size("model.min_layers");
        c.share_params = flag("model.share_params");
        c.dropout = real("model.dropout");
        c.positional = parse_positional(text("model.positional"));
        c.norm_eps = real("model.norm_eps");
        c.validate();
        return c;
    }

    DepthPolicy depth() const {
        const auto c = model();
        if (text("train.depth_mode") == "uniform") return DepthPolicy::uniform(c.min_layers, c.max_layers);
        const std::size_t n = size("train.fixed_depth");
        return DepthPolicy::fixed(n == 0 ? c.max_layers : n);
    }

    TrainConfig train() const {
        TrainConfig t;
        t.batch_size = size("train.batch_size");
        t.max_steps = size("train.max_steps");
        t.warmup_steps = size("train.warmup_steps");
        t.peak_scale = real("train.peak_scale");
        t.adam = {real("train.adam_beta1"), real("train.adam_beta2"), real("train.adam_eps")};
        t.validation_every = size("train.validation_every");
        t.seed = size("train.seed");
        t.depth = depth();
        t.loss_mode = parse_loss_mode(text("train.loss"));
        t.clip_norm = real("train.clip_norm");
        t.mask = {size("mask.block_len"), real("mask.ratio")};
        t.mask_policy.fill = text("mask.fill") == "mixed" ? MaskFill::mixed : MaskFill::zero;
        t.mask_policy.p_zero = real("mask.p_zero");
        t.mask_policy.p_random = real("mask.p_random");
        t.threads = std::max<std::size_t>(1, size("train.threads"));
        t.log_wall_time = flag("train.log_wall_time");
        t.validate();
        return t;
    }

    ProbeConfig probe() const { return {size("diag.probe_steps"), real("diag.probe_lr")}; }

private:
    void require(const std::string& key, KeyType t) const {
        if (detail::find_key(key).type != t) throw ContractError("config key " + key + " read with the wrong type");
    }

    std::map<std::string, std::string> values_;
};

/// Mirrors LC_THREADS into train.threads when the variable is set.
inline void apply_thread_env(RunConfig& rc) {
    if (const char* env = std::getenv("LC_THREADS"); env && *env) {
        try {
            rc.set("train.threads", env);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("LC_THREADS: ") + e.what());
        }
    }
}

/// Deterministic train/validation split: the last `val_fraction` of
/// utterances (at least one) form the validation and evaluation split.
inline std::size_t validation_split_point(std::size_t num_utts, double val_fraction) {
    if (num_utts < 2) throw ContractError("need at least two utterances for a train/validation split");
    if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("data.val_fraction must lie in (0, 1)");
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(val_fraction * double(num_utts))));
    return num_utts - std::min(n_val, num_utts - 1);
}

}  // namespace lcf
