#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lcf/binary_io.hpp"
#include "lcf/errors.hpp"
#include "lcf/rng.hpp"
#include "lcf/tensor.hpp"

namespace lcf {

/// One utterance of frame-level features, T x D.
struct FeatureSequence {
    std::string utterance_id;
    Tensor<float> frames;
    float frame_shift_ms = 10.0f;

    std::size_t num_frames() const { return frames.rows(); }
    std::size_t dim() const { return frames.cols(); }
};

struct LabelSequence {
    std::string utterance_id;
    std::vector<std::uint16_t> labels;
    std::uint32_t num_classes = 0;
};

struct LabeledCorpus {
    std::vector<FeatureSequence> sequences;
    std::vector<LabelSequence> labels;
    std::size_t num_classes = 0;
};

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kLabelFormatVersion = 1;

// ---------------------------------------------------------------------------
// Feature / label files

inline std::vector<unsigned char> encode_features(const std::vector<FeatureSequence>& seqs) {
    io::Writer w;
    w.put_bytes("LCFB");
    w.put(kFeatureFormatVersion);
    w.put(static_cast<std::uint32_t>(seqs.size()));
    for (const auto& s : seqs) {
        w.put_string(s.utterance_id);
        w.put(static_cast<std::uint32_t>(s.num_frames()));
        w.put(static_cast<std::uint32_t>(s.dim()));
        w.put(s.frame_shift_ms);
        for (float v : s.frames.data()) w.put(v);
    }
    return w.bytes();
}

inline std::vector<FeatureSequence> decode_features(std::vector<unsigned char> bytes) {
    io::Reader r(std::move(bytes));
    r.expect_magic("LCFB");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kFeatureFormatVersion) r.fail("unsupported feature file version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("sequence count");
    std::vector<FeatureSequence> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        FeatureSequence s;
        s.utterance_id = r.get_string("utterance id");
        const auto t = r.get<std::uint32_t>("frame count");
        const auto d = r.get<std::uint32_t>("feature dim");
        if (t == 0 || d == 0) r.fail("sequence " + s.utterance_id + " has an empty shape");
        s.frame_shift_ms = r.get<float>("frame shift");
        const std::uint64_t n = static_cast<std::uint64_t>(t) * d;
        if (n > r.remaining() / sizeof(float)) {
            r.fail("shape " + std::to_string(t) + "x" + std::to_string(d) + " overflows the remaining payload");
        }
        std::vector<float> data(n);
        for (auto& v : data) v = r.get<float>("frame values");
        s.frames = Tensor<float>({t, d}, std::move(data));
        out.push_back(std::move(s));
    }
    if (!r.at_end()) r.fail("trailing bytes after last sequence");
    return out;
}

inline void save_features(const std::vector<FeatureSequence>& seqs, const std::string& path) {
    io::write_file(path, encode_features(seqs));
}

inline std::vector<FeatureSequence> load_features(const std::string& path) {
    return decode_features(io::read_file(path));
}

inline std::vector<unsigned char> encode_labels(const std::vector<LabelSequence>& seqs) {
    io::Writer w;
    w.put_bytes("LCLB");
    w.put(kLabelFormatVersion);
    w.put(static_cast<std::uint32_t>(seqs.size()));
    for (const auto& s : seqs) {
        w.put_string(s.utterance_id);
        w.put(static_cast<std::uint32_t>(s.labels.size()));
        w.put(s.num_classes);
        for (auto l : s.labels) w.put(l);
    }
    return w.bytes();
}

inline std::vector<LabelSequence> decode_labels(std::vector<unsigned char> bytes) {
    io::Reader r(std::move(bytes));
    r.expect_magic("LCLB");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kLabelFormatVersion) r.fail("unsupported label file version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("sequence count");
    std::vector<LabelSequence> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        LabelSequence s;
        s.utterance_id = r.get_string("utterance id");
        const auto t = r.get<std::uint32_t>("frame count");
        s.num_classes = r.get<std::uint32_t>("class count");
        if (t > r.remaining() / sizeof(std::uint16_t)) r.fail("label count overflows the remaining payload");
        s.labels.resize(t);
        for (auto& l : s.labels) {
            l = r.get<std::uint16_t>("labels");
            if (l >= s.num_classes) r.fail("label " + std::to_string(l) + " out of range for " + s.utterance_id);
        }
        out.push_back(std::move(s));
    }
    if (!r.at_end()) r.fail("trailing bytes after last sequence");
    return out;
}

inline void save_labels(const std::vector<LabelSequence>& seqs, const std::string& path) {
    io::write_file(path, encode_labels(seqs));
}

inline std::vector<LabelSequence> load_labels(const std::string& path) {
    return decode_labels(io::read_file(path));
}

/// Per-utterance, per-dimension mean/variance normalization (off by default).
inline void normalize_utterance(FeatureSequence& seq, float eps = 1e-5f) {
    auto& x = seq.frames;
    const std::size_t t = x.rows(), d = x.cols();
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0, var = 0;
        for (std::size_t r = 0; r < t; ++r) mean += x(r, c);
        mean /= double(t);
        for (std::size_t r = 0; r < t; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= double(t);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t r = 0; r < t; ++r) x(r, c) = static_cast<float>((x(r, c) - mean) * inv);
    }
}

// ---------------------------------------------------------------------------
// Log-mel filterbank

namespace dsp {

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / double(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

/// Power spectrum |X_k|^2 for k = 0..n_fft/2 of a zero-padded frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, std::size_t n_fft) {
    std::vector<std::complex<double>> buf(n_fft);
    for (std::size_t i = 0; i < frame.size() && i < n_fft; ++i) buf[i] = frame[i];
    fft(buf);
    std::vector<double> out(n_fft / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(buf[k]);
    return out;
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and Nyquist.
/// Row m holds the weight of every FFT bin for filter m.
inline std::vector<std::vector<double>> mel_filterbank(int n_mels, std::size_t n_fft, int sample_rate) {
    const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate / 2.0);
    const double step = (mel_hi - mel_lo) / double(n_mels + 1);
    std::vector<std::vector<double>> bank(n_mels, std::vector<double>(n_fft / 2 + 1, 0.0));
    for (int m = 0; m < n_mels; ++m) {
        const double left = mel_lo + m * step, center = left + step, right = center + step;
        for (std::size_t k = 0; k <= n_fft / 2; ++k) {
            const double mel = hz_to_mel(double(k) * sample_rate / double(n_fft));
            if (mel > left && mel < right) {
                bank[m][k] = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
            }
        }
    }
    return bank;
}

}  // namespace dsp

inline constexpr double kLogEnergyFloor = 1e-10;

/// Log mel filterbank energies with a Hamming window and DC removal per frame.
inline FeatureSequence logmel_extract(std::span<const std::int16_t> pcm, int sample_rate, int n_mels,
                                      double frame_len_ms = 25.0, double frame_shift_ms = 10.0) {
    if (sample_rate != 8000 && sample_rate != 16000) {
        throw InputError("unsupported sample rate " + std::to_string(sample_rate));
    }
    if (n_mels < 4) throw InputError("n_mels must be at least 4");
    const auto frame_len = static_cast<std::size_t>(std::lround(sample_rate * frame_len_ms / 1000.0));
    const auto shift = static_cast<std::size_t>(std::lround(sample_rate * frame_shift_ms / 1000.0));
    if (frame_len == 0 || shift == 0) throw InputError("frame length and shift must be positive");
    if (pcm.size() < frame_len) {
        throw InputError("audio too short: " + std::to_string(pcm.size()) + " samples, need " +
                         std::to_string(frame_len));
    }
    const std::size_t frames = 1 + (pcm.size() - frame_len) / shift;
    std::size_t n_fft = 1;
    while (n_fft < frame_len) n_fft <<= 1;

    const auto bank = dsp::mel_filterbank(n_mels, n_fft, sample_rate);
    std::vector<double> window(frame_len);
    for (std::size_t i = 0; i < frame_len; ++i) {
        window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(i) / double(frame_len - 1));
    }

    FeatureSequence out;
    out.frame_shift_ms = static_cast<float>(frame_shift_ms);
    out.frames = Tensor<float>::matrix(frames, static_cast<std::size_t>(n_mels));
    std::vector<double> buf(frame_len);
    for (std::size_t f = 0; f < frames; ++f) {
        double dc = 0;
        for (std::size_t i = 0; i < frame_len; ++i) {
            buf[i] = pcm[f * shift + i];
            dc += buf[i];
        }
        dc /= double(frame_len);
        for (std::size_t i = 0; i < frame_len; ++i) buf[i] = (buf[i] - dc) * window[i];
        const auto power = dsp::power_spectrum(buf, n_fft);
        for (int m = 0; m < n_mels; ++m) {
            double e = 0;
            for (std::size_t k = 0; k < power.size(); ++k) e += bank[m][k] * power[k];
            out.frames(f, m) = static_cast<float>(std::log(std::max(e, kLogEnergyFloor)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t num_utts = 300;
    std::size_t min_frames = 40;
    std::size_t max_frames = 80;
    std::size_t dim = 16;
    std::size_t num_classes = 4;
    double noise_std = 0.1;
    double self_transition = 0.9;
};

inline std::string utterance_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "utt%05zu", i);
    return buf;
}

/// Markov-chain corpus: each utterance walks over C latent states, every state
/// emits its own fixed mean vector plus Gaussian noise; labels are the states.
inline LabeledCorpus synth_corpus(const SynthConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (cfg.num_classes > 65535) throw ConfigError("synth: class ids must fit in 16 bits");
    if (cfg.dim < 4) throw ConfigError("synth: feature dim must be at least 4");
    if (cfg.min_frames < 1 || cfg.min_frames > cfg.max_frames) throw ConfigError("synth: invalid frame range");
    if (cfg.noise_std < 0) throw ConfigError("synth: noise std must be non-negative");
    if (!(cfg.self_transition >= 0 && cfg.self_transition < 1)) {
        throw ConfigError("synth: self-transition probability must lie in [0, 1)");
    }

    Rng rng = derive_rng(cfg.seed, "data");
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<float>> means(cfg.num_classes, std::vector<float>(cfg.dim));
    for (auto& m : means)
        for (auto& v : m) v = static_cast<float>(unit(rng));

    std::uniform_int_distribution<std::size_t> length(cfg.min_frames, cfg.max_frames);
    std::uniform_int_distribution<std::size_t> any_state(0, cfg.num_classes - 1);
    std::uniform_int_distribution<std::size_t> other_state(0, cfg.num_classes - 2);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    LabeledCorpus corpus;
    corpus.num_classes = cfg.num_classes;
    for (std::size_t u = 0; u < cfg.num_utts; ++u) {
        const std::size_t t = length(rng);
        FeatureSequence seq;
        seq.utterance_id = utterance_name(u);
        seq.frames = Tensor<float>::matrix(t, cfg.dim);
        LabelSequence lab{seq.utterance_id, std::vector<std::uint16_t>(t),
                          static_cast<std::uint32_t>(cfg.num_classes)};
        std::size_t state = any_state(rng);
        for (std::size_t f = 0; f < t; ++f) {
            if (f > 0 && coin(rng) >= cfg.self_transition) {
                const std::size_t next = other_state(rng);
                state = next >= state ? next + 1 : next;
            }
            lab.labels[f] = static_cast<std::uint16_t>(state);
            for (std::size_t c = 0; c < cfg.dim; ++c) {
                const double noise = cfg.noise_std > 0 ? cfg.noise_std * unit(rng) : 0.0;
                seq.frames(f, c) = static_cast<float>(means[state][c] + noise);
            }
        }
        corpus.sequences.push_back(std::move(seq));
        corpus.labels.push_back(std::move(lab));
    }
    return corpus;
}

}  // namespace lcf
