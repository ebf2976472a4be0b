#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "lcf/errors.hpp"
#include "lcf/features.hpp"
#include "lcf/rng.hpp"

namespace lcf {

struct MaskBlock {
    std::size_t start = 0;
    std::size_t len = 0;

    std::size_t end() const { return start + len; }
    bool operator==(const MaskBlock&) const = default;
};

/// Sorted, non-overlapping frame blocks to corrupt in a T-frame utterance.
struct MaskPlan {
    std::vector<MaskBlock> blocks;
    std::size_t num_frames = 0;
    bool degenerate = false;  // fewer blocks than requested could be placed

    std::size_t masked_frames() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.len;
        return n;
    }

    std::vector<bool> frame_mask() const {
        std::vector<bool> m(num_frames, false);
        for (const auto& b : blocks)
            for (std::size_t t = b.start; t < b.end(); ++t) m[t] = true;
        return m;
    }
};

struct MaskParams {
    std::size_t block_len = 7;
    double ratio = 0.15;
};

/// Number of blocks for a T-frame utterance: round-half-up of ratio*T/block_len, at least one.
inline std::size_t mask_block_count(std::size_t num_frames, const MaskParams& p) {
    const double raw = p.ratio * double(num_frames) / double(p.block_len);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(raw + 0.5)));
}

inline constexpr int kMaskRejectionAttempts = 1000;

/// Draws block starts uniformly on [0, T - block_len] with rejection of
/// overlaps; after the attempt budget the remaining blocks are placed greedily
/// left to right. Utterances shorter than one block get a single truncated block.
inline MaskPlan plan_masks(std::size_t num_frames, const MaskParams& p, Rng& rng) {
    if (num_frames < 1) throw ContractError("plan_masks: need at least one frame");
    if (p.block_len < 1) throw ConfigError("plan_masks: block length must be positive");
    if (!(p.ratio > 0.0 && p.ratio < 0.5)) throw ConfigError("plan_masks: ratio must lie in (0, 0.5)");

    MaskPlan plan;
    plan.num_frames = num_frames;
    const std::size_t wanted = mask_block_count(num_frames, p);

    if (num_frames <= p.block_len) {
        plan.blocks.push_back({0, num_frames});
        plan.degenerate = num_frames < p.block_len || wanted > 1;
        return plan;
    }

    const std::size_t fit = num_frames / p.block_len;
    std::size_t target = wanted;
    if (target > fit) {
        target = fit;
        plan.degenerate = true;
    }

    auto overlaps = [&](std::size_t s) {
        return std::any_of(plan.blocks.begin(), plan.blocks.end(), [&](const MaskBlock& b) {
            return s < b.end() && b.start < s + p.block_len;
        });
    };

    std::uniform_int_distribution<std::size_t> start(0, num_frames - p.block_len);
    for (int attempt = 0; attempt < kMaskRejectionAttempts && plan.blocks.size() < target; ++attempt) {
        const std::size_t s = start(rng);
        if (!overlaps(s)) plan.blocks.push_back({s, p.block_len});
    }
    for (std::size_t s = 0; plan.blocks.size() < target && s + p.block_len <= num_frames; ++s) {
        if (!overlaps(s)) plan.blocks.push_back({s, p.block_len});
    }
    if (plan.blocks.size() < target) plan.degenerate = true;

    std::sort(plan.blocks.begin(), plan.blocks.end(),
              [](const MaskBlock& a, const MaskBlock& b) { return a.start < b.start; });
    return plan;
}

enum class MaskFill { zero, mixed };

/// Replacement rule for masked frames. `mixed` picks per block: zeros with
/// p_zero, frames copied from random positions of the same utterance with
/// p_random, otherwise the block is left unchanged.
struct MaskPolicy {
    MaskFill fill = MaskFill::zero;
    double p_zero = 0.8;
    double p_random = 0.1;
};

inline FeatureSequence apply_masks(const FeatureSequence& x, const MaskPlan& plan, const MaskPolicy& policy,
                                   Rng* rng = nullptr) {
    if (plan.num_frames != x.num_frames()) {
        throw ContractError("apply_masks: plan covers " + std::to_string(plan.num_frames) + " frames, input has " +
                            std::to_string(x.num_frames()));
    }
    FeatureSequence out = x;
    const std::size_t d = x.dim();
    if (policy.fill == MaskFill::mixed && rng == nullptr) {
        throw ContractError("apply_masks: mixed policy needs a generator");
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> frame(0, x.num_frames() - 1);
    for (const auto& b : plan.blocks) {
        if (b.end() > x.num_frames()) throw ContractError("apply_masks: block past the end of the utterance");
        double u = 0.0;
        if (policy.fill == MaskFill::mixed) u = coin(*rng);
        for (std::size_t t = b.start; t < b.end(); ++t) {
            if (policy.fill == MaskFill::zero || u < policy.p_zero) {
                for (std::size_t c = 0; c < d; ++c) out.frames(t, c) = 0.0f;
            } else if (u < policy.p_zero + policy.p_random) {
                const std::size_t src = frame(*rng);
                for (std::size_t c = 0; c < d; ++c) out.frames(t, c) = x.frames(src, c);
            }
        }
    }
    return out;
}

}  // namespace lcf
