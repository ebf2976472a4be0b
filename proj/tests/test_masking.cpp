#include <gtest/gtest.h>

#include "lcf/masking.hpp"
#include "support/oracles.hpp"

using namespace lcf;

namespace {

FeatureSequence random_seq(std::size_t t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {"u", oracle::random_matrix<float>(t, 5, rng, -1, 1), 10.0f};
}

void expect_well_formed(const MaskPlan& plan) {
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        EXPECT_GE(plan.blocks[i].len, 1u);
        EXPECT_LE(plan.blocks[i].end(), plan.num_frames);
        if (i > 0) {
            EXPECT_LE(plan.blocks[i - 1].end(), plan.blocks[i].start);
        }
    }
}

}  // namespace

TEST(PlanMasks, HundredFramesGiveTwoBlocks) {
    Rng rng(1);
    const auto plan = plan_masks(100, {}, rng);
    EXPECT_EQ(plan.blocks.size(), 2u);
    EXPECT_EQ(plan.masked_frames(), 14u);
    EXPECT_FALSE(plan.degenerate);
    expect_well_formed(plan);
}

TEST(PlanMasks, SevenFramesGiveOneFullBlock) {
    Rng rng(1);
    const auto plan = plan_masks(7, {}, rng);
    ASSERT_EQ(plan.blocks.size(), 1u);
    EXPECT_EQ(plan.blocks[0], (MaskBlock{0, 7}));
}

TEST(PlanMasks, ThousandFramesGiveTwentyOneBlocks) {
    Rng rng(2);
    const auto plan = plan_masks(1000, {}, rng);
    EXPECT_EQ(plan.blocks.size(), 21u);
    EXPECT_EQ(plan.masked_frames(), 147u);
    expect_well_formed(plan);
}

TEST(PlanMasks, BlockCountRoundsHalfUp) {
    // 0.15 * 70 / 7 = 1.5 exactly -> 2.
    EXPECT_EQ(mask_block_count(70, {7, 0.15}), 2u);
    EXPECT_EQ(mask_block_count(69, {7, 0.15}), 1u);
    EXPECT_EQ(mask_block_count(3, {7, 0.15}), 1u);
}

TEST(PlanMasks, ShortUtteranceTruncatesAndFlags) {
    Rng rng(3);
    const auto plan = plan_masks(4, {}, rng);
    ASSERT_EQ(plan.blocks.size(), 1u);
    EXPECT_EQ(plan.blocks[0], (MaskBlock{0, 4}));
    EXPECT_TRUE(plan.degenerate);
}

TEST(PlanMasks, ShortfallIsAlwaysFlagged) {
    // With ratio < 0.5 the requested blocks nearly always fit; any shortfall
    // (from fragmented random placement) must carry the degenerate flag.
    Rng rng(4);
    const MaskParams p{3, 0.49};
    for (int rep = 0; rep < 20; ++rep) {
        for (std::size_t t = 1; t < 60; ++t) {
            const auto plan = plan_masks(t, p, rng);
            expect_well_formed(plan);
            EXPECT_GE(plan.blocks.size(), 1u);
            if (plan.blocks.size() < mask_block_count(t, p)) {
                EXPECT_TRUE(plan.degenerate);
            }
        }
    }
}

TEST(PlanMasks, InvalidParameters) {
    Rng rng(1);
    EXPECT_THROW(plan_masks(0, {}, rng), ContractError);
    EXPECT_THROW(plan_masks(10, {0, 0.15}, rng), ConfigError);
    EXPECT_THROW(plan_masks(10, {7, 0.5}, rng), ConfigError);
    EXPECT_THROW(plan_masks(10, {7, 0.0}, rng), ConfigError);
}

TEST(PlanMasks, DeterministicGivenSeed) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng a(seed), b(seed);
        const auto pa = plan_masks(300, {}, a), pb = plan_masks(300, {}, b);
        EXPECT_EQ(pa.blocks, pb.blocks);
    }
}

TEST(PlanMasks, MaskedFractionOverManyPlans) {
    Rng rng(derive_rng(1, "mask"));
    double total = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto plan = plan_masks(500, {}, rng);
        expect_well_formed(plan);
        std::size_t short_blocks = 0;
        for (const auto& b : plan.blocks) short_blocks += b.len != 7;
        EXPECT_LE(short_blocks, 1u);
        if (short_blocks == 1) {
            EXPECT_EQ(plan.blocks.back().end(), 500u);
        }
        total += double(plan.masked_frames()) / 500.0;
    }
    const double mean = total / 1000;
    EXPECT_GE(mean, 0.13);
    EXPECT_LE(mean, 0.17);
}

TEST(PlanMasks, UnionAtMostHalfOnceABlockIsAtMostHalf) {
    // Below 2 * block_len the one-block minimum alone exceeds half the frames.
    Rng rng(8);
    for (std::size_t t = 14; t < 400; ++t) {
        const auto plan = plan_masks(t, {}, rng);
        EXPECT_LE(double(plan.masked_frames()) / double(t), 0.5) << "T=" << t;
    }
}

TEST(ApplyMasks, EmptyPlanIsIdentity) {
    const auto x = random_seq(20, 1);
    MaskPlan plan;
    plan.num_frames = 20;
    EXPECT_EQ(apply_masks(x, plan, {}).frames, x.frames);
}

TEST(ApplyMasks, FullPlanZeroesEverything) {
    const auto x = random_seq(7, 2);
    MaskPlan plan{{{0, 7}}, 7, false};
    const auto y = apply_masks(x, plan, {});
    for (float v : y.frames.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ApplyMasks, SingleBlockTouchesOnlyItsRows) {
    const auto x = random_seq(30, 3);
    const auto copy = x;
    MaskPlan plan{{{10, 7}}, 30, false};
    const auto y = apply_masks(x, plan, {});
    for (std::size_t t = 0; t < 30; ++t)
        for (std::size_t c = 0; c < x.dim(); ++c) {
            if (t >= 10 && t < 17) {
                EXPECT_EQ(y.frames(t, c), 0.0f);
            } else {
                EXPECT_EQ(y.frames(t, c), x.frames(t, c));
            }
        }
    EXPECT_EQ(x.frames, copy.frames);
}

TEST(ApplyMasks, LengthMismatchIsContractError) {
    const auto x = random_seq(10, 4);
    MaskPlan plan{{{0, 3}}, 11, false};
    EXPECT_THROW(apply_masks(x, plan, {}), ContractError);
}

TEST(ApplyMasks, MixedPolicyOnlyChangesMaskedRows) {
    const auto x = random_seq(60, 5);
    Rng rng(6);
    MaskPlan plan{{{5, 7}, {30, 7}}, 60, false};
    MaskPolicy mixed{MaskFill::mixed, 0.4, 0.4};
    const auto mask = plan.frame_mask();
    for (int rep = 0; rep < 20; ++rep) {
        const auto y = apply_masks(x, plan, mixed, &rng);
        for (std::size_t t = 0; t < 60; ++t) {
            if (mask[t]) continue;
            for (std::size_t c = 0; c < x.dim(); ++c) EXPECT_EQ(y.frames(t, c), x.frames(t, c));
        }
    }
    EXPECT_THROW(apply_masks(x, plan, mixed, nullptr), ContractError);
}
