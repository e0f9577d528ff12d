#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mpsi/bench.hpp"
#include "mpsi/embedding_store.hpp"

using namespace mpsi;
using namespace mpsi::bench;

namespace {

SuiteConfig small_suite() {
    SuiteConfig cfg;
    cfg.tasks = 3;
    cfg.H = 4;
    cfg.W = 4;
    cfg.d = 16;
    cfg.steps = 120;
    return cfg;
}

}  // namespace

TEST(RegionalAlignment, PerfectAndOrthogonal) {
    LatentGrid init(1, 2, 3), fin(1, 2, 3);
    const std::vector<Vec> dirs{{1, 0, 0}, {0, 1, 0}};
    const std::vector<std::size_t> assign{0, 1};
    fin.cell(0)[0] = 2.0;
    fin.cell(1)[1] = 0.5;
    EXPECT_NEAR(regional_alignment(fin, init, dirs, assign), 1.0, 1e-15);
    fin = LatentGrid(1, 2, 3);
    fin.cell(0)[2] = 1.0;
    fin.cell(1)[0] = 1.0;
    EXPECT_NEAR(regional_alignment(fin, init, dirs, assign), 0.0, 1e-15);
    // zero change counts as zero alignment
    EXPECT_EQ(regional_alignment(init, init, dirs, assign), 0.0);
}

TEST(StripeAssignment, SplitsColumns) {
    const auto a = stripe_assignment(2, 2, 4);
    EXPECT_EQ(a, (std::vector<std::size_t>{0, 0, 1, 1, 0, 0, 1, 1}));
    for (std::size_t v : stripe_assignment(3, 3, 7)) EXPECT_LT(v, 3u);
}

TEST(RunStrategy, LinearRespectsBisectorCeiling) {
    SuiteConfig cfg = small_suite();
    const BenchTask task = make_task(cfg, 3);
    const StrategyResult lin = run_strategy(task, Strategy::linear);
    EXPECT_LE(lin.regional, std::cos(std::numbers::pi / 3.0) + 0.05);
    const StrategyResult mixed = run_strategy(task, Strategy::mixed);
    EXPECT_GE(mixed.regional - lin.regional, 0.3);
}

TEST(RunStrategy, SinglePromptTaskReducesToPlainRun) {
    SuiteConfig cfg = small_suite();
    cfg.k = 1;
    const BenchTask task = make_task(cfg, 2);
    SolverConfig sc = task.solver;
    RunSetup setup{.initial = task.initial,
                   .prompts = task.prompts,
                   .field = uniform_field(1, cfg.H, cfg.W),
                   .mixer = std::nullopt,
                   .fused_override = task.prompts.embeddings[0],
                   .pyramid = build_pyramid(cfg.H, cfg.W, cfg.levels),
                   .coeffs = task.coeffs,
                   .start = std::nullopt};
    const RunResult plain = run(setup, sc);
    const StrategyResult single = run_strategy(task, Strategy::single);
    const std::vector<Vec> dirs{task.prompts.embeddings[0]};
    EXPECT_NEAR(single.regional, regional_alignment(plain.final_latent, task.initial, dirs, task.assignment), 1e-12);
}

TEST(RunStrategy, IdenticalPromptsMakeLinearEqualSingle) {
    SuiteConfig cfg = small_suite();
    BenchTask task = make_task(cfg, 4);
    task.prompts.embeddings[1] = task.prompts.embeddings[0];
    const StrategyResult s = run_strategy(task, Strategy::single);
    const StrategyResult l = run_strategy(task, Strategy::linear);
    EXPECT_NEAR(s.regional, l.regional, 1e-9);
}

TEST(Benchmark, SinglePromptSuiteStrategiesCoincide) {
    SuiteConfig cfg = small_suite();
    cfg.k = 1;
    const BenchReport r = benchmark(cfg);
    ASSERT_EQ(r.rows.size(), 9u);
    for (std::size_t t = 0; t < 3; ++t) {
        const double ref = r.rows[3 * t].regional;
        EXPECT_NEAR(r.rows[3 * t + 1].regional, ref, 1e-6);
        EXPECT_NEAR(r.rows[3 * t + 2].regional, ref, 1e-6);
    }
}

TEST(Benchmark, MetricsBoundedAndCsvShaped) {
    const SuiteConfig cfg = small_suite();
    const BenchReport r = benchmark(cfg);
    for (const auto& row : r.rows) {
        EXPECT_GE(row.regional, -1.0);
        EXPECT_LE(row.regional, 1.0);
        for (double g : row.global) {
            EXPECT_GE(g, -1.0);
            EXPECT_LE(g, 1.0);
        }
    }
    const std::string csv = to_csv(r, false);
    std::istringstream in(csv);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        if (lines > 1) {
            EXPECT_EQ(line.substr(line.size() - 3), ",NA");
        }
    }
    EXPECT_EQ(lines, 1 + cfg.tasks * 3);
    EXPECT_EQ(csv, to_csv(benchmark(cfg), false));
    const auto summary = nlohmann::json::parse(summary_json(r, cfg));
    EXPECT_TRUE(summary.contains("mixed_beats_linear_rate"));
}

TEST(OverheadProbe, RatioIsAtLeastOne) {
    const OverheadResult a = overhead_probe(16, 16, 64, 100, 3);
    EXPECT_GE(a.ratio, 1.0);
    EXPECT_GT(a.single_ms, 0.0);
}
