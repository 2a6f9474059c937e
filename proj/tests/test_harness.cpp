#include "perfts/config.hpp"
#include "perfts/harness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace perfts;
using harness::ExperimentConfig;

namespace {

data::Dataset small_synthetic(std::size_t T = 300, std::uint64_t seed = 1) {
    data::SyntheticSpec spec;
    spec.T = T;
    spec.seed = seed;
    spec.horizon = 4;
    spec.lag_response = 1;
    spec.lag_effect = 2;
    return data::generate_synthetic(spec);
}

ExperimentConfig quick_config() {
    ExperimentConfig c;
    c.L = 8;
    c.H = 4;
    c.train.epochs = 4;
    c.train.f_hidden = 4;
    c.train.g_hidden = 4;
    c.train.seed = 3;
    return c;
}

std::map<std::string, std::set<std::size_t>> anchors_by_method(const std::vector<metrics::Record>& recs,
                                                                const std::string& split = "test") {
    std::map<std::string, std::set<std::size_t>> out;
    for (const auto& r : recs)
        if (r.split == split) out[r.method].insert(r.anchor);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Standard protocol

TEST(StandardRun, ReportContract) {
    auto ds = small_synthetic();
    auto cfg = quick_config();
    auto rep = harness::run_standard(ds, cfg);
    EXPECT_EQ(rep.protocol, "standard");
    ASSERT_EQ(rep.summary.test.size(), 2u);
    for (const auto& [m, a] : rep.summary.test) {
        EXPECT_TRUE(std::isfinite(a.nmae)) << m;
        EXPECT_TRUE(std::isfinite(a.nrmse)) << m;
        EXPECT_TRUE(std::isfinite(a.pc_mean)) << m;
        EXPECT_EQ(a.horizon, 4);
    }
    EXPECT_EQ(metrics::verify_summary(rep.records, rep.summary), "");
    EXPECT_TRUE(rep.manifest.contains("split"));
    EXPECT_TRUE(rep.manifest.contains("scaler"));
    EXPECT_EQ(rep.manifest["methods"]["fps"]["tau"].get<std::vector<int>>(), rep.alignment.taus());
    EXPECT_GT(rep.param_counts.at("fps"), rep.param_counts.at("erm"));

    // Test anchors: horizons starting in the last 20%.
    auto split = data::split_standard(ds.length());
    auto anchors = anchors_by_method(rep.records);
    EXPECT_EQ(*anchors["erm"].begin(), split.test.lo - 1);
    EXPECT_EQ(*anchors["erm"].rbegin(), ds.length() - 5);

    testutil::TempDir dir;
    harness::write_run(dir.path(), rep, {{"note", "test"}});
    for (const char* f : {"config.json", "manifest.json", "alignment.json", "records.csv", "summary.json", "plot.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    auto back = metrics::summary_from_json(data::read_json_file(dir / "summary.json"));
    EXPECT_EQ(metrics::verify_summary(metrics::read_records_csv(dir / "records.csv"), back), "");
    auto plot = testutil::read_file(dir / "plot.csv");
    EXPECT_EQ(plot.substr(0, plot.find('\n')), "anchor,h,t,time,split,y_true,erm,fps");
}

TEST(StandardRun, DeterministicAcrossReruns) {
    auto ds = small_synthetic();
    auto cfg = quick_config();
    testutil::TempDir dir;
    metrics::write_records_csv(harness::run_standard(ds, cfg).records, dir / "a.csv");
    metrics::write_records_csv(harness::run_standard(ds, cfg).records, dir / "b.csv");
    EXPECT_EQ(testutil::read_file(dir / "a.csv"), testutil::read_file(dir / "b.csv"));
}

TEST(StandardRun, CheckpointsPerMethodAndSeed) {
    auto ds = small_synthetic();
    auto cfg = quick_config();
    cfg.ensemble = 2;
    testutil::TempDir dir;
    harness::CheckpointSink sink(dir / "checkpoints");
    auto rep = harness::run_standard(ds, cfg, &sink);
    for (const char* f : {"erm_seed3_g", "erm_seed4_g", "fps_seed3_f", "fps_seed3_g", "fps_seed4_f", "fps_seed4_g"}) {
        auto p = dir / "checkpoints" / (std::string(f) + ".params");
        ASSERT_TRUE(std::filesystem::exists(p)) << f;
        std::ifstream in(p);
        EXPECT_NO_THROW(seq::load_params(in));
    }
    EXPECT_EQ(rep.manifest["seeds"].get<std::vector<std::uint64_t>>(), (std::vector<std::uint64_t>{3, 4}));
}

TEST(StandardRun, GridPicksLowestValidationLoss) {
    auto ds = small_synthetic();
    auto cfg = quick_config();
    cfg.methods = {"erm"};
    cfg.grid.learning_rate = {1e-6, 1e-2};
    auto rep = harness::run_standard(ds, cfg);
    EXPECT_EQ(rep.manifest["methods"]["erm"]["grid_index"].get<std::size_t>(), 1u);
    EXPECT_EQ(rep.summary.test.count("fps"), 0u);
}

TEST(StandardRun, InsufficientData) {
    auto ds = small_synthetic(60);
    auto cfg = quick_config();
    cfg.L = 40;
    EXPECT_THROW(harness::run_standard(ds, cfg), Error);
}

// ---------------------------------------------------------------------------
// Oracle comparison

TEST(OracleRun, IdenticalAnchorsWithGroundTruth) {
    auto ds = small_synthetic();
    auto cfg = quick_config();
    auto rep = harness::run_oracle(ds, cfg);
    auto anchors = anchors_by_method(rep.records);
    ASSERT_EQ(anchors.size(), 3u);
    EXPECT_EQ(anchors["erm"], anchors["fps"]);
    EXPECT_EQ(anchors["erm"], anchors["oracle"]);

    // Exactly the test anchors whose delayed windows exist.
    auto split = data::split_standard(ds.length());
    auto [scaled, sc] = data::fit_apply_scaler(ds, split.val.hi);
    std::set<std::size_t> expected;
    for (const auto& s : data::make_eval_windows(scaled, cfg.L, cfg.H, rep.alignment.taus(), split.test))
        if (s.x_dr) expected.insert(s.t);
    EXPECT_EQ(anchors["oracle"], expected);
}

TEST(OracleRun, NoExogenousSignalMakesMethodsAgree) {
    // Target independent of every feature, tau = H: the delayed windows carry
    // no information and all three arms should land within noise of each other.
    const std::size_t T = 600;
    const int L = 8, H = 4;
    std::vector<double> gaps_fps, gaps_oracle;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto x = testutil::white_noise(T, 10 + seed);
        auto e = testutil::white_noise(T, 20 + seed);
        std::vector<double> y(T);
        y[0] = 5;
        for (std::size_t t = 1; t < T; ++t) y[t] = 5 + 0.8 * (y[t - 1] - 5) + e[t];
        auto ds = testutil::make_dataset(y, {x}, 1);
        auto [scaled, sc] = data::fit_apply_scaler(ds, 480);
        auto train = data::make_windows(scaled, L, H, {H}, {0, 480});
        auto test = data::make_eval_windows(scaled, L, H, {H}, {480, T});
        fps::TrainConfig c;
        c.epochs = 15;
        c.f_hidden = 4;
        c.g_hidden = 4;
        c.seed = seed;
        auto fm = fps::make_fps_model(L, H, 1, 1, {H}, c);
        fm.scaler = sc;
        auto em = fps::make_erm_model(L, H, 1, c);
        em.scaler = sc;
        auto f = fps::fit_fps(fm, train, {}, c).first;
        auto o = fps::fit_oracle(fm, train, {}, c).first;
        auto r = fps::fit_erm(em, train, {}, c).first;
        Matrix truth(static_cast<Eigen::Index>(test.size()), H);
        for (std::size_t i = 0; i < test.size(); ++i)
            truth.row(static_cast<Eigen::Index>(i)) = sc.invert_target(test[i].y_hor).transpose();
        const double erm = metrics::nmae(truth, fps::predict_batch(r, test));
        gaps_fps.push_back(metrics::nmae(truth, fps::predict_batch(f, test)) / erm - 1);
        gaps_oracle.push_back(metrics::nmae(truth, fps::predict_oracle_batch(o, test)) / erm - 1);
    }
    for (std::size_t i = 0; i < gaps_fps.size(); ++i) {
        EXPECT_LT(std::abs(gaps_fps[i]), 0.05) << i;
        EXPECT_LT(std::abs(gaps_oracle[i]), 0.05) << i;
    }
}

// ---------------------------------------------------------------------------
// Real-time protocol

TEST(Realtime, ScheduleBounds) {
    auto cfg = quick_config();
    cfg.protocol.start = 100;
    cfg.protocol.stride = 20;
    EXPECT_EQ(harness::realtime_schedule(120, cfg), std::vector<std::size_t>{100});
    cfg.protocol.stride = 5;
    EXPECT_EQ(harness::realtime_schedule(120, cfg), (std::vector<std::size_t>{100, 105, 110, 115}));
    cfg.protocol.start = 116;
    try {
        harness::realtime_schedule(120, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(std::string(e.what()), "schedule empty");
    }
    cfg.protocol.start = 11;  // below L + H
    EXPECT_THROW(harness::realtime_schedule(120, cfg), Error);
}

TEST(Realtime, SingleStepWhenStrideCoversTheRest) {
    auto ds = small_synthetic(120);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 100;
    cfg.protocol.stride = 20;
    auto rep = harness::run_realtime(ds, cfg);
    EXPECT_EQ(rep.records.size(), 2u * 4u);
    for (const auto& r : rep.records) {
        EXPECT_EQ(r.anchor, 100u);
        EXPECT_EQ(r.split, "test");
        EXPECT_EQ(r.y_true, ds.target(static_cast<Eigen::Index>(100 + r.h)));
    }
}

TEST(Realtime, WarmStartWithZeroEpochsReusesModel) {
    auto ds = small_synthetic(160);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 120;
    cfg.protocol.stride = 10;
    cfg.protocol.retrain_epochs = 0;
    cfg.protocol.reestimate_tau = false;
    auto load = [](const std::filesystem::path& p) {
        std::ifstream in(p);
        return seq::load_params(in);
    };
    testutil::TempDir warm, cold;
    harness::CheckpointSink ws(warm.path()), cs(cold.path());
    harness::run_realtime(ds, cfg, &ws);
    for (const char* m : {"erm_seed3_g", "fps_seed3_f", "fps_seed3_g"}) {
        auto first = load(warm / (std::string("step0_") + m + ".params"));
        for (int step = 1; step < 4; ++step)
            EXPECT_TRUE(load(warm / ("step" + std::to_string(step) + "_" + m + ".params")) == first) << m << step;
    }
    cfg.protocol.warm_start = false;
    harness::run_realtime(ds, cfg, &cs);
    EXPECT_FALSE(load(cold / "step0_erm_seed3_g.params") == load(cold / "step1_erm_seed3_g.params"));
}

TEST(Realtime, ValidationStepsAreExcludedFromTest) {
    auto ds = small_synthetic(200);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 150;
    cfg.protocol.stride = 5;
    cfg.protocol.retrain_epochs = 1;
    auto rep = harness::run_realtime(ds, cfg);
    // 150..195 minus the H tail: 150, 155, ..., 195 -> t0 + 4 < 200 keeps 150..195.
    auto schedule = harness::realtime_schedule(200, cfg);
    const std::size_t n_val = schedule.size() / 5;
    auto val = anchors_by_method(rep.records, "val"), test = anchors_by_method(rep.records, "test");
    EXPECT_EQ(val["fps"].size(), n_val);
    EXPECT_EQ(test["fps"].size(), schedule.size() - n_val);
    EXPECT_EQ(*val["erm"].rbegin() + cfg.protocol.stride, *test["erm"].begin());
    EXPECT_EQ(rep.summary.test.at("fps").sequences, schedule.size() - n_val);
}

TEST(Realtime, GridSelectionByValidationNmae) {
    auto ds = small_synthetic(180);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 140;
    cfg.protocol.stride = 6;
    cfg.protocol.retrain_epochs = 1;
    cfg.protocol.val_fraction = 0.5;
    cfg.methods = {"erm"};
    cfg.grid.learning_rate = {1e-6, 1e-2};
    auto rep = harness::run_realtime(ds, cfg);
    auto scores = rep.manifest["grid_val_nmae"].get<std::vector<double>>();
    ASSERT_EQ(scores.size(), 2u);
    EXPECT_EQ(rep.manifest["grid_index"].get<std::size_t>(), scores[0] <= scores[1] ? 0u : 1u);
}

// ---------------------------------------------------------------------------
// Leakage audit

TEST(TrackedAccess, FlagsReadsPastTheOrigin) {
    auto ds = small_synthetic(100);
    harness::TrackedAccess acc(ds);
    acc.observe(41);
    acc.reveal_target(41, 45);
    EXPECT_EQ(acc.violations(), 0u);
    acc.observe(50);
    acc.reveal_target(46, 50);
    EXPECT_EQ(acc.violations(), 1u);
    EXPECT_EQ(acc.reveals(), 2u);
}

TEST(TrackedAccess, RealtimeRunNeverPeeks) {
    auto ds = small_synthetic(160);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 120;
    cfg.protocol.stride = 7;
    cfg.protocol.retrain_epochs = 1;
    harness::TrackedAccess acc(ds);
    auto rep = harness::run_realtime(acc, cfg);
    auto schedule = harness::realtime_schedule(160, cfg);
    EXPECT_EQ(acc.violations(), 0u);
    EXPECT_EQ(acc.reveals(), schedule.size());
    std::size_t i = 0;
    for (const auto& e : acc.events())
        if (!e.reveal) EXPECT_EQ(e.hi, schedule[i] + 1);
        else ++i;
    // Same answers as unrestricted access.
    auto plain = harness::run_realtime(ds, cfg);
    ASSERT_EQ(plain.records.size(), rep.records.size());
    for (std::size_t k = 0; k < rep.records.size(); ++k) EXPECT_EQ(plain.records[k].y_pred, rep.records[k].y_pred);
}

TEST(Realtime, PrefixIsAllTheModelSees) {
    // Corrupting everything after the last origin's lookback changes nothing
    // but the revealed truth.
    auto ds = small_synthetic(150);
    auto cfg = quick_config();
    cfg.protocol.kind = "realtime";
    cfg.protocol.start = 130;
    cfg.protocol.stride = 100;
    cfg.protocol.retrain_epochs = 1;
    auto poisoned = ds;
    for (Eigen::Index t = 131; t < 150; ++t) {
        poisoned.target(t) = 1e6;
        poisoned.features.row(t).setConstant(-1e6);
    }
    auto a = harness::run_realtime(ds, cfg), b = harness::run_realtime(poisoned, cfg);
    for (std::size_t k = 0; k < a.records.size(); ++k) EXPECT_EQ(a.records[k].y_pred, b.records[k].y_pred);
}

// ---------------------------------------------------------------------------
// Configuration parsing

TEST(Configs, UnknownKeysAreErrors) {
    EXPECT_THROW(harness::protocol_from_json({{"strid", 2}}), Error);
    EXPECT_THROW(harness::grid_from_json({{"lr", {0.1}}}), Error);
    EXPECT_THROW(fps::train_config_from_json({{"epoch", 3}}), Error);
    EXPECT_THROW(config::run_config_from_json({{"methodz", {"fps"}}}), Error);
    EXPECT_THROW(harness::protocol_from_json({{"stride", 0}}), Error);
    EXPECT_NO_THROW(harness::protocol_from_json({{"stride", 3}, {"kind", "realtime"}}));
}

TEST(Configs, RunConfigRoundTrip) {
    config::RunConfig rc;
    rc.synthetic = data::SyntheticSpec{};
    rc.synthetic->T = 500;
    rc.experiment = quick_config();
    rc.experiment.grid.g_hidden = {4, 8};
    rc.experiment.protocol.kind = "realtime";
    rc.experiment.protocol.stride = 3;
    auto j = config::to_json(rc);
    auto back = config::run_config_from_json(j);
    EXPECT_EQ(config::to_json(back), j);
    EXPECT_EQ(back.experiment.train.seed, 3u);
    EXPECT_EQ(back.experiment.grid.g_hidden, (std::vector<int>{4, 8}));
}
