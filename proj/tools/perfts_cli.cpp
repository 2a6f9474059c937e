// perfts: command-line entry point for the forecasting pipeline.

#include "perfts/align.hpp"
#include "perfts/config.hpp"
#include "perfts/data.hpp"
#include "perfts/error.hpp"
#include "perfts/fps.hpp"
#include "perfts/gradcheck.hpp"
#include "perfts/harness.hpp"
#include "perfts/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace perfts;

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  unexpected internal error\n"
    "  2  usage: bad flags, bad or unknown config keys\n"
    "  3  io: missing or unwritable files\n"
    "  4  data: malformed CSV, missing values, too-short series, no windows\n"
    "  5  invariant: failed check (gradient check, aggregate mismatch, leakage)\n"
    "  6  numeric: divergence or unstable synthetic spec\n"
    "Errors are printed to stderr as one line:\n"
    "  error kind=<kind> code=<n> message=<text>";

// Flags shared by the training and evaluation subcommands. Each value is
// applied only when given, on top of --config.
struct RunFlags {
    std::string config, data, dataset_config, synthetic, output, metric, optimizer;
    std::vector<std::string> methods;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> ensemble;
    std::optional<int> L, H, epochs, batch_size, patience, f_hidden, g_hidden, pretrain_epochs;
    std::optional<double> lr, lambda1, lambda2, clip;
    bool two_phase = false;
    // realtime protocol
    std::optional<std::size_t> start, stride;
    std::optional<int> retrain_epochs;
    std::optional<double> val_fraction;
    bool cold_start = false, frozen_tau = false;
};

void add_run_flags(CLI::App* app, RunFlags& f, bool realtime, bool method_list) {
    app->add_option("--config", f.config, "Run config JSON; flags override its values")->check(CLI::ExistingFile);
    app->add_option("--data", f.data, "Dataset CSV, or a directory containing data.csv and dataset.json");
    app->add_option("--dataset-config", f.dataset_config, "Dataset config JSON (default: dataset.json beside the CSV)");
    app->add_option("--synthetic", f.synthetic, "Synthetic spec JSON used instead of --data")->check(CLI::ExistingFile);
    if (method_list)
        app->add_option("--methods", f.methods, "Methods to run: fps, erm (comma separated)")->delimiter(',');
    app->add_option("-L,--lookback", f.L, "Lookback window length L");
    app->add_option("-H,--horizon", f.H, "Horizon length H");
    app->add_option("--metric", f.metric, "Alignment similarity: cosine, pearson, neg-euclidean");
    app->add_option("--seed", f.seed, "Seed for all randomness; ensembles use seed, seed+1, ...");
    app->add_option("--ensemble", f.ensemble, "Number of ensemble members");
    app->add_option("--epochs", f.epochs, "Maximum training epochs");
    app->add_option("--lr", f.lr, "Learning rate");
    app->add_option("--batch-size", f.batch_size, "Mini-batch size");
    app->add_option("--optimizer", f.optimizer, "Optimizer: adam or sgd");
    app->add_option("--clip", f.clip, "Global gradient-norm clip threshold");
    app->add_option("--lambda1", f.lambda1, "Weight of the delay-translation loss");
    app->add_option("--lambda2", f.lambda2, "Weight of the forecasting loss");
    app->add_option("--patience", f.patience, "Early-stopping patience in epochs (0 disables)");
    app->add_option("--f-hidden", f.f_hidden, "Hidden size of the translation model");
    app->add_option("--g-hidden", f.g_hidden, "Hidden size of the forecaster");
    app->add_flag("--two-phase", f.two_phase, "Pretrain the translation model, then fit the forecaster with it frozen");
    app->add_option("--pretrain-epochs", f.pretrain_epochs, "Two-phase pretraining epochs (0: same as --epochs)");
    app->add_option("-o,--output", f.output, "Output run directory");
    if (realtime) {
        app->add_option("--start", f.start, "First forecast origin t0 (0: 60% of T)");
        app->add_option("--stride", f.stride, "Steps between retrains");
        app->add_option("--retrain-epochs", f.retrain_epochs, "Epochs per warm-started retrain");
        app->add_option("--val-fraction", f.val_fraction, "Fraction of steps used for validation");
        app->add_flag("--cold-start", f.cold_start, "Reinitialize models at every step");
        app->add_flag("--frozen-tau", f.frozen_tau, "Keep the first step's alignment instead of re-estimating");
    }
}

config::RunConfig build_run_config(const RunFlags& f, const std::string& kind) {
    config::RunConfig rc = f.config.empty() ? config::RunConfig{} : config::load_run_config(f.config);
    if (f.config.empty()) rc.window_from_dataset = true;
    auto& e = rc.experiment;
    if (!f.synthetic.empty()) {
        rc.synthetic = data::synthetic_spec_from_json(data::read_json_file(f.synthetic));
        rc.data.clear();
    }
    if (!f.data.empty()) {
        rc.data = f.data;
        rc.synthetic.reset();
    }
    if (!f.dataset_config.empty()) rc.dataset_config = f.dataset_config;
    if (!f.methods.empty()) e.methods = f.methods;
    if (f.L || f.H) rc.window_from_dataset = false;
    if (f.L) e.L = *f.L;
    if (f.H) e.H = *f.H;
    if (!f.metric.empty()) e.metric = align::metric_from_string(f.metric);
    if (f.seed) e.train.seed = *f.seed;
    if (f.ensemble) e.ensemble = *f.ensemble;
    if (f.epochs) e.train.epochs = *f.epochs;
    if (f.lr) e.train.learning_rate = *f.lr;
    if (f.batch_size) e.train.batch_size = *f.batch_size;
    if (!f.optimizer.empty()) e.train.optimizer = fps::optimizer_from_string(f.optimizer);
    if (f.clip) e.train.clip = *f.clip;
    if (f.lambda1) e.train.lambda1 = *f.lambda1;
    if (f.lambda2) e.train.lambda2 = *f.lambda2;
    if (f.patience) e.train.patience = *f.patience;
    if (f.f_hidden) e.train.f_hidden = *f.f_hidden;
    if (f.g_hidden) e.train.g_hidden = *f.g_hidden;
    if (f.two_phase) e.train.two_phase = true;
    if (f.pretrain_epochs) e.train.pretrain_epochs = *f.pretrain_epochs;
    if (!f.output.empty()) rc.output = f.output;
    if (f.start) e.protocol.start = *f.start;
    if (f.stride) e.protocol.stride = *f.stride;
    if (f.retrain_epochs) e.protocol.retrain_epochs = *f.retrain_epochs;
    if (f.val_fraction) e.protocol.val_fraction = *f.val_fraction;
    if (f.cold_start) e.protocol.warm_start = false;
    if (f.frozen_tau) e.protocol.reestimate_tau = false;
    e.protocol.kind = kind == "train" ? e.protocol.kind : kind;
    if (!rc.synthetic && rc.data.empty()) fail(ErrorKind::usage, "no dataset: give --data, --synthetic or --config");
    if (rc.output.empty()) fail(ErrorKind::usage, "no output directory: give -o");
    return rc;
}

void print_summary(const metrics::Summary& s) {
    std::printf("%-8s %-6s %9s %10s %10s %10s %11s\n", "method", "split", "sequences", "nmae", "nrmse", "pc",
                "pc_excluded");
    auto rows = [](const std::map<std::string, metrics::Aggregate>& m, const char* split) {
        for (const auto& [name, a] : m)
            std::printf("%-8s %-6s %9zu %10.6f %10.6f %10.6f %11zu\n", name.c_str(), split, a.sequences, a.nmae,
                        a.nrmse, a.pc_mean, a.pc_excluded);
    };
    rows(s.test, "test");
    rows(s.validation, "val");
}

int cmd_synth(const data::SyntheticSpec& base, std::optional<double> snr, int L, const std::string& out) {
    data::SyntheticSpec spec = snr ? data::with_target_snr(base, *snr) : base;
    data::Dataset ds = data::generate_synthetic(spec);
    data::write_synthetic(ds, spec, L, out);
    std::printf("wrote %s rows=%zu planted_lead=%d planted_tau=%d sigma_y=%.6g\n", (fs::path(out) / "data.csv").c_str(),
                ds.length(), spec.lag_effect, spec.horizon - spec.lag_effect, spec.sigma_y);
    return 0;
}

int cmd_align(RunFlags& f, const std::string& out_file) {
    config::RunConfig rc;
    rc.window_from_dataset = !f.L && !f.H;
    rc.data = f.data;
    rc.dataset_config = f.dataset_config;
    if (!f.synthetic.empty()) {
        rc.synthetic = data::synthetic_spec_from_json(data::read_json_file(f.synthetic));
        rc.data.clear();
    }
    if (f.L) rc.experiment.L = *f.L;
    if (f.H) rc.experiment.H = *f.H;
    data::Dataset ds = config::load_dataset(rc);
    const auto& e = rc.experiment;
    const auto split = data::split_standard(ds.length(), e.train_ratio, e.val_ratio);
    auto [scaled, scaler] = data::fit_apply_scaler(ds, split.train.hi);
    align::Metric metric = f.metric.empty() ? align::Metric::cosine : align::metric_from_string(f.metric);
    auto res = align::align_all(scaled, split.train, e.H, metric);
    std::printf("%-16s %4s %10s %s\n", "feature", "tau", "score", "metric");
    for (const auto& a : res.features) {
        std::printf("%-16s %4d %10.6f %s\n", a.feature.c_str(), a.tau, a.score, align::to_string(metric).c_str());
        for (const auto& w : a.warnings) std::printf("warning %s: %s\n", a.feature.c_str(), w.c_str());
    }
    if (!out_file.empty()) {
        std::ofstream out(out_file);
        if (!out) fail(ErrorKind::io, "cannot write " + out_file);
        out << align::to_json(res).dump(2) << '\n';
    }
    return 0;
}

int cmd_train(const RunFlags& f, const std::string& method) {
    if (method != "fps" && method != "erm") fail(ErrorKind::usage, "--method must be fps or erm");
    config::RunConfig rc = build_run_config(f, "train");
    rc.experiment.methods = {method};
    data::Dataset ds = config::load_dataset(rc);
    rc.experiment.validate();
    const auto& e = rc.experiment;
    const auto split = data::split_standard(ds.length(), e.train_ratio, e.val_ratio);
    const fs::path dir = rc.output;
    fs::create_directories(dir / "checkpoints");
    harness::CheckpointSink sink(dir / "checkpoints");
    nlohmann::json man{{"method", method},
                       {"split", {{"train", {split.train.lo, split.train.hi}}, {"val", {split.val.lo, split.val.hi}}}}};
    fps::LossReport rep;
    if (method == "fps") {
        auto [scaled, scaler] = data::fit_apply_scaler(ds, split.train.hi);
        auto alignment = align::align_all(scaled, split.train, e.H, e.metric);
        auto [model, r] = fps::train_fps(ds, alignment, e.train, e.L, e.H, split.train, split.val);
        rep = r;
        sink.save("fps_f", model.f_params);
        sink.save("fps_g", model.g_params);
        man["tau"] = model.tau;
        man["config_hash"] = model.config_hash;
        man["param_count"] = model.param_count();
        man["scaler"] = harness::detail::scaler_json(model.scaler, ds);
        std::ofstream(dir / "alignment.json") << align::to_json(alignment).dump(2) << '\n';
    } else {
        auto [model, r] = fps::train_erm(ds, e.train, e.L, e.H, split.train, split.val);
        rep = r;
        sink.save("erm_g", model.g_params);
        man["config_hash"] = model.config_hash;
        man["param_count"] = model.param_count();
        man["scaler"] = harness::detail::scaler_json(model.scaler, ds);
    }
    man["seed"] = e.train.seed;
    man["chosen_epoch"] = rep.chosen_epoch;
    man["epochs_run"] = rep.epochs_run;
    man["train_dt"] = rep.train_dt;
    man["train_ts"] = rep.train_ts;
    man["train_total"] = rep.train_total;
    man["val_ts"] = rep.val_ts;
    std::ofstream(dir / "config.json") << config::to_json(rc).dump(2) << '\n';
    std::ofstream(dir / "manifest.json") << man.dump(2) << '\n';
    const double best = rep.val_ts.empty() ? std::nan("") : rep.val_ts[static_cast<std::size_t>(rep.chosen_epoch - 1)];
    std::printf("method=%s epochs_run=%d chosen_epoch=%d val_loss=%.6f output=%s\n", method.c_str(), rep.epochs_run,
                rep.chosen_epoch, best, dir.c_str());
    return 0;
}

int cmd_protocol(const RunFlags& f, const std::string& kind) {
    config::RunConfig rc = build_run_config(f, kind);
    data::Dataset ds = config::load_dataset(rc);
    rc.experiment.validate();
    const fs::path dir = rc.output;
    harness::CheckpointSink sink(dir / "checkpoints");
    harness::EvalReport report;
    if (kind == "standard") report = harness::run_standard(ds, rc.experiment, &sink);
    else if (kind == "oracle") report = harness::run_oracle(ds, rc.experiment, &sink);
    else report = harness::run_realtime(ds, rc.experiment, &sink);
    harness::write_run(dir, report, config::to_json(rc));
    print_summary(report.summary);
    std::printf("output=%s\n", dir.c_str());
    return 0;
}

int cmd_gradcheck(std::size_t configs, std::uint64_t seed) {
    auto res = gradcheck::run_suite(configs, seed);
    std::map<std::string, double> by_kind;
    for (const auto& c : res.cases) by_kind[c.kind] = std::max(by_kind[c.kind], c.max_rel_error);
    for (const auto& [k, v] : by_kind) std::printf("%-14s max_rel_error=%.3e\n", k.c_str(), v);
    std::printf("max_rel_error=%.3e configs=%zu entries=%zu\n", res.max_rel_error, res.cases.size(), res.checked);
    if (!(res.max_rel_error < 1e-4)) fail(ErrorKind::invariant, "gradient check failed");
    return 0;
}

int cmd_report(const std::string& run, std::string records, std::string summary) {
    if (!run.empty()) {
        if (records.empty()) records = (fs::path(run) / "records.csv").string();
        if (summary.empty() && fs::exists(fs::path(run) / "summary.json")) summary = (fs::path(run) / "summary.json").string();
    }
    if (records.empty()) fail(ErrorKind::usage, "give --run or --records");
    auto recs = metrics::read_records_csv(records);
    std::string protocol = recs.empty() ? "standard" : recs.front().protocol;
    if (!summary.empty()) {
        auto reported = metrics::summary_from_json(data::read_json_file(summary));
        if (auto diff = metrics::verify_summary(recs, reported); !diff.empty())
            fail(ErrorKind::invariant, "aggregate mismatch: " + diff);
        protocol = reported.protocol;
    }
    print_summary(metrics::summarize(recs, protocol));
    if (!summary.empty()) std::printf("summary verified\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"perfts: lag-aligned two-stage forecasting with performative features"};
    app.footer(kExitCodes);
    app.require_subcommand(1);

    // synth
    data::SyntheticSpec spec;
    std::optional<double> snr;
    int synth_L = 16;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Write a synthetic feedback-loop dataset with metadata");
    synth->add_option("--T", spec.T, "Series length")->capture_default_str();
    synth->add_option("--d1", spec.lag_response, "Steps from target to feature response")->capture_default_str();
    synth->add_option("--d2", spec.lag_effect, "Steps from feature to target effect (planted lead)")->capture_default_str();
    synth->add_option("--a", spec.a, "Target autoregression coefficient")->capture_default_str();
    synth->add_option("--b", spec.b, "Feature-to-target coupling")->capture_default_str();
    synth->add_option("--c", spec.c, "Feature autoregression coefficient")->capture_default_str();
    synth->add_option("--g", spec.g, "Target-to-feature coupling")->capture_default_str();
    synth->add_option("--sigma", spec.sigma_y, "Target noise level")->capture_default_str();
    synth->add_option("--sigma-x", spec.sigma_x, "Feature noise level")->capture_default_str();
    synth->add_option("--snr", snr, "Set the target noise level from a signal-to-noise ratio (overrides --sigma)");
    synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
    synth->add_option("--burn-in", spec.burn_in, "Discarded warm-up steps")->capture_default_str();
    synth->add_option("--flip-step", spec.flip_step, "Step at which a coupling changes sign (0: never)")->capture_default_str();
    synth->add_option("--flip-coupling", spec.flip_coupling, "Coupling that flips: b or g")->capture_default_str();
    synth->add_option("-H,--horizon", spec.horizon, "Horizon written to dataset.json")->capture_default_str();
    synth->add_option("-L,--lookback", synth_L, "Lookback written to dataset.json")->capture_default_str();
    synth->add_option("-o,--output", synth_out, "Output directory")->required();

    // align
    RunFlags align_flags;
    std::string align_out;
    auto* align_cmd = app.add_subcommand("align", "Estimate per-feature delays on the training range");
    align_cmd->add_option("--data", align_flags.data, "Dataset CSV, or a directory containing data.csv and dataset.json");
    align_cmd->add_option("--dataset-config", align_flags.dataset_config, "Dataset config JSON");
    align_cmd->add_option("--synthetic", align_flags.synthetic, "Synthetic spec JSON used instead of --data")
        ->check(CLI::ExistingFile);
    align_cmd->add_option("-L,--lookback", align_flags.L, "Lookback window length L");
    align_cmd->add_option("-H,--horizon", align_flags.H, "Horizon length H (search range 0..H)");
    align_cmd->add_option("--metric", align_flags.metric, "cosine, pearson or neg-euclidean");
    align_cmd->add_option("-o,--output", align_out, "Write the alignment JSON here");

    // train
    RunFlags train_flags;
    std::string train_method = "fps";
    auto* train = app.add_subcommand("train", "Train one model on the training range with validation early stopping");
    add_run_flags(train, train_flags, false, false);
    train->add_option("--method", train_method, "fps or erm")->capture_default_str();

    RunFlags eval_flags, rt_flags, oracle_flags;
    auto* eval = app.add_subcommand("eval", "Standard 60/20/20 protocol: tune, retrain on train+val, score test");
    add_run_flags(eval, eval_flags, false, true);
    auto* realtime = app.add_subcommand("realtime", "Rolling-origin retraining and forecasting");
    add_run_flags(realtime, rt_flags, true, true);
    auto* oracle = app.add_subcommand("oracle", "ERM vs estimated vs true delayed windows on identical anchors");
    add_run_flags(oracle, oracle_flags, false, false);

    std::size_t gc_configs = 50;
    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central finite differences");
    gc->add_option("--configs", gc_configs, "Number of random configurations")->capture_default_str();
    gc->add_option("--seed", gc_seed, "Seed for the random configurations")->capture_default_str();

    std::string rep_run, rep_records, rep_summary;
    auto* report = app.add_subcommand("report", "Recompute aggregates from a records CSV and verify a summary");
    report->add_option("--run", rep_run, "Run directory (uses records.csv and summary.json)");
    report->add_option("--records", rep_records, "Records CSV");
    report->add_option("--summary", rep_summary, "Summary JSON to verify against the records");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error kind=usage code=2 message=%s\n", e.what());
        return 2;
    }

    try {
        if (*synth) return cmd_synth(spec, snr, synth_L, synth_out);
        if (*align_cmd) return cmd_align(align_flags, align_out);
        if (*train) return cmd_train(train_flags, train_method);
        if (*eval) return cmd_protocol(eval_flags, "standard");
        if (*realtime) return cmd_protocol(rt_flags, "realtime");
        if (*oracle) return cmd_protocol(oracle_flags, "oracle");
        if (*gc) return cmd_gradcheck(gc_configs, gc_seed);
        if (*report) return cmd_report(rep_run, rep_records, rep_summary);
    } catch (const Error& e) {
        std::fprintf(stderr, "error kind=%s code=%d message=%s\n", std::string(error_kind_name(e.kind())).c_str(),
                     static_cast<int>(e.kind()), e.what());
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error kind=internal code=1 message=%s\n", e.what());
        return 1;
    }
    return 0;
}
