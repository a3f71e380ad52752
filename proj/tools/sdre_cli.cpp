// sdre_cli: run / batch / compare / selftest front end.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "sdre/config.hpp"
#include "sdre/io.hpp"
#include "sdre/selftest.hpp"
#include "sdre/sim.hpp"

namespace {

using namespace sdre;

struct Flags {
    std::string config;
    std::string preset;
    std::string model;
    std::string estimator;
    std::string estimators;
    std::optional<std::size_t> runs;
    std::optional<double> dt;
    std::optional<double> horizon;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> particles;
    std::string out;
    std::size_t threads = 0;
    std::vector<std::string> sets;
    bool no_trajectories = false;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Key-value config file");
    cmd->add_option("--preset", f.preset, "pendulum-paper | vdp-paper");
    cmd->add_option("--model", f.model, "pendulum | vdp");
    cmd->add_option("--estimator", f.estimator, "sdre-kf | ekf | pf | none");
    cmd->add_option("--runs", f.runs, "Monte-Carlo runs");
    cmd->add_option("--dt", f.dt, "Integration step [s]");
    cmd->add_option("--horizon", f.horizon, "Simulated time [s]");
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--particles", f.particles, "Particle count for pf");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--threads", f.threads, "Worker threads (0 = hardware)");
    cmd->add_option("--set", f.sets, "Extra override, key=value (repeatable)");
    cmd->add_flag("--no-trajectories", f.no_trajectories, "Skip per-run CSVs");
}

std::vector<ConfigEntry> flag_entries(const Flags& f) {
    std::vector<ConfigEntry> es;
    auto put = [&](const char* key, std::string v) { es.push_back({key, std::move(v), std::string("--") + key}); };
    if (!f.preset.empty())
        put("preset", f.preset);
    if (!f.model.empty())
        put("model", f.model);
    if (!f.estimator.empty())
        put("estimator", f.estimator);
    if (f.runs)
        put("runs", std::to_string(*f.runs));
    if (f.dt)
        put("dt", format_double(*f.dt));
    if (f.horizon)
        put("horizon", format_double(*f.horizon));
    if (f.seed)
        put("seed", std::to_string(*f.seed));
    if (f.particles)
        put("particles", std::to_string(*f.particles));
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::ParseError, "--set expects key=value, got '" + s + "'");
        es.push_back({detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)), "--set"});
    }
    return es;
}

std::size_t thread_count(const Flags& f) {
    if (f.threads > 0)
        return f.threads;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<EstimatorKind> estimator_list(const Flags& f, const std::vector<ConfigEntry>& file_entries) {
    std::string spec = f.estimators;
    if (spec.empty())
        for (const auto& e : file_entries)
            if (e.key == "estimators")
                spec = e.value;
    if (spec.empty())
        spec = "sdre-kf,ekf,pf";
    std::vector<EstimatorKind> out;
    std::string tok;
    for (char c : spec + ",") {
        if (c == ',') {
            tok = detail::trim(tok);
            if (!tok.empty()) {
                try {
                    out.push_back(parse_estimator_kind(tok));
                } catch (const Error&) {
                    throw Error(ErrorCode::ParseError, "--estimators: unknown estimator '" + tok + "'");
                }
            }
            tok.clear();
        } else {
            tok += c;
        }
    }
    if (out.empty())
        throw Error(ErrorCode::ValidationError, "compare needs at least one estimator");
    return out;
}

EstimatorBatch run_estimator(SimConfig cfg, EstimatorKind kind, std::size_t threads) {
    cfg.estimator = kind;
    EstimatorBatch b;
    b.kind = kind;
    b.runs = run_batch(cfg, threads);
    b.metrics = compute_metrics(b.runs);
    return b;
}

void report(const SimConfig& cfg, const std::vector<EstimatorBatch>& batches, const Flags& f) {
    const ModelDef model = make_model(cfg.model_name, cfg.params);
    std::cout << metrics_markdown(cfg.model_name + ", " + std::to_string(cfg.n_runs) + " runs, seed " +
                                      std::to_string(cfg.seed),
                                  model.state_labels, batches);
    for (const auto& b : batches)
        if (b.metrics.n_excluded > 0)
            std::cout << display_name(b.kind) << ": " << b.metrics.n_excluded << " diverged run(s) excluded\n";
    if (!f.out.empty()) {
        const OutputBundle ob = emit_outputs(cfg, batches, f.out, !f.no_trajectories);
        std::cout << "wrote " << ob.trajectory_files.size() << " trajectories, " << ob.metrics_csv.string() << ", "
                  << ob.metrics_md.string() << ", " << ob.manifest.string() << "\n";
    }
    for (const auto& b : batches)
        check_divergence_ceiling(b.metrics);
}

int cmd_run(const Flags& f) {
    SimConfig cfg = parse_config(f.config, flag_entries(f));
    cfg.n_runs = 1;
    EstimatorBatch b;
    b.kind = cfg.estimator;
    b.runs.push_back(run_closed_loop(cfg, 0));
    b.metrics = compute_metrics(b.runs);
    const RunResult& r = b.runs.front();
    if (r.diverged)
        throw Error(ErrorCode::Diverged, "run diverged: " + r.failure);
    std::cout << "final x_true = " << format_vector(r.x_true.back()) << "\n"
              << "final x_hat  = " << format_vector(r.x_hat.back()) << "\n"
              << "cost         = " << format_double(r.accumulated_cost) << "\n";
    report(cfg, {b}, f);
    return 0;
}

int cmd_batch(const Flags& f) {
    SimConfig cfg = parse_config(f.config, flag_entries(f));
    report(cfg, {run_estimator(cfg, cfg.estimator, thread_count(f))}, f);
    return 0;
}

int cmd_compare(const Flags& f) {
    const auto file_entries = f.config.empty() ? std::vector<ConfigEntry>{} : read_config_file(f.config);
    SimConfig cfg = build_config(file_entries, flag_entries(f));
    std::vector<EstimatorBatch> batches;
    for (EstimatorKind k : estimator_list(f, file_entries))
        batches.push_back(run_estimator(cfg, k, thread_count(f)));
    report(cfg, batches, f);
    return 0;
}

int cmd_selftest(const Flags& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t runs = f.runs.value_or(5);
    const SelftestReport rep = run_selftest(runs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& v : rep.violations)
        std::cout << "VIOLATION " << v << "\n";
    std::printf("selftest: %zu checks, %zu violations, %.2f s\n", rep.checks, rep.violations.size(), secs);
    return rep.passed() ? 0 : 2;
}

int exit_code(ErrorCode c) {
    switch (c) {
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::BadWeights:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::AlphaOutOfRange: return 1;
    case ErrorCode::IoError: return 3;
    default: return 2;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SDRE control and estimation simulator"};
    app.require_subcommand(1);
    Flags f;

    auto* run = app.add_subcommand("run", "Single closed-loop run");
    auto* batch = app.add_subcommand("batch", "Monte-Carlo batch for one estimator");
    auto* compare = app.add_subcommand("compare", "Side-by-side tables for several estimators");
    auto* selftest = app.add_subcommand("selftest", "Invariant suite over both presets");
    for (auto* c : {run, batch, compare, selftest})
        add_common(c, f);
    compare->add_option("--estimators", f.estimators, "Comma list, default sdre-kf,ekf,pf");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed())
            return cmd_run(f);
        if (batch->parsed())
            return cmd_batch(f);
        if (compare->parsed())
            return cmd_compare(f);
        return cmd_selftest(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error [IoError]: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
