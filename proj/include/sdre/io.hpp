#pragma once

// Output bundle: per-run trajectory CSVs, metric tables (CSV + markdown) and
// a manifest that reproduces everything when fed back as a config file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdre/config.hpp"
#include "sdre/sim.hpp"

namespace sdre {

struct EstimatorBatch {
    EstimatorKind kind = EstimatorKind::None;
    std::vector<RunResult> runs;
    BatchMetrics metrics;
};

struct OutputBundle {
    std::vector<std::filesystem::path> trajectory_files;
    std::filesystem::path metrics_csv;
    std::filesystem::path metrics_md;
    std::filesystem::path manifest;
};

inline std::string trajectory_csv(const RunResult& r) {
    std::ostringstream o;
    const auto n = r.x_true.empty() ? 0 : r.x_true.front().size();
    const auto p = r.y.empty() ? 0 : r.y.front().size();
    const auto m = r.u.empty() ? 0 : r.u.front().size();
    o << "t";
    for (Eigen::Index i = 1; i <= n; ++i)
        o << ",x_true_" << i;
    for (Eigen::Index i = 1; i <= n; ++i)
        o << ",x_hat_" << i;
    for (Eigen::Index i = 1; i <= p; ++i)
        o << ",y_" << i;
    for (Eigen::Index i = 1; i <= m; ++i)
        o << ",u_" << i;
    o << "\n";
    for (std::size_t k = 0; k < r.times.size(); ++k) {
        o << format_double(r.times[k]);
        for (const auto* v : {&r.x_true[k], &r.x_hat[k], &r.y[k], &r.u[k]})
            for (Eigen::Index i = 0; i < v->size(); ++i)
                o << "," << format_double((*v)(i));
        o << "\n";
    }
    return o.str();
}

/// Long-form metric CSV: one row per (metric, state), one column per estimator.
inline std::string metrics_csv(const std::vector<std::string>& labels, const std::vector<EstimatorBatch>& batches) {
    std::ostringstream o;
    o << "metric,state";
    for (const auto& b : batches)
        o << "," << display_name(b.kind);
    o << "\n";
    if (batches.empty())
        return o.str();
    for (const char* metric : {"MSE", "MAE"}) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            o << metric << "," << labels[i];
            for (const auto& b : batches) {
                const Vec& v = std::string_view(metric) == "MSE" ? b.metrics.mse : b.metrics.mae;
                o << "," << format_double(v(static_cast<Eigen::Index>(i)));
            }
            o << "\n";
        }
    }
    return o.str();
}

/// Markdown tables laid out like the published comparison tables: rows are
/// states, columns are estimators, the best entry of each row in bold.
inline std::string metrics_markdown(const std::string& title, const std::vector<std::string>& labels,
                                    const std::vector<EstimatorBatch>& batches) {
    std::ostringstream o;
    auto fixed = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.5f", v);
        return std::string(buf);
    };
    for (const char* metric : {"MSE", "MAE"}) {
        o << "### " << metric << " - " << title << "\n\n";
        std::vector<std::vector<std::string>> cells;
        std::vector<std::string> header{"state"};
        for (const auto& b : batches)
            header.emplace_back(display_name(b.kind));
        cells.push_back(header);
        for (std::size_t i = 0; i < labels.size() && !batches.empty(); ++i) {
            std::vector<std::string> row{labels[i]};
            std::size_t best = 0;
            for (std::size_t j = 0; j < batches.size(); ++j) {
                const Vec& v = std::string_view(metric) == "MSE" ? batches[j].metrics.mse : batches[j].metrics.mae;
                const Vec& vb = std::string_view(metric) == "MSE" ? batches[best].metrics.mse : batches[best].metrics.mae;
                if (v(static_cast<Eigen::Index>(i)) < vb(static_cast<Eigen::Index>(i)))
                    best = j;
            }
            for (std::size_t j = 0; j < batches.size(); ++j) {
                const Vec& v = std::string_view(metric) == "MSE" ? batches[j].metrics.mse : batches[j].metrics.mae;
                std::string s = fixed(v(static_cast<Eigen::Index>(i)));
                row.push_back(batches.size() > 1 && j == best ? "**" + s + "**" : s);
            }
            cells.push_back(row);
        }
        std::vector<std::size_t> width(header.size(), 3);
        for (const auto& row : cells)
            for (std::size_t c = 0; c < row.size(); ++c)
                width[c] = std::max(width[c], row[c].size());
        auto emit_row = [&](const std::vector<std::string>& row) {
            o << "|";
            for (std::size_t c = 0; c < row.size(); ++c)
                o << " " << row[c] << std::string(width[c] - row[c].size(), ' ') << " |";
            o << "\n";
        };
        emit_row(cells.front());
        o << "|";
        for (std::size_t c = 0; c < header.size(); ++c)
            o << (c == 0 ? ":" : "") << std::string(width[c] + (c == 0 ? 1 : 1), '-') << (c == 0 ? "" : ":") << "|";
        o << "\n";
        for (std::size_t r = 1; r < cells.size(); ++r)
            emit_row(cells[r]);
        o << "\n";
    }
    return o.str();
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    f << text;
    if (!f)
        throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

} // namespace detail

/// Writes the bundle under `dir`:
///   <estimator>/run_NNN.csv, metrics.csv, metrics.md, manifest.txt
inline OutputBundle emit_outputs(const SimConfig& cfg, const std::vector<EstimatorBatch>& batches,
                                 const std::filesystem::path& dir, bool write_trajectories = true) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());

    const ModelDef model = make_model(cfg.model_name, cfg.params);
    OutputBundle out;

    std::string estimators;
    std::string diverged;
    for (const auto& b : batches) {
        estimators += (estimators.empty() ? "" : ", ") + std::string(to_string(b.kind));
        if (write_trajectories) {
            const fs::path sub = dir / std::string(to_string(b.kind));
            fs::create_directories(sub, ec);
            if (ec)
                throw Error(ErrorCode::IoError, "cannot create '" + sub.string() + "': " + ec.message());
            for (const auto& r : b.runs) {
                char name[32];
                std::snprintf(name, sizeof name, "run_%03zu.csv", r.run_index);
                out.trajectory_files.push_back(sub / name);
                detail::write_file(out.trajectory_files.back(), trajectory_csv(r));
            }
        }
        for (const auto& r : b.runs)
            if (r.diverged)
                diverged += (diverged.empty() ? "" : ", ") + std::string(to_string(b.kind)) + ":" +
                            std::to_string(r.run_index);
    }

    out.metrics_csv = dir / "metrics.csv";
    detail::write_file(out.metrics_csv, metrics_csv(model.state_labels, batches));
    out.metrics_md = dir / "metrics.md";
    detail::write_file(out.metrics_md,
                       metrics_markdown(cfg.model_name + ", " + std::to_string(cfg.n_runs) + " runs",
                                        model.state_labels, batches));

    std::string manifest = emit_manifest(cfg);
    manifest += "estimators = " + (estimators.empty() ? std::string(to_string(cfg.estimator)) : estimators) + "\n";
    manifest += "# diverged_runs = " + (diverged.empty() ? std::string("none") : diverged) + "\n";
    out.manifest = dir / "manifest.txt";
    detail::write_file(out.manifest, manifest);
    return out;
}

} // namespace sdre
