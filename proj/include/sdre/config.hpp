#pragma once

// Flat key-value experiment configuration.
//
//   # comment
//   preset = pendulum-paper
//   noise.Rn = 0.1
//   controller.Qw = [[10, 0], [0, 10]]
//   x0 = [3.6415926535897931, 0]
//
// Matrices are bracketed row lists; a bare number is a 1x1 matrix. Values
// are layered preset -> file -> command-line overrides.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdre/error.hpp"
#include "sdre/sim.hpp"

namespace sdre {

inline constexpr std::string_view kArtifactVersion = "sdre-lqg 1.0.0";

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline Mat diag2(double a, double b) {
    Mat M = Mat::Zero(2, 2);
    M(0, 0) = a;
    M(1, 1) = b;
    return M;
}

inline Mat scalar_mat(double v) { return Mat::Constant(1, 1, v); }

/// Injected noise used by the presets. The published disturbance and sensor
/// figures (0.1 each) are read as standard deviations: the plant receives a
/// white disturbance of intensity 0.1^2 and every sample carries sensor noise
/// of variance 0.1^2. EKF and PF assume covariances of 0.1; the SDRE-KF is
/// tuned with the same weighting matrices as the SDRE controller.
inline constexpr double kPresetNoiseLevel = 0.1;

inline SimConfig pendulum_paper_preset() {
    SimConfig c;
    c.model_name = "pendulum";
    c.params.pendulum = PendulumParams{1.5, 0.5, 0.5, 9.81};
    c.estimator = EstimatorKind::SdreKf;
    c.dt = 0.01;
    c.horizon = 10.0;
    c.n_runs = 30;
    c.seed = 1;
    c.controller.Qw = diag2(10.0, 10.0);
    c.controller.Rw = scalar_mat(0.1);
    c.noise.Qd = diag2(0.1, 0.1);
    c.noise.Rn = scalar_mat(0.1);
    c.sdre_kf_noise = {c.controller.Qw, c.controller.Rw};
    const double var = kPresetNoiseLevel * kPresetNoiseLevel;
    c.truth_noise.Qd = diag2(var, var);
    c.truth_noise.Rn = scalar_mat(var);
    c.pf_particles = 500;
    c.x0 = make_pendulum_model(c.params.pendulum).initial_state;
    c.x0_hat = c.x0;
    c.P0 = diag2(0.1, 0.1);
    return c;
}

inline SimConfig vdp_paper_preset() {
    SimConfig c = pendulum_paper_preset();
    c.model_name = "vdp";
    c.params.vdp = VdpParams{0.7};
    c.controller.Qw = diag2(1.0, 1.0);
    c.controller.Rw = scalar_mat(0.1);
    c.sdre_kf_noise = {c.controller.Qw, c.controller.Rw};
    c.x0 = make_vdp_model(c.params.vdp).initial_state;
    c.x0_hat = c.x0;
    return c;
}

inline SimConfig preset(std::string_view name) {
    if (name == "pendulum-paper")
        return pendulum_paper_preset();
    if (name == "vdp-paper")
        return vdp_paper_preset();
    throw Error(ErrorCode::ValidationError,
                "unknown preset '" + std::string(name) + "' (expected pendulum-paper or vdp-paper)");
}

inline std::string preset_for_model(std::string_view model) {
    if (model == "pendulum")
        return "pendulum-paper";
    if (model == "vdp")
        return "vdp-paper";
    throw Error(ErrorCode::ValidationError, "unknown model '" + std::string(model) + "'");
}

// ---------------------------------------------------------------------------
// Value formatting / parsing
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_vector(const Vec& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i)
        s += (i ? ", " : "") + format_double(v(i));
    return s + "]";
}

inline std::string format_matrix(const Mat& M) {
    std::string s = "[";
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        s += r ? ", [" : "[";
        for (Eigen::Index c = 0; c < M.cols(); ++c)
            s += (c ? ", " : "") + format_double(M(r, c));
        s += "]";
    }
    return s + "]";
}

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return std::string(s.substr(b, e - b));
}

inline double parse_double(std::string_view s, const std::string& where) {
    const std::string t = trim(s);
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (t.empty() || ec != std::errc() || ptr != last)
        throw Error(ErrorCode::ParseError, where + ": expected a number, got '" + t + "'");
    return v;
}

// Recursive bracket parser producing a list of rows.
class MatrixParser {
public:
    MatrixParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

    std::vector<std::vector<double>> parse() {
        skip_ws();
        std::vector<std::vector<double>> rows;
        if (pos_ < s_.size() && s_[pos_] == '[') {
            ++pos_;
            skip_ws();
            if (peek() == ']') {
                ++pos_; // "[]": empty matrix
            } else if (peek() == '[') {
                while (true) {
                    rows.push_back(parse_row());
                    skip_ws();
                    if (peek() == ',') {
                        ++pos_;
                        skip_ws();
                        continue;
                    }
                    expect(']');
                    break;
                }
            } else {
                // flat list -> column vector semantics handled by caller
                rows.push_back(parse_numbers_until(']'));
                expect(']');
            }
        } else {
            rows.push_back({parse_double(s_.substr(pos_), where_)});
            pos_ = s_.size();
        }
        skip_ws();
        if (pos_ != s_.size())
            fail("trailing characters");
        return rows;
    }

private:
    std::vector<double> parse_row() {
        expect('[');
        auto row = parse_numbers_until(']');
        expect(']');
        return row;
    }

    std::vector<double> parse_numbers_until(char close) {
        std::vector<double> out;
        while (true) {
            skip_ws();
            const std::size_t start = pos_;
            while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != close)
                ++pos_;
            out.push_back(parse_double(s_.substr(start, pos_ - start), where_));
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            break;
        }
        return out;
    }

    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
    }
    void expect(char c) {
        skip_ws();
        if (peek() != c)
            fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(ErrorCode::ParseError, where_ + ": " + msg + " in '" + std::string(s_) + "'");
    }

    std::string_view s_;
    std::string where_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline Mat parse_matrix(std::string_view text, const std::string& where = "value") {
    auto rows = detail::MatrixParser(text, where).parse();
    if (rows.empty())
        return Mat(0, 0);
    const std::size_t cols = rows.front().size();
    for (const auto& r : rows)
        if (r.size() != cols)
            throw Error(ErrorCode::ParseError, where + ": ragged matrix rows");
    Mat M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return M;
}

inline Vec parse_vector(std::string_view text, const std::string& where = "value") {
    Mat M = parse_matrix(text, where);
    if (M.rows() != 1 && M.cols() != 1)
        throw Error(ErrorCode::ParseError, where + ": expected a vector");
    return Eigen::Map<Vec>(M.data(), M.size());
}

inline bool parse_bool(std::string_view text, const std::string& where) {
    const std::string t = detail::trim(text);
    if (t == "true" || t == "1" || t == "yes")
        return true;
    if (t == "false" || t == "0" || t == "no")
        return false;
    throw Error(ErrorCode::ParseError, where + ": expected true/false, got '" + t + "'");
}

inline std::uint64_t parse_u64(std::string_view text, const std::string& where) {
    const std::string t = detail::trim(text);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw Error(ErrorCode::ParseError, where + ": expected a non-negative integer, got '" + t + "'");
    return v;
}

// ---------------------------------------------------------------------------
// Key application
// ---------------------------------------------------------------------------

/// A single `key = value` assignment with its origin for diagnostics.
struct ConfigEntry {
    std::string key;
    std::string value;
    std::string origin; // "file.cfg:12" or "--dt"
};

inline void apply_entry(SimConfig& c, const ConfigEntry& e) {
    const std::string& k = e.key;
    const std::string& v = e.value;
    const std::string where = e.origin + " (" + k + ")";
    auto num = [&] { return detail::parse_double(v, where); };
    auto count = [&] { return static_cast<std::size_t>(parse_u64(v, where)); };

    if (k == "preset" || k == "artifact_version" || k == "estimators")
        return; // handled before layering, or consumed by the CLI
    if (k == "model") {
        c.model_name = detail::trim(v);
    } else if (k == "estimator") {
        try {
            c.estimator = parse_estimator_kind(detail::trim(v));
        } catch (const Error&) {
            throw Error(ErrorCode::ParseError, where + ": unknown estimator '" + detail::trim(v) + "'");
        }
    } else if (k == "dt") {
        c.dt = num();
    } else if (k == "horizon") {
        c.horizon = num();
    } else if (k == "runs") {
        c.n_runs = count();
    } else if (k == "seed") {
        c.seed = parse_u64(v, where);
    } else if (k == "particles") {
        c.pf_particles = count();
    } else if (k == "pendulum.l") {
        c.params.pendulum.l = num();
    } else if (k == "pendulum.m") {
        c.params.pendulum.m = num();
    } else if (k == "pendulum.k") {
        c.params.pendulum.k = num();
    } else if (k == "pendulum.g") {
        c.params.pendulum.g = num();
    } else if (k == "vdp.mu") {
        c.params.vdp.mu = num();
    } else if (k == "noise.Qd") {
        c.noise.Qd = parse_matrix(v, where);
    } else if (k == "noise.Rn") {
        c.noise.Rn = parse_matrix(v, where);
    } else if (k == "sdre_kf.Qd") {
        c.sdre_kf_noise.Qd = parse_matrix(v, where);
    } else if (k == "sdre_kf.Rn") {
        c.sdre_kf_noise.Rn = parse_matrix(v, where);
    } else if (k == "ekf.Qd") {
        c.ekf_noise.Qd = parse_matrix(v, where);
    } else if (k == "ekf.Rn") {
        c.ekf_noise.Rn = parse_matrix(v, where);
    } else if (k == "truth.Qd") {
        c.truth_noise.Qd = parse_matrix(v, where);
    } else if (k == "truth.Rn") {
        c.truth_noise.Rn = parse_matrix(v, where);
    } else if (k == "controller.Qw") {
        c.controller.Qw = parse_matrix(v, where);
    } else if (k == "controller.Rw") {
        c.controller.Rw = parse_matrix(v, where);
    } else if (k == "controller.care_tol") {
        c.controller.care_tol = num();
    } else if (k == "controller.rank_tol") {
        c.controller.rank_tol = num();
    } else if (k == "x0") {
        c.x0 = parse_vector(v, where);
    } else if (k == "x0_hat") {
        c.x0_hat = parse_vector(v, where);
    } else if (k == "P0") {
        c.P0 = parse_matrix(v, where);
    } else if (k == "random_x0") {
        c.random_x0 = parse_bool(v, where);
    } else if (k == "control_from_truth") {
        c.control_from_truth = parse_bool(v, where);
    } else {
        throw Error(ErrorCode::ParseError, e.origin + ": unknown key '" + k + "'");
    }
}

inline std::vector<ConfigEntry> parse_config_text(std::string_view text, const std::string& source) {
    std::vector<ConfigEntry> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        const std::string origin = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw Error(ErrorCode::ParseError, origin + ": expected 'key = value'");
        ConfigEntry e{detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)), origin};
        if (e.key.empty())
            throw Error(ErrorCode::ParseError, origin + ": empty key");
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<ConfigEntry> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw Error(ErrorCode::IoError, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

/// Builds a validated SimConfig from file entries and flag overrides.
/// The base is the preset named by `preset` (flags win over the file), else
/// the reference preset of the requested model, else pendulum-paper.
inline SimConfig build_config(const std::vector<ConfigEntry>& file_entries,
                              const std::vector<ConfigEntry>& flag_entries) {
    auto find = [](const std::vector<ConfigEntry>& es, std::string_view key) -> const ConfigEntry* {
        const ConfigEntry* hit = nullptr;
        for (const auto& e : es)
            if (e.key == key)
                hit = &e;
        return hit;
    };
    std::string base = "pendulum-paper";
    if (const auto* p = find(flag_entries, "preset"))
        base = p->value;
    else if (const auto* p2 = find(file_entries, "preset"))
        base = p2->value;
    else if (const auto* m = find(flag_entries, "model"))
        base = preset_for_model(m->value);
    else if (const auto* m2 = find(file_entries, "model"))
        base = preset_for_model(m2->value);

    SimConfig c = preset(base);
    for (const auto& e : file_entries)
        apply_entry(c, e);
    for (const auto& e : flag_entries)
        apply_entry(c, e);
    c.validate();
    return c;
}

inline SimConfig parse_config(const std::string& path, const std::vector<ConfigEntry>& flag_entries = {}) {
    return build_config(path.empty() ? std::vector<ConfigEntry>{} : read_config_file(path), flag_entries);
}

/// Manifest text: every SimConfig field at full precision plus the version.
/// Feeding it back through parse_config_text/build_config yields the same config.
inline std::string emit_manifest(const SimConfig& c, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::ostringstream o;
    o << "artifact_version = " << kArtifactVersion << "\n";
    o << "model = " << c.model_name << "\n";
    o << "estimator = " << to_string(c.estimator) << "\n";
    o << "dt = " << format_double(c.dt) << "\n";
    o << "horizon = " << format_double(c.horizon) << "\n";
    o << "runs = " << c.n_runs << "\n";
    o << "seed = " << c.seed << "\n";
    o << "particles = " << c.pf_particles << "\n";
    o << "pendulum.l = " << format_double(c.params.pendulum.l) << "\n";
    o << "pendulum.m = " << format_double(c.params.pendulum.m) << "\n";
    o << "pendulum.k = " << format_double(c.params.pendulum.k) << "\n";
    o << "pendulum.g = " << format_double(c.params.pendulum.g) << "\n";
    o << "vdp.mu = " << format_double(c.params.vdp.mu) << "\n";
    o << "noise.Qd = " << format_matrix(c.noise.Qd) << "\n";
    o << "noise.Rn = " << format_matrix(c.noise.Rn) << "\n";
    o << "sdre_kf.Qd = " << format_matrix(c.sdre_kf_noise.Qd) << "\n";
    o << "sdre_kf.Rn = " << format_matrix(c.sdre_kf_noise.Rn) << "\n";
    o << "ekf.Qd = " << format_matrix(c.ekf_noise.Qd) << "\n";
    o << "ekf.Rn = " << format_matrix(c.ekf_noise.Rn) << "\n";
    o << "truth.Qd = " << format_matrix(c.truth_noise.Qd) << "\n";
    o << "truth.Rn = " << format_matrix(c.truth_noise.Rn) << "\n";
    o << "controller.Qw = " << format_matrix(c.controller.Qw) << "\n";
    o << "controller.Rw = " << format_matrix(c.controller.Rw) << "\n";
    o << "controller.care_tol = " << format_double(c.controller.care_tol) << "\n";
    o << "controller.rank_tol = " << format_double(c.controller.rank_tol) << "\n";
    o << "x0 = " << format_vector(c.x0) << "\n";
    o << "x0_hat = " << format_vector(c.x0_hat) << "\n";
    o << "P0 = " << format_matrix(c.P0) << "\n";
    o << "random_x0 = " << (c.random_x0 ? "true" : "false") << "\n";
    o << "control_from_truth = " << (c.control_from_truth ? "true" : "false") << "\n";
    for (const auto& [k, v] : extra)
        o << "# " << k << " = " << v << "\n";
    return o.str();
}

inline bool same_config(const SimConfig& a, const SimConfig& b) {
    auto eqm = [](const Mat& x, const Mat& y) { return x.rows() == y.rows() && x.cols() == y.cols() && x == y; };
    return a.model_name == b.model_name && a.estimator == b.estimator && a.dt == b.dt && a.horizon == b.horizon &&
           a.n_runs == b.n_runs && a.seed == b.seed && a.pf_particles == b.pf_particles &&
           a.params.pendulum.l == b.params.pendulum.l && a.params.pendulum.m == b.params.pendulum.m &&
           a.params.pendulum.k == b.params.pendulum.k && a.params.pendulum.g == b.params.pendulum.g &&
           a.params.vdp.mu == b.params.vdp.mu && eqm(a.noise.Qd, b.noise.Qd) && eqm(a.noise.Rn, b.noise.Rn) &&
           eqm(a.sdre_kf_noise.Qd, b.sdre_kf_noise.Qd) && eqm(a.sdre_kf_noise.Rn, b.sdre_kf_noise.Rn) &&
           eqm(a.ekf_noise.Qd, b.ekf_noise.Qd) && eqm(a.ekf_noise.Rn, b.ekf_noise.Rn) &&
           eqm(a.truth_noise.Qd, b.truth_noise.Qd) && eqm(a.truth_noise.Rn, b.truth_noise.Rn) &&
           eqm(a.controller.Qw, b.controller.Qw) && eqm(a.controller.Rw, b.controller.Rw) &&
           a.controller.care_tol == b.controller.care_tol && a.controller.rank_tol == b.controller.rank_tol &&
           eqm(a.x0, b.x0) && eqm(a.x0_hat, b.x0_hat) && eqm(a.P0, b.P0) && a.random_x0 == b.random_x0 &&
           a.control_from_truth == b.control_from_truth;
}

} // namespace sdre
