#pragma once

#include <cstdint>
#include <random>

#include "sdre/numerics.hpp"

namespace sdre {

/// Independent purposes a run draws randomness for. Keeping them in separate
/// streams means truth/measurement noise is identical across estimators for
/// the same (seed, run index).
enum class StreamRole : std::uint64_t {
    ProcessNoise = 1,
    MeasurementNoise = 2,
    Estimator = 3,
    InitialState = 4,
};

constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t run_index, StreamRole role) {
    std::uint64_t s = splitmix64(root);
    s = splitmix64(s ^ splitmix64(run_index + 0x632be59bd9b4e019ULL));
    return splitmix64(s ^ static_cast<std::uint64_t>(role));
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}
    RngStream(std::uint64_t root, std::uint64_t run_index, StreamRole role)
        : engine_(derive_seed(root, run_index, role)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    Vec normal_vec(Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(i) = normal();
        return v;
    }

    /// Draw from N(0, L L^T) given the factor L.
    Vec gaussian(const Mat& L) { return L * normal_vec(L.cols()); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace sdre
