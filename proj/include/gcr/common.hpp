#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcr {

// Row-major so that one sample per row is contiguous in memory.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy; the CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IngestionError : std::runtime_error {
    explicit IngestionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename E>
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw E(msg);
}

// Seedable RNG with derived sub-streams, so independent consumers (episode
// sampling, eval episodes, augmenters) never share one sequence.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    // Uniform on (0, 1]: complements uniform()'s half-open [0, 1).
    double uniform_pos() { return 1.0 - uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(std::uniform_int_distribution<long>(0, n - 1)(engine_)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    // k distinct indices drawn uniformly from [0, n), partial Fisher-Yates.
    std::vector<int> sample_indices(int n, int k);

    // Independent sub-stream keyed on (root seed, tag). Same tag always maps
    // to the same stream regardless of how far this stream has advanced, so
    // parallel consumers are order-independent.
    Rng derive(std::uint64_t tag) const;

    std::uint64_t seed() const { return seed_; }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void restore(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
        if (!is) throw ContractError("rng: malformed serialized state");
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace gcr
