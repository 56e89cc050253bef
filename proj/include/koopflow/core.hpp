#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace koopflow {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Error hierarchy. Callers that only care about "something failed" catch Error.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Linearization is not Hurwitz: the system is outside the supported class.
class StabilityError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class ResonanceError : public Error {
public:
    using Error::Error;
};

class DiagonalizabilityError : public Error {
public:
    using Error::Error;
};

class UnsupportedSpectrumError : public Error {
public:
    using Error::Error;
};

class DegenerateDataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Seeded 64-bit generator with platform-independent real/integer draws.
/// std:: distributions are implementation-defined, which would break
/// bit-for-bit reproducibility of datasets and training runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r = next();
        while (r >= limit)
            r = next();
        return r % n;
    }

    /// Standard normal via Box-Muller.
    double normal();

private:
    std::uint64_t state_;
};

} // namespace koopflow
