#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

#include "mmica/rng.hpp"
#include "mmica/symlin.hpp"

namespace mmica {

/// Observations X (p x n, one sample per column) with an optional known
/// mixing matrix.
struct Dataset {
    Matrix X;
    std::optional<Matrix> mixing;

    Index dim() const { return X.rows(); }
    Index size() const { return X.cols(); }
};

// Checks p >= 2, n >= 1 and finiteness; throws FormatError otherwise.
void validate_dataset(const Dataset& data);

/// X = A S with S i.i.d. Laplace(0, 1) (density e^{-|x|} / 2) and A i.i.d.
/// standard normal. Sources are drawn sample by sample, so for a fixed seed a
/// larger n extends the same sequence.
Dataset gen_laplace_mixture(Index p, Index n, std::uint64_t seed);

// Inverse-CDF Laplace(0, 1) draw.
double laplace_draw(Rng& rng);

enum class SubsampleMode { first, random };

std::vector<Index> subsample_columns(Index n, Index m, SubsampleMode mode, Rng& rng);

struct WhiteningMatrix {
    Matrix W0;
    Matrix covariance; // the subsample covariance W0 was built from
};

// C^{-1/2} through a symmetric eigendecomposition. RankDeficient when an
// eigenvalue falls below 1e-12 times the largest.
Matrix inverse_sqrt_spd(const Matrix& C);

/// W0 = C^{-1/2} with C = (1/m) X_sub X_sub^T over m = min(n, subsample_size)
/// columns. `first` takes the leading columns (streaming); `random` draws
/// them uniformly without replacement (finite sum).
WhiteningMatrix whiten_init(const Matrix& X, Index subsample_size = 10000,
                            SubsampleMode mode = SubsampleMode::random, std::uint64_t seed = 0);

// ICAD: "ICAD", u32 version 1, u64 p, u64 n, p*n little-endian f64 in
// column-major (sample-contiguous) order, u32 CRC32 of the value bytes.
void save_dataset(const std::filesystem::path& path, const Matrix& X);
Dataset load_dataset(const std::filesystem::path& path);

// ICAM: "ICAM", u32 version 1, u64 rows, u64 cols, row-major f64, u32 CRC32.
void save_matrix(const std::filesystem::path& path, const Matrix& M);
Matrix load_matrix(const std::filesystem::path& path);

// First line "p,n"; then n lines of p comma-separated values, one sample per line.
Dataset load_csv(const std::filesystem::path& path);

/// Source of p-dimensional samples for the online solvers.
class SampleStream {
public:
    virtual ~SampleStream() = default;
    virtual Index dim() const = 0;
    // Writes up to out.cols() samples into the leading columns of `out` and
    // returns how many were written; 0 means the stream is exhausted.
    virtual Index fetch(Matrix& out) = 0;
};

// Streams the columns of an in-memory matrix, optionally wrapping around.
class MatrixStream final : public SampleStream {
public:
    MatrixStream(const Matrix& X, bool cycle = false) : X_(X), cycle_(cycle) {}
    Index dim() const override { return X_.rows(); }
    Index fetch(Matrix& out) override;

private:
    const Matrix& X_;
    bool cycle_;
    Index next_ = 0;
};

// Sequential reader over an ICAD file; verifies the checksum on reaching the end.
class IcadStream final : public SampleStream {
public:
    explicit IcadStream(const std::filesystem::path& path);
    Index dim() const override { return p_; }
    Index size() const { return n_; }
    Index fetch(Matrix& out) override;

private:
    std::ifstream in_;
    Index p_ = 0;
    Index n_ = 0;
    Index read_ = 0;
    unsigned long crc_ = 0;
};

} // namespace mmica
