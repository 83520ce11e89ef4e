#include "mmica/datakit.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>

#include <zlib.h>

#include "mmica/errors.hpp"

namespace mmica {

void validate_dataset(const Dataset& data) {
    if (data.dim() < 2) throw FormatError("dataset needs p >= 2, got p = " + std::to_string(data.dim()));
    if (data.size() < 1) throw FormatError("dataset is empty");
    if (!data.X.allFinite()) throw FormatError("dataset contains non-finite values");
    if (data.mixing && (data.mixing->rows() != data.dim() || data.mixing->cols() != data.dim())) {
        throw FormatError("mixing matrix shape does not match dataset dimension");
    }
}

double laplace_draw(Rng& rng) {
    const double v = rng.uniform_open() - 0.5;
    const double mag = -std::log1p(-2.0 * std::abs(v));
    return v < 0.0 ? -mag : mag;
}

Dataset gen_laplace_mixture(Index p, Index n, std::uint64_t seed) {
    if (p < 2) throw InvalidConfig("gen_laplace_mixture: p must be >= 2");
    if (n < 1) throw InvalidConfig("gen_laplace_mixture: n must be >= 1");
    const Rng root(seed);

    Rng mixing_rng = root.split(streams::mixing);
    Matrix A(p, p);
    for (;;) {
        for (Index i = 0; i < p; ++i) {
            for (Index j = 0; j < p; ++j) A(i, j) = mixing_rng.normal();
        }
        // Hadamard: |det A| <= prod of row norms.
        const double bound = A.rowwise().norm().prod();
        if (std::abs(A.determinant()) >= 1e-6 * bound) break;
    }

    Rng source_rng = root.split(streams::sources);
    Matrix S(p, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < p; ++i) S(i, j) = laplace_draw(source_rng);
    }
    return Dataset{A * S, A};
}

std::vector<Index> subsample_columns(Index n, Index m, SubsampleMode mode, Rng& rng) {
    m = std::min(m, n);
    std::vector<Index> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), Index{0});
    if (mode == SubsampleMode::first || m == n) {
        cols.resize(static_cast<std::size_t>(m));
        return cols;
    }
    // Partial Fisher-Yates, then sort so accumulation order is stable.
    for (Index k = 0; k < m; ++k) {
        const auto pick = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - k)));
        std::swap(cols[static_cast<std::size_t>(k)], cols[static_cast<std::size_t>(pick)]);
    }
    cols.resize(static_cast<std::size_t>(m));
    std::sort(cols.begin(), cols.end());
    return cols;
}

Matrix inverse_sqrt_spd(const Matrix& C) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
    if (eig.info() != Eigen::Success) throw RankDeficient("whitening: eigendecomposition failed");
    const Vector& lambda = eig.eigenvalues();
    const double top = lambda.maxCoeff();
    if (!(top > 0.0) || lambda.minCoeff() < 1e-12 * top) {
        throw RankDeficient("whitening: covariance is rank deficient (min eigenvalue " +
                            std::to_string(lambda.minCoeff()) + ", max " + std::to_string(top) + ")");
    }
    const Matrix& V = eig.eigenvectors();
    return V * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
}

WhiteningMatrix whiten_init(const Matrix& X, Index subsample_size, SubsampleMode mode, std::uint64_t seed) {
    if (subsample_size < X.rows()) {
        throw InvalidConfig("whiten_init: subsample size must be at least p");
    }
    Rng rng = Rng(seed).split(streams::subsample);
    const auto cols = subsample_columns(X.cols(), subsample_size, mode, rng);
    const Matrix sub = X(Eigen::all, cols);
    const Matrix C = sub * sub.transpose() / static_cast<double>(cols.size());
    return {inverse_sqrt_spd(C), C};
}

// ---------------------------------------------------------------------------
// Binary formats

namespace {

constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::array<unsigned char, sizeof(T)> b;
        std::memcpy(b.data(), &v, sizeof(T));
        std::reverse(b.begin(), b.end());
        std::memcpy(&v, b.data(), sizeof(T));
    }
    return v;
}

template <class T>
void put(std::ostream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(what + ": truncated file");
    return to_little(v);
}

unsigned long crc_update(unsigned long crc, const double* values, std::size_t count) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t k = 0; k < count; ++k) {
            const double le = to_little(values[k]);
            crc = crc32(crc, reinterpret_cast<const Bytef*>(&le), sizeof(double));
        }
        return crc;
    } else {
        return crc32(crc, reinterpret_cast<const Bytef*>(values), static_cast<uInt>(count * sizeof(double)));
    }
}

void write_values(std::ostream& out, const double* values, std::size_t count) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t k = 0; k < count; ++k) put(out, values[k]);
    } else {
        out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * sizeof(double)));
    }
}

void read_values(std::istream& in, double* values, std::size_t count, const std::string& what) {
    if (!in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(count * sizeof(double)))) {
        throw FormatError(what + ": truncated file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t k = 0; k < count; ++k) values[k] = to_little(values[k]);
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

struct Header {
    std::uint64_t rows;
    std::uint64_t cols;
};

Header read_header(std::istream& in, const char (&magic)[5], const std::string& what) {
    std::array<char, 4> got{};
    if (!in.read(got.data(), 4)) throw FormatError(what + ": truncated file");
    if (std::memcmp(got.data(), magic, 4) != 0) throw FormatError(what + ": bad magic bytes");
    const auto version = get<std::uint32_t>(in, what);
    if (version != kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    Header h{get<std::uint64_t>(in, what), get<std::uint64_t>(in, what)};
    // Reject shapes that cannot fit in the remaining bytes before allocating.
    const auto here = in.tellg();
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    const auto available = static_cast<std::uint64_t>(end - here);
    if (h.rows == 0 || h.cols == 0 || h.rows > available / sizeof(double) ||
        h.cols > available / sizeof(double) / h.rows || h.rows * h.cols * sizeof(double) + 4 > available) {
        throw FormatError(what + ": shape " + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                          " inconsistent with file size");
    }
    return h;
}

void write_file(const std::filesystem::path& path, const char (&magic)[5], std::uint64_t rows,
                std::uint64_t cols, const double* values) {
    auto out = open_out(path);
    out.write(magic, 4);
    put(out, kVersion);
    put(out, rows);
    put(out, cols);
    const std::size_t count = rows * cols;
    write_values(out, values, count);
    put(out, static_cast<std::uint32_t>(crc_update(crc32(0L, Z_NULL, 0), values, count)));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void check_crc(std::istream& in, unsigned long crc, const std::string& what) {
    const auto stored = get<std::uint32_t>(in, what);
    if (stored != static_cast<std::uint32_t>(crc)) throw ChecksumError(what + ": checksum mismatch");
}

} // namespace

void save_dataset(const std::filesystem::path& path, const Matrix& X) {
    // Eigen's default column-major layout is already sample-contiguous.
    write_file(path, "ICAD", static_cast<std::uint64_t>(X.rows()), static_cast<std::uint64_t>(X.cols()), X.data());
}

Dataset load_dataset(const std::filesystem::path& path) {
    const std::string what = "ICAD '" + path.string() + "'";
    auto in = open_in(path);
    const Header h = read_header(in, "ICAD", what);
    Dataset data;
    data.X.resize(static_cast<Index>(h.rows), static_cast<Index>(h.cols));
    const std::size_t count = h.rows * h.cols;
    read_values(in, data.X.data(), count, what);
    check_crc(in, crc_update(crc32(0L, Z_NULL, 0), data.X.data(), count), what);
    validate_dataset(data);
    return data;
}

void save_matrix(const std::filesystem::path& path, const Matrix& M) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = M;
    write_file(path, "ICAM", static_cast<std::uint64_t>(M.rows()), static_cast<std::uint64_t>(M.cols()),
               row_major.data());
}

Matrix load_matrix(const std::filesystem::path& path) {
    const std::string what = "ICAM '" + path.string() + "'";
    auto in = open_in(path);
    const Header h = read_header(in, "ICAM", what);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(
        static_cast<Index>(h.rows), static_cast<Index>(h.cols));
    const std::size_t count = h.rows * h.cols;
    read_values(in, row_major.data(), count, what);
    check_crc(in, crc_update(crc32(0L, Z_NULL, 0), row_major.data(), count), what);
    return row_major;
}

Dataset load_csv(const std::filesystem::path& path) {
    const std::string what = "CSV '" + path.string() + "'";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(what + ": missing 'p,n' header");
    long long p = 0;
    long long n = 0;
    char comma = 0;
    std::istringstream header(line);
    if (!(header >> p >> comma >> n) || comma != ',' || p < 1 || n < 1) {
        throw FormatError(what + ": header must be 'p,n' with positive integers");
    }
    Dataset data;
    data.X.resize(p, n);
    for (long long j = 0; j < n; ++j) {
        if (!std::getline(in, line)) throw FormatError(what + ": expected " + std::to_string(n) + " sample rows");
        std::istringstream row(line);
        std::string cell;
        for (long long i = 0; i < p; ++i) {
            if (!std::getline(row, cell, ',')) {
                throw FormatError(what + ": row " + std::to_string(j + 2) + " has fewer than p values");
            }
            try {
                std::size_t used = 0;
                data.X(i, j) = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw FormatError(what + ": bad number '" + cell + "' on row " + std::to_string(j + 2));
            }
        }
    }
    validate_dataset(data);
    return data;
}

// ---------------------------------------------------------------------------
// Streams

Index MatrixStream::fetch(Matrix& out) {
    const Index n = X_.cols();
    Index written = 0;
    while (written < out.cols()) {
        if (next_ == n) {
            if (!cycle_ || n == 0) break;
            next_ = 0;
        }
        const Index take = std::min(out.cols() - written, n - next_);
        out.middleCols(written, take) = X_.middleCols(next_, take);
        written += take;
        next_ += take;
    }
    return written;
}

IcadStream::IcadStream(const std::filesystem::path& path) : in_(open_in(path)) {
    const Header h = read_header(in_, "ICAD", "ICAD '" + path.string() + "'");
    p_ = static_cast<Index>(h.rows);
    n_ = static_cast<Index>(h.cols);
    crc_ = crc32(0L, Z_NULL, 0);
}

Index IcadStream::fetch(Matrix& out) {
    if (out.rows() != p_) throw DimensionMismatch("IcadStream::fetch: buffer has wrong row count");
    const Index take = std::min(out.cols(), n_ - read_);
    if (take <= 0) return 0;
    // out is column-major, so the leading `take` columns are contiguous.
    const auto count = static_cast<std::size_t>(take * p_);
    read_values(in_, out.data(), count, "ICAD stream");
    crc_ = crc_update(crc_, out.data(), count);
    read_ += take;
    if (read_ == n_) check_crc(in_, crc_, "ICAD stream");
    return take;
}

} // namespace mmica
