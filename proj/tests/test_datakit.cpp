#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mmica/datakit.hpp"
#include "mmica/errors.hpp"
#include "support.hpp"

using namespace mmica;
using namespace mmica::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mmica_datakit_test";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
}

} // namespace

TEST_CASE("gen_laplace_mixture is deterministic and prefix-stable") {
    const Dataset a = gen_laplace_mixture(4, 500, 7);
    const Dataset b = gen_laplace_mixture(4, 500, 7);
    CHECK(a.X == b.X);
    CHECK(*a.mixing == *b.mixing);
    const Dataset longer = gen_laplace_mixture(4, 800, 7);
    CHECK(longer.X.leftCols(500) == a.X);
    CHECK(gen_laplace_mixture(4, 500, 8).X != a.X);
    CHECK_THROWS_AS(gen_laplace_mixture(1, 10, 0), InvalidConfig);
    CHECK_THROWS_AS(gen_laplace_mixture(3, 0, 0), InvalidConfig);
}

TEST_CASE("Laplace sources: variance 2 and positive excess kurtosis") {
    const Dataset d = gen_laplace_mixture(3, 100000, 11);
    const Matrix S = d.mixing->inverse() * d.X;
    for (Index i = 0; i < 3; ++i) {
        const Eigen::ArrayXd s = S.row(i).array();
        const double mean = s.mean();
        const double var = (s - mean).square().mean();
        const double kurt = (s - mean).pow(4).mean() / (var * var) - 3.0;
        CHECK(std::abs(var - 2.0) <= 0.1);
        CHECK(kurt > 0.0);
        CHECK(kurt == doctest::Approx(3.0).epsilon(0.25));
    }
}

TEST_CASE("mixing matrices are well conditioned enough") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Matrix A = *gen_laplace_mixture(5, 1, seed).mixing;
        CHECK(std::abs(A.determinant()) >= 1e-6 * A.rowwise().norm().prod());
    }
}

TEST_CASE("whiten_init examples") {
    // Columns +-e_k scaled so the covariance is exactly diag(4, 1).
    const Matrix X{{2.0, -2.0, 0.0, 0.0}, {0.0, 0.0, std::sqrt(2.0), -std::sqrt(2.0)}};
    const WhiteningMatrix w = whiten_init(X, 10000);
    CHECK(max_abs(w.covariance - Matrix{{2.0, 0.0}, {0.0, 1.0}}) <= 1e-15);
    CHECK(max_abs(w.W0 - Matrix{{1.0 / std::sqrt(2.0), 0.0}, {0.0, 1.0}}) <= 1e-15);

    const Matrix Y{{2.0, -2.0, 2.0, -2.0}, {1.0, -1.0, -1.0, 1.0}};
    CHECK(max_abs(whiten_init(Y).W0 - Matrix{{0.5, 0.0}, {0.0, 1.0}}) <= 1e-15);

    const Matrix Z{{1.0, -1.0, 1.0, -1.0}, {1.0, -1.0, -1.0, 1.0}};
    CHECK(max_abs(whiten_init(Z).W0 - Matrix::Identity(2, 2)) <= 1e-15);
}

TEST_CASE("whitening property and idempotence") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Index p = 2 + trial % 5;
        const Matrix X = random_invertible(rng, p) * random_laplace(rng, p, 3000);
        for (const SubsampleMode mode : {SubsampleMode::random, SubsampleMode::first}) {
            const WhiteningMatrix w = whiten_init(X, 1000, mode, 42);
            CHECK(max_abs(w.W0 * w.covariance * w.W0.transpose() - Matrix::Identity(p, p)) <= 1e-8);
            // Same seed means the same subsample columns.
            CHECK(max_abs(whiten_init(w.W0 * X, 1000, mode, 42).W0 - Matrix::Identity(p, p)) <= 1e-6);
        }
    }
}

TEST_CASE("subsample columns") {
    Rng rng(4);
    const auto first = subsample_columns(100, 10, SubsampleMode::first, rng);
    CHECK(first.front() == 0);
    CHECK(first.back() == 9);
    const auto random = subsample_columns(100, 10, SubsampleMode::random, rng);
    CHECK(random.size() == 10);
    CHECK(std::is_sorted(random.begin(), random.end()));
    CHECK(std::adjacent_find(random.begin(), random.end()) == random.end());
    CHECK(subsample_columns(5, 10, SubsampleMode::random, rng).size() == 5);
}

TEST_CASE("whiten_init errors") {
    Matrix X = Matrix::Zero(3, 50);
    X.row(0).setOnes();
    X.row(1).setConstant(2.0);
    CHECK_THROWS_AS(whiten_init(X), RankDeficient);
    CHECK_THROWS_AS(whiten_init(Matrix::Identity(3, 3), 2), InvalidConfig);
}

TEST_CASE("ICAD and ICAM round trips") {
    const Dataset d = gen_laplace_mixture(3, 257, 5);
    const fs::path data = scratch("d.icad");
    const fs::path mix = scratch("a.icam");
    save_dataset(data, d.X);
    save_matrix(mix, *d.mixing);
    CHECK(load_dataset(data).X == d.X);
    CHECK(load_matrix(mix) == *d.mixing);

    Matrix nonsquare(2, 3);
    nonsquare << 1, 2, 3, 4, 5, 6;
    save_matrix(mix, nonsquare);
    CHECK(load_matrix(mix) == nonsquare);
}

TEST_CASE("ICAD byte layout") {
    Matrix X(2, 2);
    X << 1.0, 2.0, 3.0, 4.0;
    const fs::path p = scratch("layout.icad");
    save_dataset(p, X);
    const std::string bytes = slurp(p);
    REQUIRE(bytes.size() == 4 + 4 + 8 + 8 + 32 + 4);
    CHECK(bytes.substr(0, 4) == "ICAD");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    CHECK(version == 1);
    double first[4];
    std::memcpy(first, bytes.data() + 24, 32);
    // column-major: sample 0 is (1, 3)
    CHECK(first[0] == 1.0);
    CHECK(first[1] == 3.0);
    CHECK(first[2] == 2.0);

    save_matrix(p, X);
    std::memcpy(first, slurp(p).data() + 24, 32);
    CHECK(first[1] == 2.0); // row-major
}

TEST_CASE("corrupted files") {
    const Dataset d = gen_laplace_mixture(2, 10, 1);
    const fs::path p = scratch("bad.icad");
    save_dataset(p, d.X);
    const std::string good = slurp(p);

    spit(p, good.substr(0, good.size() - 9));
    CHECK_THROWS_AS(load_dataset(p), FormatError);
    spit(p, good.substr(0, 10));
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    std::string magic = good;
    magic[0] = 'X';
    spit(p, magic);
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    std::string version = good;
    version[4] = 2;
    spit(p, version);
    CHECK_THROWS_AS(load_dataset(p), FormatError);

    std::string flipped = good;
    flipped[30] ^= 0x01;
    spit(p, flipped);
    CHECK_THROWS_AS(load_dataset(p), ChecksumError);

    spit(p, good);
    CHECK_THROWS_AS(load_matrix(p), FormatError); // ICAD is not ICAM
    CHECK_THROWS_AS(load_dataset(scratch("missing.icad")), IoError);
}

TEST_CASE("CSV import") {
    const fs::path p = scratch("d.csv");
    spit(p, "2,3\n1,2\n3,4\n5,6\n");
    const Dataset d = load_csv(p);
    CHECK(d.X == Matrix{{1.0, 3.0, 5.0}, {2.0, 4.0, 6.0}});
    spit(p, "2,3\n1,2\n3\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
    spit(p, "2,2\n1,abc\n3,4\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
    spit(p, "x\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
}

TEST_CASE("validate_dataset") {
    Dataset d{Matrix::Ones(2, 3), std::nullopt};
    CHECK_NOTHROW(validate_dataset(d));
    d.X(0, 1) = NAN;
    CHECK_THROWS_AS(validate_dataset(d), FormatError);
    Dataset one{Matrix::Ones(1, 3), std::nullopt};
    CHECK_THROWS_AS(validate_dataset(one), FormatError);
    Dataset mismatch{Matrix::Ones(2, 3), Matrix::Identity(3, 3)};
    CHECK_THROWS_AS(validate_dataset(mismatch), FormatError);
}

TEST_CASE("streams") {
    const Dataset d = gen_laplace_mixture(3, 25, 9);
    MatrixStream once(d.X);
    Matrix buf(3, 10);
    CHECK(once.fetch(buf) == 10);
    CHECK(buf == d.X.leftCols(10));
    CHECK(once.fetch(buf) == 10);
    CHECK(once.fetch(buf) == 5);
    CHECK(buf.leftCols(5) == d.X.rightCols(5));
    CHECK(once.fetch(buf) == 0);

    MatrixStream cycling(d.X, true);
    Matrix big(3, 30);
    CHECK(cycling.fetch(big) == 30);
    CHECK(big.rightCols(5) == d.X.leftCols(5));

    const fs::path p = scratch("stream.icad");
    save_dataset(p, d.X);
    IcadStream file(p);
    CHECK(file.dim() == 3);
    CHECK(file.size() == 25);
    Matrix all(3, 25);
    Matrix part(3, 7);
    Index got = 0;
    for (Index k; (k = file.fetch(part)) > 0; got += k) all.middleCols(got, k) = part.leftCols(k);
    CHECK(got == 25);
    CHECK(all == d.X);

    std::string bytes = slurp(p);
    bytes[40] ^= 0x10;
    spit(p, bytes);
    IcadStream corrupt(p);
    Matrix sink(3, 100);
    CHECK_THROWS_AS(corrupt.fetch(sink), ChecksumError);
}
