#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cbmfix/errors.hpp"

namespace cbmfix {

/// Dense row-major matrix of doubles.
///
/// Used for every tensor in the pipeline: features, embeddings, concept
/// scores, CBM weights, ledgers. A default-constructed Matrix is 0x0.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Compares the object representation, so -0.0 != 0.0 and equal NaNs match.
bool bit_equal(const Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
double frobenius_norm(const Matrix& m);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
Matrix select_cols(const Matrix& m, std::span<const std::size_t> cols);
Matrix row_matrix(std::span<const double> v);

/// Scales every nonzero row to unit L2 norm; zero rows pass through.
Matrix row_l2_normalize(const Matrix& m);

// ---------------------------------------------------------------------------
// On-disk tensor format.
//
// A tensor is two files: the payload at `path` holding rows*cols little-endian
// f64 values in row-major order, and a JSON sidecar at `path + ".json"`:
//   {"name", "rows", "cols", "dtype": "f64", "endianness": "little",
//    "checksum": <CRC32 of payload>}
// ---------------------------------------------------------------------------

std::filesystem::path sidecar_path(const std::filesystem::path& payload);

std::uint32_t crc32(std::span<const unsigned char> bytes);

void save_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix load_matrix(const std::filesystem::path& path);

// Labels CSV: a header line "index,label" then one "i,y" row per sample.
void save_labels(std::span<const int> labels, const std::filesystem::path& path);
std::vector<int> load_labels(const std::filesystem::path& path);

// Concept lists: UTF-8 text, one concept per line, line number = index.
void save_lines(std::span<const std::string> lines, const std::filesystem::path& path);
std::vector<std::string> load_lines(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cbmfix
